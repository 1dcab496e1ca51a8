#include "patchprobe/optim.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "patchprobe/errors.hpp"

namespace patchprobe {

void Adam::reset(size_t n) {
  m_.assign(n, 0.0);
  v_.assign(n, 0.0);
  t_ = 0;
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
  if (m_.size() != params.size()) reset(params.size());
  if (grad.size() != params.size()) throw InternalError("adam: grad size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, double(t_));
  const double c2 = 1.0 - std::pow(beta2, double(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1 * m_[i] + (1 - beta1) * grad[i];
    v_[i] = beta2 * v_[i] + (1 - beta2) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

bool ConvergenceMonitor::push(double loss) {
  history_.push_back(loss);
  if (int(history_.size()) < 2 * window_) return false;
  double prev = 0, cur = 0;
  size_t n = history_.size();
  for (int i = 0; i < window_; ++i) {
    cur += history_[n - 1 - i];
    prev += history_[n - 1 - window_ - i];
  }
  cur /= window_;
  prev /= window_;
  double denom = std::abs(prev) > 1e-12 ? std::abs(prev) : 1e-12;
  return (prev - cur) / denom < rel_tol_;
}

int default_jobs() {
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 0) jobs = default_jobs();
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace patchprobe

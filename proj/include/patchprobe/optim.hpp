#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace patchprobe {

// Adaptive-moment gradient descent, shared by detector training and all
// patch forging.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(std::vector<double>& params, const std::vector<double>& grad);
  void reset(size_t n);

 private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Relative-improvement early stop over trailing moving averages: stop when
// the mean of the last `window` losses improves on the mean of the window
// before it by less than rel_tol, relatively.
class ConvergenceMonitor {
 public:
  ConvergenceMonitor(int window = 50, double rel_tol = 1e-4)
      : window_(window), rel_tol_(rel_tol) {}

  bool push(double loss);  // returns true when converged

 private:
  int window_;
  double rel_tol_;
  std::vector<double> history_;
};

// Runs fn(0..n-1) on up to `jobs` worker threads. Callers must write results
// by index only; reductions happen after the join, in index order, so output
// never depends on scheduling.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

int default_jobs();

}  // namespace patchprobe

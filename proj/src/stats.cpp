#include "patchprobe/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>

#include "patchprobe/errors.hpp"

namespace patchprobe {

double chi_square_uniform_p(const std::vector<long>& counts) {
  if (counts.size() < 2) throw UserError("chi_square: need at least 2 cells");
  long total = 0;
  for (long c : counts) {
    if (c < 0) throw UserError("chi_square: negative count");
    total += c;
  }
  if (total == 0) throw UserError("chi_square: empty sample");
  double expected = double(total) / double(counts.size());
  double stat = 0;
  for (long c : counts) {
    double d = double(c) - expected;
    stat += d * d / expected;
  }
  boost::math::chi_squared dist(double(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

double median(std::vector<double> values) {
  if (values.empty()) throw UserError("median: empty input");
  std::sort(values.begin(), values.end());
  size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace patchprobe

#pragma once

#include <vector>

namespace patchprobe {

// p-value of the chi-square goodness-of-fit test against a uniform
// distribution over the given cells.
double chi_square_uniform_p(const std::vector<long>& counts);

double median(std::vector<double> values);

}  // namespace patchprobe

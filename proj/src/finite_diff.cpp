#include "metafun/finite_diff.hpp"

#include <algorithm>
#include <cmath>

namespace metafun {

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> params, double h) {
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace metafun

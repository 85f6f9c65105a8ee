#pragma once

#include <functional>
#include <span>
#include <vector>

namespace metafun {

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h for each i.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> params, double h = 1e-5);

/// |a - b| / max(|a|, |b|, floor): relative error with an absolute floor for
/// components whose true value is near zero.
double relative_error(double a, double b, double floor = 1e-4);

}  // namespace metafun

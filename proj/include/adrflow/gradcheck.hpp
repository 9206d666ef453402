#ifndef ADRFLOW_GRADCHECK_HPP
#define ADRFLOW_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>

#include "adrflow/tensor.hpp"

namespace adrflow {

/// Central-difference estimate of the gradient of a scalar function.
template <class F>
Tensor finite_difference_grad(F&& f, const Tensor& x, Real step) {
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + step;
    const Real up = f(std::as_const(probe));
    probe[i] = orig - step;
    const Real down = f(std::as_const(probe));
    probe[i] = orig;
    grad[i] = (up - down) / (2 * step);
  }
  return grad;
}

/// Normwise relative error max|a - b| / max(max|a|, max|b|, floor). Entrywise
/// ratios are dominated by difference round-off on entries near zero, so the
/// error is measured against the tensor's scale.
inline Real max_relative_error(const Tensor& a, const Tensor& b, Real floor = 1e-12) {
  require_same_shape(a, b, "max_relative_error");
  const Real denom = std::max({max_abs(a), max_abs(b), floor});
  return max_abs_diff(a, b) / denom;
}

}  // namespace adrflow

#endif  // ADRFLOW_GRADCHECK_HPP

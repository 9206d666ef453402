#ifndef ADRFLOW_OPS_HPP
#define ADRFLOW_OPS_HPP

#include <algorithm>
#include <cmath>
#include <string>

#include "adrflow/tape.hpp"
#include "adrflow/tensor.hpp"

namespace adrflow {

inline Real sigmoid(Real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

inline Real silu(Real x) { return x * sigmoid(x); }

/// d/dx silu(x) = s(x) (1 + x (1 - s(x))).
inline Real silu_grad(Real x) {
  const Real s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline Real softplus(Real x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Real softplus_inverse(Real y) {
  if (y <= 0) throw NumericError("softplus_inverse: argument must be positive");
  return y > 30 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

enum class ElementwiseOp { Add, Sub, Mul, Scale, Silu, SiluGrad };

inline Real apply(ElementwiseOp op, Real a, Real b) {
  switch (op) {
    case ElementwiseOp::Add: return a + b;
    case ElementwiseOp::Sub: return a - b;
    case ElementwiseOp::Mul:
    case ElementwiseOp::Scale: return a * b;
    case ElementwiseOp::Silu: return silu(a);
    case ElementwiseOp::SiluGrad: return silu_grad(a);
  }
  return 0;
}

inline Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise: shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b[i]);
  return out;
}

inline Tensor elementwise(ElementwiseOp op, const Tensor& a, Real b = 0) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b);
  return out;
}

// Differentiable counterparts. Each records one node on the tape.

inline VarId add(Tape& tape, VarId a, VarId b) {
  return tape.record("add", elementwise(ElementwiseOp::Add, tape.value(a), tape.value(b)),
                     {a, b}, [](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{g, g};
                     });
}

inline VarId sub(Tape& tape, VarId a, VarId b) {
  return tape.record("sub", elementwise(ElementwiseOp::Sub, tape.value(a), tape.value(b)),
                     {a, b}, [](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{g, elementwise(ElementwiseOp::Scale, g, -1.0)};
                     });
}

inline VarId mul(Tape& tape, VarId a, VarId b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  return tape.record("mul", elementwise(ElementwiseOp::Mul, av, bv), {a, b},
                     [av, bv](const Tensor& g, const std::vector<bool>& need) {
                       std::vector<Tensor> out(2);
                       if (need[0]) out[0] = elementwise(ElementwiseOp::Mul, g, bv);
                       if (need[1]) out[1] = elementwise(ElementwiseOp::Mul, g, av);
                       return out;
                     });
}

inline VarId scale(Tape& tape, VarId a, Real s) {
  return tape.record("scale", elementwise(ElementwiseOp::Scale, tape.value(a), s), {a},
                     [s](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{elementwise(ElementwiseOp::Scale, g, s)};
                     });
}

inline VarId silu(Tape& tape, VarId a) {
  const Tensor& av = tape.value(a);
  return tape.record("silu", elementwise(ElementwiseOp::Silu, av), {a},
                     [av](const Tensor& g, const std::vector<bool>&) {
                       Tensor d = elementwise(ElementwiseOp::SiluGrad, av);
                       for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g[i];
                       return std::vector<Tensor>{std::move(d)};
                     });
}

inline VarId softplus(Tape& tape, VarId a) {
  const Tensor& av = tape.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = softplus(av[i]);
  return tape.record("softplus", std::move(out), {a},
                     [av](const Tensor& g, const std::vector<bool>&) {
                       Tensor d(av.shape());
                       for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * sigmoid(av[i]);
                       return std::vector<Tensor>{std::move(d)};
                     });
}

/// Sum of all entries, as a scalar.
inline VarId sum(Tape& tape, VarId a) {
  const Shape shape = tape.value(a).shape();
  return tape.record("sum", Tensor::scalar(sum(tape.value(a))), {a},
                     [shape](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{Tensor(shape, g.item())};
                     });
}

/// Mean of squared differences over all entries.
inline VarId mse(Tape& tape, VarId pred, VarId target) {
  const Tensor& p = tape.value(pred);
  const Tensor& t = tape.value(target);
  require_same_shape(p, t, "mse");
  Tensor diff = elementwise(ElementwiseOp::Sub, p, t);
  const Real n = static_cast<Real>(diff.size());
  Real s = 0;
  for (Real d : diff.data()) s += d * d;
  return tape.record("mse", Tensor::scalar(s / n), {pred, target},
                     [diff, n](const Tensor& g, const std::vector<bool>& need) {
                       std::vector<Tensor> out(2);
                       Tensor d = elementwise(ElementwiseOp::Scale, diff, 2.0 * g.item() / n);
                       if (need[1]) out[1] = elementwise(ElementwiseOp::Scale, d, -1.0);
                       if (need[0]) out[0] = std::move(d);
                       return out;
                     });
}


namespace detail {

// Copies channels [from, from + count) of `src` into `dst` starting at `to`.
inline void copy_channels(const Tensor& src, std::size_t from, std::size_t count, Tensor& dst,
                          std::size_t to) {
  for (std::size_t n = 0; n < src.batch(); ++n)
    for (std::size_t c = 0; c < count; ++c) {
      auto in = src.plane(n, from + c);
      std::copy(in.begin(), in.end(), dst.plane(n, to + c).begin());
    }
}

}  // namespace detail

/// Channels [begin, begin + count) of a grid batch.
inline VarId channel_slice(Tape& tape, VarId a, std::size_t begin, std::size_t count) {
  const Tensor& av = tape.value(a);
  if (begin + count > av.channels() || count == 0) {
    throw ShapeError("channel_slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + av.shape().str());
  }
  Tensor out = grid(av.batch(), count, av.height(), av.width());
  detail::copy_channels(av, begin, count, out, 0);
  const Shape shape = av.shape();
  return tape.record("channel_slice", std::move(out), {a},
                     [shape, begin, count](const Tensor& g, const std::vector<bool>&) {
                       Tensor d(shape);
                       detail::copy_channels(g, 0, count, d, begin);
                       return std::vector<Tensor>{std::move(d)};
                     });
}

/// Stacks b's channels after a's.
inline VarId channel_concat(Tape& tape, VarId a, VarId b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.batch() != bv.batch() || av.height() != bv.height() || av.width() != bv.width()) {
    throw ShapeError("channel_concat: " + av.shape().str() + " vs " + bv.shape().str());
  }
  const std::size_t ca = av.channels(), cb = bv.channels();
  Tensor out = grid(av.batch(), ca + cb, av.height(), av.width());
  detail::copy_channels(av, 0, ca, out, 0);
  detail::copy_channels(bv, 0, cb, out, ca);
  return tape.record("channel_concat", std::move(out), {a, b},
                     [ca, cb](const Tensor& g, const std::vector<bool>& need) {
                       std::vector<Tensor> out(2);
                       if (need[0]) {
                         out[0] = grid(g.batch(), ca, g.height(), g.width());
                         detail::copy_channels(g, 0, ca, out[0], 0);
                       }
                       if (need[1]) {
                         out[1] = grid(g.batch(), cb, g.height(), g.width());
                         detail::copy_channels(g, ca, cb, out[1], 0);
                       }
                       return out;
                     });
}

}  // namespace adrflow

#endif  // ADRFLOW_OPS_HPP

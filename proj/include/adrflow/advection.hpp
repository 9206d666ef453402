#ifndef ADRFLOW_ADVECTION_HPP
#define ADRFLOW_ADVECTION_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include "adrflow/tape.hpp"
#include "adrflow/tensor.hpp"

namespace adrflow {

/// Per-channel displacements in pixel units: shape [batch][2c][H][W] with
/// channel 2k holding the row offset and 2k+1 the column offset of feature
/// channel k. A field with exactly two channels is shared by every feature
/// channel.
using DisplacementField = Tensor;

/// Mass splats each pixel forward to x + U(x); Color gathers the value found
/// at x + U(x). The two are exact transposes of each other for the same U.
enum class PushMode { Mass, Color };

inline std::string_view to_string(PushMode m) { return m == PushMode::Mass ? "mass" : "color"; }

inline PushMode parse_push_mode(std::string_view s) {
  if (s == "mass") return PushMode::Mass;
  if (s == "color") return PushMode::Color;
  throw Error("unknown push mode '" + std::string(s) + "' (expected mass|color)");
}

namespace detail {

// Four-neighbour bilinear stencil around a point clamped to the grid.
struct Stencil {
  std::size_t r0, r1, c0, c1;
  Real fr, fc;
  // false where the coordinate was clamped (zero derivative there)
  bool row_free, col_free;

  Real w00() const { return (1 - fr) * (1 - fc); }
  Real w01() const { return (1 - fr) * fc; }
  Real w10() const { return fr * (1 - fc); }
  Real w11() const { return fr * fc; }
};

inline void axis(Real p, std::size_t n, std::size_t& i0, std::size_t& i1, Real& f, bool& free) {
  const Real hi = static_cast<Real>(n - 1);
  free = p > 0 && p < hi;
  const Real q = std::clamp(p, Real{0}, hi);
  i0 = std::min(static_cast<std::size_t>(std::floor(q)), n - 1);
  i1 = std::min(i0 + 1, n - 1);
  f = q - static_cast<Real>(i0);
}

inline Stencil stencil(Real pr, Real pc, std::size_t h, std::size_t w) {
  Stencil s{};
  axis(pr, h, s.r0, s.r1, s.fr, s.row_free);
  axis(pc, w, s.c0, s.c1, s.fc, s.col_free);
  return s;
}

struct Sample {
  Real value, d_row, d_col;
};

inline Sample sample(std::span<const Real> img, std::size_t w, const Stencil& s) {
  const Real a = img[s.r0 * w + s.c0], b = img[s.r0 * w + s.c1];
  const Real c = img[s.r1 * w + s.c0], d = img[s.r1 * w + s.c1];
  Sample out;
  out.value = s.w00() * a + s.w01() * b + s.w10() * c + s.w11() * d;
  out.d_row = s.row_free ? (1 - s.fc) * (c - a) + s.fc * (d - b) : 0;
  out.d_col = s.col_free ? (1 - s.fr) * (b - a) + s.fr * (d - c) : 0;
  return out;
}

inline void splat(std::span<Real> img, std::size_t w, const Stencil& s, Real v) {
  img[s.r0 * w + s.c0] += s.w00() * v;
  img[s.r0 * w + s.c1] += s.w01() * v;
  img[s.r1 * w + s.c0] += s.w10() * v;
  img[s.r1 * w + s.c1] += s.w11() * v;
}

inline std::size_t flow_pair(const Tensor& u, std::size_t c) {
  return u.channels() == 2 ? 0 : c;
}

inline void check_push_shapes(const Tensor& field, const Tensor& u, const char* what) {
  require_grid(field, what);
  require_grid(u, what);
  const bool channels_ok = u.channels() == 2 * field.channels() || u.channels() == 2;
  if (!channels_ok || u.batch() != field.batch() || u.height() != field.height() ||
      u.width() != field.width()) {
    throw ShapeError(std::string(what) + ": displacement shape " + u.shape().str() +
                     " incompatible with field shape " + field.shape().str());
  }
}

// Visits every (sample, channel, pixel) with its stencil.
template <class F>
void for_each_stencil(const Tensor& field, const Tensor& u, F&& f) {
  const std::size_t h = field.height(), w = field.width();
  for (std::size_t n = 0; n < field.batch(); ++n) {
    for (std::size_t c = 0; c < field.channels(); ++c) {
      const std::size_t k = flow_pair(u, c);
      auto u1 = u.plane(n, 2 * k);
      auto u2 = u.plane(n, 2 * k + 1);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
          const std::size_t x = r * w + col;
          f(n, c, x, stencil(static_cast<Real>(r) + u1[x], static_cast<Real>(col) + u2[x], h, w));
        }
      }
    }
  }
}

}  // namespace detail

/// Backward-gather transport: output(x) = bilinear sample of I at x + U(x),
/// sample point clamped to the grid.
inline Tensor push_color(const Tensor& field, const DisplacementField& u) {
  detail::check_push_shapes(field, u, "push_color");
  Tensor out(field.shape());
  const std::size_t w = field.width();
  detail::for_each_stencil(field, u, [&](std::size_t n, std::size_t c, std::size_t x,
                                         const detail::Stencil& s) {
    out.plane(n, c)[x] = detail::sample(field.plane(n, c), w, s).value;
  });
  return out;
}

/// Forward-splat transport: each pixel's value is spread over the four grid
/// neighbours of x + U(x) with bilinear weights. Destinations are clamped, so
/// per-channel sums are conserved.
inline Tensor push_mass(const Tensor& field, const DisplacementField& u) {
  detail::check_push_shapes(field, u, "push_mass");
  Tensor out(field.shape());
  const std::size_t w = field.width();
  detail::for_each_stencil(field, u, [&](std::size_t n, std::size_t c, std::size_t x,
                                         const detail::Stencil& s) {
    detail::splat(out.plane(n, c), w, s, field.plane(n, c)[x]);
  });
  return out;
}

inline Tensor push(PushMode mode, const Tensor& field, const DisplacementField& u) {
  return mode == PushMode::Mass ? push_mass(field, u) : push_color(field, u);
}

namespace detail {

// d(<g, push(I,U)>)/dU. For Color the derivative is taken of I at the sample
// point; for Mass of the cotangent g at the destination point.
inline Tensor push_flow_grad(PushMode mode, const Tensor& field, const Tensor& u,
                             const Tensor& g) {
  Tensor du(u.shape());
  const std::size_t w = field.width();
  for_each_stencil(field, u, [&](std::size_t n, std::size_t c, std::size_t x,
                                 const Stencil& s) {
    const std::size_t k = flow_pair(u, c);
    Real weight;
    Sample smp;
    if (mode == PushMode::Color) {
      weight = g.plane(n, c)[x];
      smp = sample(field.plane(n, c), w, s);
    } else {
      weight = field.plane(n, c)[x];
      smp = sample(g.plane(n, c), w, s);
    }
    du.plane(n, 2 * k)[x] += weight * smp.d_row;
    du.plane(n, 2 * k + 1)[x] += weight * smp.d_col;
  });
  return du;
}

}  // namespace detail

/// Differentiable push; gradients flow to both the field and the displacement.
inline VarId push(Tape& tape, PushMode mode, VarId field, VarId u) {
  const Tensor& iv = tape.value(field);
  const Tensor& uv = tape.value(u);
  Tensor out = push(mode, iv, uv);
  return tape.record(mode == PushMode::Mass ? "push_mass" : "push_color", std::move(out),
                     {field, u},
                     [mode, iv, uv](const Tensor& g, const std::vector<bool>& need) {
                       std::vector<Tensor> grads(2);
                       // the two modes are adjoint: each one's field gradient is the other
                       if (need[0]) {
                         grads[0] = mode == PushMode::Mass ? push_color(g, uv) : push_mass(g, uv);
                       }
                       if (need[1]) grads[1] = detail::push_flow_grad(mode, iv, uv, g);
                       return grads;
                     });
}

inline VarId push_color(Tape& tape, VarId field, VarId u) {
  return push(tape, PushMode::Color, field, u);
}
inline VarId push_mass(Tape& tape, VarId field, VarId u) {
  return push(tape, PushMode::Mass, field, u);
}

inline constexpr std::size_t kMaxDensePixels = 4096;

/// Dense HW x HW matrix M with flatten(push(I)) = M flatten(I) for one channel
/// of sample 0. Columns are obtained by pushing unit impulses through the
/// operator itself, so the Mass and Color matrices come from independent code.
inline Tensor assemble_push_matrix(const DisplacementField& u, PushMode mode,
                                   std::size_t channel) {
  require_grid(u, "assemble_push_matrix");
  const std::size_t h = u.height(), w = u.width(), hw = h * w;
  if (hw > kMaxDensePixels) {
    throw Error("assemble_push_matrix: grid of " + std::to_string(hw) +
                " pixels exceeds the dense limit of " + std::to_string(kMaxDensePixels));
  }
  if (u.channels() != 2 && 2 * channel + 1 >= u.channels()) {
    throw ShapeError("assemble_push_matrix: channel " + std::to_string(channel) +
                     " out of range for displacement shape " + u.shape().str());
  }
  const std::size_t k = u.channels() == 2 ? 0 : channel;
  Tensor flow = grid(1, 2, h, w);
  std::copy_n(u.plane(0, 2 * k).begin(), hw, flow.plane(0, 0).begin());
  std::copy_n(u.plane(0, 2 * k + 1).begin(), hw, flow.plane(0, 1).begin());

  Tensor m(Shape{hw, hw});
  Tensor impulse = grid(1, 1, h, w);
  for (std::size_t j = 0; j < hw; ++j) {
    impulse[j] = 1.0;
    const Tensor column = push(mode, impulse, flow);
    impulse[j] = 0.0;
    for (std::size_t i = 0; i < hw; ++i) m[i * hw + j] = column[i];
  }
  return m;
}

}  // namespace adrflow

#endif  // ADRFLOW_ADVECTION_HPP

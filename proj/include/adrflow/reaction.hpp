#ifndef ADRFLOW_REACTION_HPP
#define ADRFLOW_REACTION_HPP

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "adrflow/ops.hpp"
#include "adrflow/tape.hpp"
#include "adrflow/tensor.hpp"

namespace adrflow {

/// Weights of a pointwise (1x1) layer: out = weight * in + bias per pixel.
struct Linear1x1 {
  Tensor weight;  // [out][in]
  Tensor bias;    // [out]

  std::size_t in_channels() const { return weight.shape()[1]; }
  std::size_t out_channels() const { return weight.shape()[0]; }
};

/// Double-layer pointwise MLP: second(silu(first(x))).
struct Mlp1x1Params {
  Linear1x1 first;   // c -> hidden
  Linear1x1 second;  // hidden -> c_out

  std::size_t in_channels() const { return first.in_channels(); }
  std::size_t hidden() const { return first.out_channels(); }
  std::size_t out_channels() const { return second.out_channels(); }
};

struct Conv3x3Params {
  Tensor kernel;  // [out][in][3][3]
  Tensor bias;    // [out]

  std::size_t in_channels() const { return kernel.shape()[1]; }
  std::size_t out_channels() const { return kernel.shape()[0]; }
};

/// Residual 3x3 block replacing the diffusion-reaction pair when fused:
/// I + h * second(silu(first(I))).
struct FusedDrParams {
  Conv3x3Params first;
  Conv3x3Params second;
};

// PyTorch-style uniform fan-in initialisation.
inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const Real bound = 1.0 / std::sqrt(static_cast<Real>(fan_in));
  std::uniform_real_distribution<Real> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = dist(rng);
  return t;
}

inline Linear1x1 init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {uniform_fan_in(Shape{out, in}, in, rng), uniform_fan_in(Shape{out}, in, rng)};
}

inline Mlp1x1Params init_mlp(std::size_t in, std::size_t hidden, std::size_t out,
                             std::mt19937_64& rng) {
  return {init_linear(in, hidden, rng), init_linear(hidden, out, rng)};
}

inline Conv3x3Params init_conv(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {uniform_fan_in(Shape{out, in, 3, 3}, 9 * in, rng), uniform_fan_in(Shape{out}, 9 * in, rng)};
}

inline Conv3x3Params zero_conv(std::size_t in, std::size_t out) {
  return {Tensor(Shape{out, in, 3, 3}), Tensor(Shape{out})};
}

/// Pointwise linear map over channels.
inline Tensor conv1x1(const Tensor& field, const Tensor& weight, const Tensor& bias) {
  require_grid(field, "conv1x1");
  if (weight.rank() != 2 || weight.shape()[1] != field.channels() || bias.rank() != 1 ||
      bias.size() != weight.shape()[0]) {
    throw ShapeError("conv1x1: weight " + weight.shape().str() + " / bias " + bias.shape().str() +
                     " incompatible with field " + field.shape().str());
  }
  const std::size_t co = weight.shape()[0], ci = field.channels(), hw = field.plane();
  Tensor out = grid(field.batch(), co, field.height(), field.width());
  for (std::size_t n = 0; n < field.batch(); ++n) {
    for (std::size_t o = 0; o < co; ++o) {
      auto dst = out.plane(n, o);
      std::fill(dst.begin(), dst.end(), bias[o]);
      for (std::size_t i = 0; i < ci; ++i) {
        const Real wv = weight[o * ci + i];
        auto src = field.plane(n, i);
        for (std::size_t x = 0; x < hw; ++x) dst[x] += wv * src[x];
      }
    }
  }
  return out;
}

inline Tensor mlp1x1(const Tensor& field, const Mlp1x1Params& p) {
  Tensor hidden = conv1x1(field, p.first.weight, p.first.bias);
  for (Real& v : hidden.data()) v = silu(v);
  return conv1x1(hidden, p.second.weight, p.second.bias);
}

/// Residual pointwise reaction: I + h * MLP(I).
inline Tensor reaction_step(const Tensor& field, const Mlp1x1Params& p, Real h) {
  if (p.in_channels() != field.channels() || p.out_channels() != field.channels()) {
    throw ShapeError("reaction_step: MLP maps " + std::to_string(p.in_channels()) + "->" +
                     std::to_string(p.out_channels()) + " channels, field has " +
                     std::to_string(field.channels()));
  }
  Tensor m = mlp1x1(field, p);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = field[i] + h * m[i];
  return m;
}

namespace detail {

// Clamped neighbour index tables: idx[d][i] = clamp(i + d - 1, 0, n - 1).
struct Taps {
  std::vector<std::size_t> rows[3], cols[3];
  Taps(std::size_t h, std::size_t w) {
    for (int d = 0; d < 3; ++d) {
      rows[d].resize(h);
      cols[d].resize(w);
      for (std::size_t i = 0; i < h; ++i)
        rows[d][i] = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(i) + d - 1, 0, static_cast<long>(h) - 1));
      for (std::size_t i = 0; i < w; ++i)
        cols[d][i] = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(i) + d - 1, 0, static_cast<long>(w) - 1));
    }
  }
};

inline void check_conv(const Tensor& field, const Conv3x3Params& p) {
  require_grid(field, "conv3x3");
  const auto& k = p.kernel.shape();
  if (k.rank() != 4 || k[2] != 3 || k[3] != 3 || k[1] != field.channels() || p.bias.rank() != 1 ||
      p.bias.size() != k[0]) {
    throw ShapeError("conv3x3: kernel " + k.str() + " / bias " + p.bias.shape().str() +
                     " incompatible with field " + field.shape().str());
  }
}

}  // namespace detail

/// 3x3 cross-correlation with mirror (edge-replicate) padding, which makes the
/// 5-point Laplacian stencil reproduce laplacian_5pt exactly.
inline Tensor conv3x3(const Tensor& field, const Conv3x3Params& p) {
  detail::check_conv(field, p);
  const std::size_t co = p.out_channels(), ci = p.in_channels();
  const std::size_t h = field.height(), w = field.width();
  const detail::Taps taps(h, w);
  Tensor out = grid(field.batch(), co, h, w);
  for (std::size_t n = 0; n < field.batch(); ++n) {
    for (std::size_t o = 0; o < co; ++o) {
      auto dst = out.plane(n, o);
      std::fill(dst.begin(), dst.end(), p.bias[o]);
      for (std::size_t i = 0; i < ci; ++i) {
        auto src = field.plane(n, i);
        const Real* k = &p.kernel[(o * ci + i) * 9];
        for (std::size_t r = 0; r < h; ++r) {
          Real* drow = &dst[r * w];
          for (int dr = 0; dr < 3; ++dr) {
            const Real* srow = &src[taps.rows[dr][r] * w];
            for (int dc = 0; dc < 3; ++dc) {
              const Real kv = k[dr * 3 + dc];
              const auto& cm = taps.cols[dc];
              for (std::size_t q = 0; q < w; ++q) drow[q] += kv * srow[cm[q]];
            }
          }
        }
      }
    }
  }
  return out;
}

inline Tensor fused_dr_step(const Tensor& field, const FusedDrParams& p, Real h) {
  Tensor hidden = conv3x3(field, p.first);
  for (Real& v : hidden.data()) v = silu(v);
  Tensor m = conv3x3(hidden, p.second);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = field[i] + h * m[i];
  return m;
}

// ---- differentiable versions ----

inline VarId conv1x1(Tape& tape, VarId field, VarId weight, VarId bias) {
  const Tensor& iv = tape.value(field);
  const Tensor& wv = tape.value(weight);
  Tensor out = conv1x1(iv, wv, tape.value(bias));
  return tape.record(
      "conv1x1", std::move(out), {field, weight, bias},
      [iv, wv](const Tensor& g, const std::vector<bool>& need) {
        const std::size_t co = wv.shape()[0], ci = wv.shape()[1], hw = iv.plane();
        std::vector<Tensor> grads(3);
        if (need[0]) {
          Tensor gi(iv.shape());
          for (std::size_t n = 0; n < iv.batch(); ++n)
            for (std::size_t o = 0; o < co; ++o) {
              auto gp = g.plane(n, o);
              for (std::size_t i = 0; i < ci; ++i) {
                const Real wval = wv[o * ci + i];
                auto dst = gi.plane(n, i);
                for (std::size_t x = 0; x < hw; ++x) dst[x] += wval * gp[x];
              }
            }
          grads[0] = std::move(gi);
        }
        if (need[1]) {
          Tensor gw(wv.shape());
          for (std::size_t n = 0; n < iv.batch(); ++n)
            for (std::size_t o = 0; o < co; ++o) {
              auto gp = g.plane(n, o);
              for (std::size_t i = 0; i < ci; ++i) {
                auto src = iv.plane(n, i);
                Real acc = 0;
                for (std::size_t x = 0; x < hw; ++x) acc += gp[x] * src[x];
                gw[o * ci + i] += acc;
              }
            }
          grads[1] = std::move(gw);
        }
        if (need[2]) {
          Tensor gb(Shape{co});
          for (std::size_t n = 0; n < iv.batch(); ++n)
            for (std::size_t o = 0; o < co; ++o)
              for (Real v : g.plane(n, o)) gb[o] += v;
          grads[2] = std::move(gb);
        }
        return grads;
      });
}

/// Parameter variables of a 1x1 layer registered on a tape.
struct LinearVars {
  VarId weight, bias;
};
struct MlpVars {
  LinearVars first, second;
};
struct ConvVars {
  VarId kernel, bias;
};

inline VarId mlp1x1(Tape& tape, VarId field, const MlpVars& p) {
  VarId hidden = silu(tape, conv1x1(tape, field, p.first.weight, p.first.bias));
  return conv1x1(tape, hidden, p.second.weight, p.second.bias);
}

inline VarId reaction_step(Tape& tape, VarId field, const MlpVars& p, Real h) {
  return add(tape, field, scale(tape, mlp1x1(tape, field, p), h));
}

inline VarId conv3x3(Tape& tape, VarId field, VarId kernel, VarId bias) {
  const Tensor& iv = tape.value(field);
  const Tensor& kv = tape.value(kernel);
  Conv3x3Params p{kv, tape.value(bias)};
  Tensor out = conv3x3(iv, p);
  return tape.record(
      "conv3x3", std::move(out), {field, kernel, bias},
      [iv, kv](const Tensor& g, const std::vector<bool>& need) {
        const std::size_t co = kv.shape()[0], ci = kv.shape()[1];
        const std::size_t h = iv.height(), w = iv.width();
        const detail::Taps taps(h, w);
        Tensor gi = need[0] ? Tensor(iv.shape()) : Tensor();
        Tensor gk = need[1] ? Tensor(kv.shape()) : Tensor();
        for (std::size_t n = 0; n < iv.batch(); ++n) {
          for (std::size_t o = 0; o < co; ++o) {
            auto gp = g.plane(n, o);
            for (std::size_t i = 0; i < ci; ++i) {
              auto src = iv.plane(n, i);
              const std::size_t kbase = (o * ci + i) * 9;
              for (int dr = 0; dr < 3; ++dr) {
                for (int dc = 0; dc < 3; ++dc) {
                  const auto& cm = taps.cols[dc];
                  const Real kval = kv[kbase + dr * 3 + dc];
                  Real acc = 0;
                  for (std::size_t r = 0; r < h; ++r) {
                    const std::size_t sr = taps.rows[dr][r] * w;
                    const Real* grow = &gp[r * w];
                    if (need[1]) {
                      const Real* srow = &src[sr];
                      for (std::size_t q = 0; q < w; ++q) acc += grow[q] * srow[cm[q]];
                    }
                    if (need[0]) {
                      Real* drow = &gi.plane(n, i)[sr];
                      for (std::size_t q = 0; q < w; ++q) drow[cm[q]] += kval * grow[q];
                    }
                  }
                  if (need[1]) gk[kbase + dr * 3 + dc] += acc;
                }
              }
            }
          }
        }
        std::vector<Tensor> grads(3);
        grads[0] = std::move(gi);
        grads[1] = std::move(gk);
        if (need[2]) {
          Tensor gb(Shape{co});
          for (std::size_t n = 0; n < iv.batch(); ++n)
            for (std::size_t o = 0; o < co; ++o)
              for (Real v : g.plane(n, o)) gb[o] += v;
          grads[2] = std::move(gb);
        }
        return grads;
      });
}

inline VarId fused_dr_step(Tape& tape, VarId field, const ConvVars& first, const ConvVars& second,
                           Real h) {
  VarId hidden = silu(tape, conv3x3(tape, field, first.kernel, first.bias));
  VarId m = conv3x3(tape, hidden, second.kernel, second.bias);
  return add(tape, field, scale(tape, m, h));
}

}  // namespace adrflow

#endif  // ADRFLOW_REACTION_HPP

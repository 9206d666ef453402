#ifndef ADRFLOW_DIFFUSION_HPP
#define ADRFLOW_DIFFUSION_HPP

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#if ADRFLOW_HAVE_FFTW
#include <fftw3.h>
#endif

#include "adrflow/ops.hpp"
#include "adrflow/tape.hpp"
#include "adrflow/tensor.hpp"

namespace adrflow {

/// Trainable per-channel diffusivity. The effective coefficient is
/// softplus(raw), so it is never negative.
struct Diffusivity {
  Tensor raw;

  static Diffusivity constant(std::size_t channels, Real effective) {
    return Diffusivity{Tensor(Shape{channels}, softplus_inverse(effective))};
  }

  Tensor effective() const {
    Tensor k(raw.shape());
    for (std::size_t i = 0; i < raw.size(); ++i) k[i] = softplus(raw[i]);
    return k;
  }
};

/// 5-point Laplacian with zero-normal-derivative boundaries: a missing
/// neighbour is replaced by the centre value.
inline Tensor laplacian_5pt(const Tensor& field) {
  require_grid(field, "laplacian_5pt");
  const std::size_t h = field.height(), w = field.width();
  if (h < 2 || w < 2) {
    throw ShapeError("laplacian_5pt: grid must be at least 2x2, got " + field.shape().str());
  }
  Tensor out(field.shape());
  for (std::size_t n = 0; n < field.batch(); ++n) {
    for (std::size_t c = 0; c < field.channels(); ++c) {
      auto in = field.plane(n, c);
      auto o = out.plane(n, c);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t q = 0; q < w; ++q) {
          const Real centre = in[r * w + q];
          Real acc = 0;
          if (r > 0) acc += in[(r - 1) * w + q] - centre;
          if (r + 1 < h) acc += in[(r + 1) * w + q] - centre;
          if (q > 0) acc += in[r * w + q - 1] - centre;
          if (q + 1 < w) acc += in[r * w + q + 1] - centre;
          o[r * w + q] = acc;
        }
      }
    }
  }
  return out;
}

enum class DctBackend { Matrix, Fftw };

inline bool fftw_available() {
#if ADRFLOW_HAVE_FFTW
  return true;
#else
  return false;
#endif
}

/// Orthonormal 2D DCT-II for one grid size, plus the Neumann Laplacian
/// spectrum it diagonalises. Immutable and shareable between threads.
class DctPlan {
 public:
  DctPlan(std::size_t height, std::size_t width, DctBackend backend = DctBackend::Matrix)
      : h_(height), w_(width), backend_(backend) {
    if (h_ == 0 || w_ == 0) throw ShapeError("DctPlan: empty grid");
    basis_h_ = basis(h_);
    basis_w_ = basis(w_);
    lambda_.resize(h_ * w_);
    for (std::size_t i = 0; i < h_; ++i) {
      for (std::size_t j = 0; j < w_; ++j) {
        lambda_[i * w_ + j] = axis_eigenvalue(i, h_) + axis_eigenvalue(j, w_);
      }
    }
    if (backend_ == DctBackend::Fftw) {
#if ADRFLOW_HAVE_FFTW
      fftw_ = std::make_shared<FftwPlans>(h_, w_);
#else
      throw Error("DctPlan: built without FFTW support");
#endif
    }
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  DctBackend backend() const { return backend_; }

  /// Eigenvalue of -Laplacian for mode (i, j).
  Real eigenvalue(std::size_t i, std::size_t j) const { return lambda_[i * w_ + j]; }
  std::span<const Real> eigenvalues() const { return lambda_; }

  void forward(std::span<const Real> in, std::span<Real> out) const {
    if (backend_ == DctBackend::Fftw) return fftw_transform(in, out, true);
    apply_separable(in, out, false);
  }
  void inverse(std::span<const Real> in, std::span<Real> out) const {
    if (backend_ == DctBackend::Fftw) return fftw_transform(in, out, false);
    apply_separable(in, out, true);
  }

  void check(const Tensor& field, const char* what) const {
    require_grid(field, what);
    if (field.height() != h_ || field.width() != w_) {
      throw ShapeError(std::string(what) + ": plan is " + std::to_string(h_) + "x" +
                       std::to_string(w_) + " but field is " + field.shape().str());
    }
  }

 private:
  static Real axis_eigenvalue(std::size_t k, std::size_t n) {
    const Real s = std::sin(std::numbers::pi * static_cast<Real>(k) / (2.0 * static_cast<Real>(n)));
    return 4.0 * s * s;
  }

  static Real axis_scale(std::size_t k, std::size_t n) {
    return std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<Real>(n));
  }

  // basis[k * n + i] = a_k cos(pi k (i + 1/2) / n)
  static std::vector<Real> basis(std::size_t n) {
    std::vector<Real> b(n * n);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        b[k * n + i] = axis_scale(k, n) *
                       std::cos(std::numbers::pi * static_cast<Real>(k) *
                                (static_cast<Real>(i) + 0.5) / static_cast<Real>(n));
      }
    }
    return b;
  }

  // forward: Y = B_h X B_w^T; inverse: X = B_h^T Y B_w.
  void apply_separable(std::span<const Real> in, std::span<Real> out, bool transpose) const {
    std::vector<Real> tmp(h_ * w_, 0.0);
    for (std::size_t k = 0; k < h_; ++k) {
      for (std::size_t r = 0; r < h_; ++r) {
        const Real b = transpose ? basis_h_[r * h_ + k] : basis_h_[k * h_ + r];
        const Real* src = &in[r * w_];
        Real* dst = &tmp[k * w_];
        for (std::size_t q = 0; q < w_; ++q) dst[q] += b * src[q];
      }
    }
    for (std::size_t r = 0; r < h_; ++r) {
      const Real* src = &tmp[r * w_];
      for (std::size_t l = 0; l < w_; ++l) {
        Real acc = 0;
        if (transpose) {
          for (std::size_t q = 0; q < w_; ++q) acc += src[q] * basis_w_[q * w_ + l];
        } else {
          const Real* row = &basis_w_[l * w_];
          for (std::size_t q = 0; q < w_; ++q) acc += src[q] * row[q];
        }
        out[r * w_ + l] = acc;
      }
    }
  }

#if ADRFLOW_HAVE_FFTW
  struct FftwPlans {
    fftw_plan fwd = nullptr, inv = nullptr;
    FftwPlans(std::size_t h, std::size_t w) {
      std::lock_guard lock(planner_mutex());
      double* a = fftw_alloc_real(h * w);
      double* b = fftw_alloc_real(h * w);
      fwd = fftw_plan_r2r_2d(static_cast<int>(h), static_cast<int>(w), a, b, FFTW_REDFT10,
                             FFTW_REDFT10, FFTW_ESTIMATE);
      inv = fftw_plan_r2r_2d(static_cast<int>(h), static_cast<int>(w), a, b, FFTW_REDFT01,
                             FFTW_REDFT01, FFTW_ESTIMATE);
      fftw_free(a);
      fftw_free(b);
    }
    ~FftwPlans() {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(fwd);
      fftw_destroy_plan(inv);
    }
    FftwPlans(const FftwPlans&) = delete;
    FftwPlans& operator=(const FftwPlans&) = delete;

    static std::mutex& planner_mutex() {
      static std::mutex m;
      return m;
    }
  };
  std::shared_ptr<FftwPlans> fftw_;
#endif

  // FFTW's REDFT10/01 are unnormalised (factor 2 per axis); rescale to the
  // orthonormal convention.
  void fftw_transform(std::span<const Real> in, std::span<Real> out, bool forward) const {
#if ADRFLOW_HAVE_FFTW
    const std::size_t n = h_ * w_;
    double* a = fftw_alloc_real(n);
    double* b = fftw_alloc_real(n);
    for (std::size_t i = 0; i < h_; ++i) {
      for (std::size_t j = 0; j < w_; ++j) {
        const Real s = forward ? 1.0
                               : axis_scale(i, h_) * (i ? 0.5 : 1.0) * axis_scale(j, w_) *
                                     (j ? 0.5 : 1.0);
        a[i * w_ + j] = s * in[i * w_ + j];
      }
    }
    fftw_execute_r2r(forward ? fftw_->fwd : fftw_->inv, a, b);
    for (std::size_t i = 0; i < h_; ++i) {
      for (std::size_t j = 0; j < w_; ++j) {
        const Real s = forward ? 0.25 * axis_scale(i, h_) * axis_scale(j, w_) : 1.0;
        out[i * w_ + j] = s * b[i * w_ + j];
      }
    }
    fftw_free(a);
    fftw_free(b);
#else
    (void)in;
    (void)out;
    (void)forward;
#endif
  }

  std::size_t h_, w_;
  DctBackend backend_;
  std::vector<Real> basis_h_, basis_w_, lambda_;
};

/// Process-wide plan for an H x W grid. Small grids use the dense basis
/// matrices, which beat FFTW's call overhead there.
inline std::shared_ptr<const DctPlan> shared_dct_plan(std::size_t height, std::size_t width) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const DctPlan>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{height, width}];
  if (!slot) {
    const bool fast = fftw_available() && std::max(height, width) >= 32;
    slot = std::make_shared<const DctPlan>(height, width, fast ? DctBackend::Fftw : DctBackend::Matrix);
  }
  return slot;
}

inline Tensor dct2(const Tensor& field, const DctPlan& plan) {
  plan.check(field, "dct2");
  Tensor out(field.shape());
  for (std::size_t n = 0; n < field.batch(); ++n)
    for (std::size_t c = 0; c < field.channels(); ++c) plan.forward(field.plane(n, c), out.plane(n, c));
  return out;
}

inline Tensor idct2(const Tensor& coeffs, const DctPlan& plan) {
  plan.check(coeffs, "idct2");
  Tensor out(coeffs.shape());
  for (std::size_t n = 0; n < coeffs.batch(); ++n)
    for (std::size_t c = 0; c < coeffs.channels(); ++c) plan.inverse(coeffs.plane(n, c), out.plane(n, c));
  return out;
}

namespace detail {

inline void check_kappa(const Tensor& field, std::span<const Real> kappa, const char* what) {
  if (kappa.size() != field.channels()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(kappa.size()) +
                     " diffusivities for " + std::to_string(field.channels()) + " channels");
  }
}

// Divides every DCT coefficient of channel c by (1 + h kappa_c lambda).
inline Tensor resolvent_in_spectrum(const Tensor& coeffs, std::span<const Real> kappa, Real h,
                                    const DctPlan& plan) {
  Tensor out = coeffs;
  auto lambda = plan.eigenvalues();
  for (std::size_t n = 0; n < out.batch(); ++n) {
    for (std::size_t c = 0; c < out.channels(); ++c) {
      auto p = out.plane(n, c);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] /= 1.0 + h * kappa[c] * lambda[i];
    }
  }
  return out;
}

}  // namespace detail

/// Forward-Euler step I + h kappa_c Lap(I). Stable only for small h kappa.
inline Tensor diffuse_explicit(const Tensor& field, std::span<const Real> kappa, Real h) {
  detail::check_kappa(field, kappa, "diffuse_explicit");
  if (!(h > 0)) throw Error("diffuse_explicit: step size must be positive");
  Tensor out = laplacian_5pt(field);
  for (std::size_t n = 0; n < field.batch(); ++n) {
    for (std::size_t c = 0; c < field.channels(); ++c) {
      auto o = out.plane(n, c);
      auto in = field.plane(n, c);
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] + h * kappa[c] * o[i];
    }
  }
  return out;
}

/// Backward-Euler step: solves (Id - h kappa_c Lap) X = I per channel in the
/// cosine basis. Unconditionally stable for kappa >= 0.
inline Tensor diffuse_implicit(const Tensor& field, std::span<const Real> kappa, Real h,
                               const DctPlan& plan) {
  detail::check_kappa(field, kappa, "diffuse_implicit");
  if (!(h > 0)) throw Error("diffuse_implicit: step size must be positive");
  plan.check(field, "diffuse_implicit");
  return idct2(detail::resolvent_in_spectrum(dct2(field, plan), kappa, h, plan), plan);
}

/// Largest h*kappa for which the explicit step amplifies no mode on any grid.
inline constexpr Real kExplicitStableLimit = 0.25;

// Differentiable versions; `kappa` is a rank-1 variable of effective
// diffusivities (one per channel).

inline VarId laplacian_5pt(Tape& tape, VarId field) {
  return tape.record("laplacian_5pt", laplacian_5pt(tape.value(field)), {field},
                     [](const Tensor& g, const std::vector<bool>&) {
                       // the Neumann 5-point operator is symmetric
                       return std::vector<Tensor>{laplacian_5pt(g)};
                     });
}

inline VarId diffuse_explicit(Tape& tape, VarId field, VarId kappa, Real h) {
  const Tensor& iv = tape.value(field);
  const Tensor& kv = tape.value(kappa);
  Tensor lap = laplacian_5pt(iv);
  Tensor out = diffuse_explicit(iv, kv.data(), h);
  return tape.record(
      "diffuse_explicit", std::move(out), {field, kappa},
      [kv, lap, h](const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> grads(2);
        if (need[0]) grads[0] = diffuse_explicit(g, kv.data(), h);
        if (need[1]) {
          Tensor dk(kv.shape());
          for (std::size_t n = 0; n < g.batch(); ++n)
            for (std::size_t c = 0; c < g.channels(); ++c) {
              auto gp = g.plane(n, c);
              auto lp = lap.plane(n, c);
              for (std::size_t i = 0; i < gp.size(); ++i) dk[c] += h * gp[i] * lp[i];
            }
          grads[1] = std::move(dk);
        }
        return grads;
      });
}

inline VarId diffuse_implicit(Tape& tape, VarId field, VarId kappa, Real h,
                              std::shared_ptr<const DctPlan> plan) {
  const Tensor& iv = tape.value(field);
  const Tensor& kv = tape.value(kappa);
  detail::check_kappa(iv, kv.data(), "diffuse_implicit");
  if (!(h > 0)) throw Error("diffuse_implicit: step size must be positive");
  plan->check(iv, "diffuse_implicit");
  Tensor solved_hat = detail::resolvent_in_spectrum(dct2(iv, *plan), kv.data(), h, *plan);
  Tensor out = idct2(solved_hat, *plan);
  return tape.record(
      "diffuse_implicit", std::move(out), {field, kappa},
      [kv, solved_hat = std::move(solved_hat), h, plan](const Tensor& g,
                                                        const std::vector<bool>& need) {
        std::vector<Tensor> grads(2);
        const Tensor g_hat = dct2(g, *plan);
        // the resolvent is symmetric, so the field cotangent is the same solve
        if (need[0]) grads[0] = idct2(detail::resolvent_in_spectrum(g_hat, kv.data(), h, *plan), *plan);
        if (need[1]) {
          // d/dk of 1/(1 + h k l) applied to x_hat: -h l x_hat / (1 + h k l)
          Tensor dk(kv.shape());
          auto lambda = plan->eigenvalues();
          for (std::size_t n = 0; n < g.batch(); ++n)
            for (std::size_t c = 0; c < g.channels(); ++c) {
              auto gp = g_hat.plane(n, c);
              auto xp = solved_hat.plane(n, c);
              for (std::size_t i = 0; i < gp.size(); ++i) {
                dk[c] -= gp[i] * h * lambda[i] * xp[i] / (1.0 + h * kv[c] * lambda[i]);
              }
            }
          grads[1] = std::move(dk);
        }
        return grads;
      });
}

}  // namespace adrflow

#endif  // ADRFLOW_DIFFUSION_HPP

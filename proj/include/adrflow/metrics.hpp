#ifndef ADRFLOW_METRICS_HPP
#define ADRFLOW_METRICS_HPP

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "adrflow/tensor.hpp"

namespace adrflow::metrics {

/// Video: per-image sum over H*W*C, averaged over images.
/// PdeBench: mean over every entry.
enum class Convention { Video, PdeBench };

enum class SsimWindow { Gaussian, Uniform };

struct MetricReport {
  Real mse = 0, mae = 0, rmse = 0, nmse = 0, nrmse = 0, psnr = 0, ssim = 0;
  std::size_t n_samples = 0;
};

namespace detail {

inline void check(const Tensor& pred, const Tensor& target, const char* what) {
  require_grid(pred, what);
  require_same_shape(pred, target, what);
  if (pred.batch() == 0) throw ShapeError(std::string(what) + ": empty batch");
}

// Per-image sums of f(pred, target) over H*W*C.
template <class F>
std::vector<Real> per_image(const Tensor& pred, const Tensor& target, F&& f) {
  const std::size_t len = pred.size() / pred.batch();
  std::vector<Real> out(pred.batch(), 0.0);
  for (std::size_t n = 0; n < pred.batch(); ++n)
    for (std::size_t i = n * len; i < (n + 1) * len; ++i) out[n] += f(pred[i], target[i], i);
  return out;
}

inline Real mean(const std::vector<Real>& v) {
  Real s = 0;
  for (Real x : v) s += x;
  return s / static_cast<Real>(v.size());
}

inline void require_nonzero(const Tensor& target, const char* what) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0) {
      throw NumericError(std::string(what) + ": target entry " + std::to_string(i) +
                         " is zero (normalised error undefined)");
    }
  }
}

}  // namespace detail

inline Real mse(const Tensor& pred, const Tensor& target, Convention conv = Convention::PdeBench) {
  detail::check(pred, target, "mse");
  auto s = detail::per_image(pred, target, [](Real p, Real t, std::size_t) { return (p - t) * (p - t); });
  const Real video = detail::mean(s);
  return conv == Convention::Video ? video : video / static_cast<Real>(pred.size() / pred.batch());
}

inline Real mae(const Tensor& pred, const Tensor& target, Convention conv = Convention::PdeBench) {
  detail::check(pred, target, "mae");
  auto s = detail::per_image(pred, target, [](Real p, Real t, std::size_t) { return std::abs(p - t); });
  const Real video = detail::mean(s);
  return conv == Convention::Video ? video : video / static_cast<Real>(pred.size() / pred.batch());
}

/// Square root of each image's mean squared error, averaged over images.
inline Real rmse(const Tensor& pred, const Tensor& target) {
  detail::check(pred, target, "rmse");
  const Real len = static_cast<Real>(pred.size() / pred.batch());
  auto s = detail::per_image(pred, target, [](Real p, Real t, std::size_t) { return (p - t) * (p - t); });
  for (Real& v : s) v = std::sqrt(v / len);
  return detail::mean(s);
}

/// Mean over all entries of (x - x_hat)^2 / x^2.
inline Real nmse(const Tensor& pred, const Tensor& target) {
  detail::check(pred, target, "nmse");
  detail::require_nonzero(target, "nmse");
  auto s = detail::per_image(pred, target, [](Real p, Real t, std::size_t) {
    return (p - t) * (p - t) / (t * t);
  });
  return detail::mean(s) / static_cast<Real>(pred.size() / pred.batch());
}

/// Per-image sqrt of the mean pointwise-normalised squared error, averaged.
inline Real nrmse(const Tensor& pred, const Tensor& target) {
  detail::check(pred, target, "nrmse");
  detail::require_nonzero(target, "nrmse");
  const Real len = static_cast<Real>(pred.size() / pred.batch());
  auto s = detail::per_image(pred, target, [](Real p, Real t, std::size_t) {
    return (p - t) * (p - t) / (t * t);
  });
  for (Real& v : s) v = std::sqrt(v / len);
  return detail::mean(s);
}

/// Mean over images of 10 log10(max^2 / mse_i); +infinity if any image is
/// reproduced exactly.
inline Real psnr(const Tensor& pred, const Tensor& target, Real max_val) {
  detail::check(pred, target, "psnr");
  const Real len = static_cast<Real>(pred.size() / pred.batch());
  auto s = detail::per_image(pred, target, [](Real p, Real t, std::size_t) { return (p - t) * (p - t); });
  Real total = 0;
  for (Real v : s) {
    const Real m = v / len;
    if (m == 0) return std::numeric_limits<Real>::infinity();
    total += 10.0 * std::log10(max_val * max_val / m);
  }
  return total / static_cast<Real>(s.size());
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr Real kSsimSigma = 1.5;
inline constexpr Real kSsimK1 = 0.01, kSsimK2 = 0.03;

/// Normalised 1D window weights; the 2D window is their outer product.
inline std::vector<Real> ssim_weights(SsimWindow window) {
  std::vector<Real> w(kSsimWindow);
  const Real centre = (kSsimWindow - 1) / 2.0;
  Real total = 0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const Real d = static_cast<Real>(i) - centre;
    w[i] = window == SsimWindow::Gaussian ? std::exp(-d * d / (2 * kSsimSigma * kSsimSigma)) : 1.0;
    total += w[i];
  }
  for (Real& v : w) v /= total;
  return w;
}

namespace detail {

// Valid-mode separable filter of one H x W plane.
inline std::vector<Real> filter_valid(std::span<const Real> img, std::size_t h, std::size_t w,
                                      const std::vector<Real>& k) {
  const std::size_t n = k.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<Real> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      Real acc = 0;
      for (std::size_t t = 0; t < n; ++t) acc += k[t] * img[r * w + c + t];
      rows[r * ow + c] = acc;
    }
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      Real acc = 0;
      for (std::size_t t = 0; t < n; ++t) acc += k[t] * rows[(r + t) * ow + c];
      out[r * ow + c] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean local SSIM over valid window positions and channels, averaged over
/// images. `max_val` is the dynamic range L.
inline Real ssim(const Tensor& pred, const Tensor& target, Real max_val,
                 SsimWindow window = SsimWindow::Gaussian) {
  detail::check(pred, target, "ssim");
  const std::size_t h = pred.height(), w = pred.width();
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than the 11x11 window");
  }
  const Real c1 = (kSsimK1 * max_val) * (kSsimK1 * max_val);
  const Real c2 = (kSsimK2 * max_val) * (kSsimK2 * max_val);
  const auto k = ssim_weights(window);
  Real total = 0;
  for (std::size_t n = 0; n < pred.batch(); ++n) {
    Real image = 0;
    for (std::size_t c = 0; c < pred.channels(); ++c) {
      auto x = pred.plane(n, c);
      auto y = target.plane(n, c);
      std::vector<Real> xx(x.size()), yy(x.size()), xy(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
      const auto mx = detail::filter_valid(x, h, w, k);
      const auto my = detail::filter_valid(y, h, w, k);
      const auto sxx = detail::filter_valid(xx, h, w, k);
      const auto syy = detail::filter_valid(yy, h, w, k);
      const auto sxy = detail::filter_valid(xy, h, w, k);
      Real acc = 0;
      for (std::size_t i = 0; i < mx.size(); ++i) {
        const Real vx = sxx[i] - mx[i] * mx[i];
        const Real vy = syy[i] - my[i] * my[i];
        const Real cov = sxy[i] - mx[i] * my[i];
        acc += (2 * mx[i] * my[i] + c1) * (2 * cov + c2) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      }
      image += acc / static_cast<Real>(mx.size());
    }
    total += image / static_cast<Real>(pred.channels());
  }
  return total / static_cast<Real>(pred.batch());
}

struct ReportOptions {
  Convention convention = Convention::PdeBench;
  Real max_val = 1.0;
  SsimWindow window = SsimWindow::Gaussian;
};

/// All metrics at once. Normalised metrics are NaN when the target has a
/// zero entry; SSIM is NaN when the image is smaller than the window.
inline MetricReport report(const Tensor& pred, const Tensor& target, const ReportOptions& o = {}) {
  MetricReport r;
  r.n_samples = pred.batch();
  r.mse = mse(pred, target, o.convention);
  r.mae = mae(pred, target, o.convention);
  r.rmse = rmse(pred, target);
  const Real nan = std::numeric_limits<Real>::quiet_NaN();
  try {
    r.nmse = nmse(pred, target);
    r.nrmse = nrmse(pred, target);
  } catch (const NumericError&) {
    r.nmse = r.nrmse = nan;
  }
  r.psnr = psnr(pred, target, o.max_val);
  try {
    r.ssim = ssim(pred, target, o.max_val, o.window);
  } catch (const ShapeError&) {
    r.ssim = nan;
  }
  return r;
}

/// `metric,value` rows with a header.
inline void write_csv(std::ostream& os, const MetricReport& r) {
  os.precision(17);
  os << "metric,value\n"
     << "mse," << r.mse << "\n"
     << "mae," << r.mae << "\n"
     << "rmse," << r.rmse << "\n"
     << "nmse," << r.nmse << "\n"
     << "nrmse," << r.nrmse << "\n"
     << "psnr," << r.psnr << "\n"
     << "ssim," << r.ssim << "\n"
     << "n_samples," << r.n_samples << "\n";
}

}  // namespace adrflow::metrics

#endif  // ADRFLOW_METRICS_HPP

#ifndef ADRFLOW_VERIFY_HPP
#define ADRFLOW_VERIFY_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "adrflow/advection.hpp"
#include "adrflow/diffusion.hpp"
#include "adrflow/metrics.hpp"
#include "adrflow/model.hpp"
#include "adrflow/training.hpp"

/// Self-contained oracle suites behind `adrflow verify`. Each suite compares a
/// production operator against a slow, independent reference.
namespace adrflow::verify {

/// Deliberate defects for negative-control runs.
enum class Fault { None, Adjoint, Conservation, Solver, Gradient };

inline Fault parse_fault(const std::string& s) {
  if (s == "none") return Fault::None;
  if (s == "adjoint") return Fault::Adjoint;
  if (s == "conservation") return Fault::Conservation;
  if (s == "solver") return Fault::Solver;
  if (s == "gradient") return Fault::Gradient;
  throw Error("unknown fault '" + s + "' (expected none|adjoint|conservation|solver|gradient)");
}

struct Check {
  std::string suite;
  std::string property;
  bool passed = false;
  Real measured = 0;
  Real tolerance = 0;
};

struct Options {
  Fault fault = Fault::None;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Reference implementations.

/// Dense Neumann 5-point Laplacian built from its stencil definition.
inline std::vector<Real> dense_laplacian(std::size_t h, std::size_t w) {
  const std::size_t n = h * w;
  std::vector<Real> a(n * n, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t p = r * w + c;
      auto link = [&](std::size_t q) {
        a[p * n + q] += 1;
        a[p * n + p] -= 1;
      };
      if (r > 0) link(p - w);
      if (r + 1 < h) link(p + w);
      if (c > 0) link(p - 1);
      if (c + 1 < w) link(p + 1);
    }
  return a;
}

/// Gaussian elimination with partial pivoting; `a` is n x n row-major.
inline std::vector<Real> dense_solve(std::vector<Real> a, std::vector<Real> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
    if (a[piv * n + k] == 0) throw NumericError("dense_solve: singular matrix");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const Real f = a[i * n + k] / a[k * n + k];
      if (f == 0) continue;
      for (std::size_t j = k; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
      b[i] -= f * b[k];
    }
  }
  std::vector<Real> x(n);
  for (std::size_t i = n; i-- > 0;) {
    Real s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i * n + j] * x[j];
    x[i] = s / a[i * n + i];
  }
  return x;
}

/// Solves (Id - h kappa Lap) x = b on one plane.
inline std::vector<Real> dense_implicit_step(std::span<const Real> b, std::size_t h, std::size_t w,
                                             Real kappa, Real step) {
  auto a = dense_laplacian(h, w);
  const std::size_t n = h * w;
  for (Real& v : a) v *= -step * kappa;
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += 1;
  return dense_solve(std::move(a), std::vector<Real>(b.begin(), b.end()));
}

/// Orthonormal 2D DCT-II straight from the cosine sum.
inline std::vector<Real> naive_dct2(std::span<const Real> x, std::size_t h, std::size_t w) {
  std::vector<Real> out(h * w, 0.0);
  const Real pi = std::numbers::pi;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const Real ai = std::sqrt((i == 0 ? 1.0 : 2.0) / static_cast<Real>(h));
      const Real aj = std::sqrt((j == 0 ? 1.0 : 2.0) / static_cast<Real>(w));
      Real s = 0;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          s += x[r * w + c] * std::cos(pi * (2.0 * r + 1) * i / (2.0 * h)) *
               std::cos(pi * (2.0 * c + 1) * j / (2.0 * w));
      out[i * w + j] = ai * aj * s;
    }
  return out;
}

inline Tensor random_grid(std::mt19937_64& rng, std::size_t b, std::size_t c, std::size_t h,
                          std::size_t w, Real lo, Real hi) {
  std::uniform_real_distribution<Real> d(lo, hi);
  Tensor t = grid(b, c, h, w);
  for (Real& v : t.data()) v = d(rng);
  return t;
}

/// Model whose every parameter, including the zero-initialised displacement
/// head, is randomised so sample points fall between grid lines.
inline AdrModel random_model(const ModelConfig& cfg, std::uint64_t seed, Real head_scale = 0.3) {
  AdrModel m = init_model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<Real> d(-1.0, 1.0);
  for (auto& layer : m.layers) {
    if (!layer.flow) continue;
    for (Real& v : layer.flow->output.kernel.data()) v = head_scale * d(rng);
    for (Real& v : layer.flow->output.bias.data()) v = head_scale * d(rng);
  }
  for (auto& layer : m.layers)
    for (Real& v : layer.kappa.raw.data()) v = d(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Suites.

namespace detail {

inline Check check(std::string suite, std::string property, Real measured, Real tolerance) {
  return Check{std::move(suite), std::move(property), measured <= tolerance, measured, tolerance};
}

}  // namespace detail

inline std::vector<Check> suite_adjoint(const Options& o) {
  std::mt19937_64 rng(o.seed);
  Real worst = 0;
  for (std::size_t n : {4, 8}) {
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor u = random_grid(rng, 1, 2, n, n, -1.5 * n, 1.5 * n);
      Tensor mass = assemble_push_matrix(u, PushMode::Mass, 0);
      const Tensor color = assemble_push_matrix(u, PushMode::Color, 0);
      if (o.fault == Fault::Adjoint) mass[1] += 1e-6;
      const std::size_t hw = n * n;
      for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t j = 0; j < hw; ++j)
          worst = std::max(worst, std::abs(mass[i * hw + j] - color[j * hw + i]));
    }
  }
  return {detail::check("adjoint", "mass matrix equals color matrix transposed", worst, 1e-12)};
}

inline std::vector<Check> suite_conservation(const Options& o) {
  std::mt19937_64 rng(o.seed + 1);
  Real worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 3 + rng() % 10, w = 3 + rng() % 10, c = 1 + rng() % 3;
    const Tensor field = random_grid(rng, 1, c, h, w, -1, 1);
    const Tensor u = random_grid(rng, 1, 2 * c, h, w, -2.0 * h, 2.0 * h);
    Tensor out = push_mass(field, u);
    if (o.fault == Fault::Conservation) out[0] += 1e-6;
    for (std::size_t k = 0; k < c; ++k) {
      Real before = 0, after = 0, scale = 0;
      for (Real v : field.plane(0, k)) before += v, scale += std::abs(v);
      for (Real v : out.plane(0, k)) after += v;
      worst = std::max(worst, std::abs(after - before) / std::max(scale, 1.0));
    }
  }
  return {detail::check("conservation", "push_mass preserves per-channel sums", worst, 1e-12)};
}

inline std::vector<Check> suite_dct(const Options& o) {
  std::mt19937_64 rng(o.seed + 2);
  std::vector<Check> out;
  for (DctBackend backend : {DctBackend::Matrix, DctBackend::Fftw}) {
    if (backend == DctBackend::Fftw && !fftw_available()) continue;
    Real fwd = 0, round = 0;
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {5, 7}, {1, 6}, {12, 3}}) {
      const DctPlan plan(h, w, backend);
      const Tensor x = random_grid(rng, 1, 1, h, w, -1, 1);
      const Tensor got = dct2(x, plan);
      const auto want = naive_dct2(x.data(), h, w);
      for (std::size_t i = 0; i < want.size(); ++i) fwd = std::max(fwd, std::abs(got[i] - want[i]));
      round = std::max(round, max_abs_diff(idct2(got, plan), x));
    }
    const std::string tag = backend == DctBackend::Fftw ? " (fftw)" : " (matrix)";
    out.push_back(detail::check("dct", "dct2 matches the cosine sum" + tag, fwd, 1e-12));
    out.push_back(detail::check("dct", "idct2 inverts dct2" + tag, round, 1e-12));
  }
  return out;
}

inline std::vector<Check> suite_solver(const Options& o) {
  std::mt19937_64 rng(o.seed + 3);
  Real worst = 0;
  const DctPlan plan(8, 8);
  for (Real kappa : {0.01, 1.0, 100.0}) {
    for (Real h : {0.1, 1.0}) {
      const Tensor x = random_grid(rng, 1, 1, 8, 8, -1, 1);
      const Real used = o.fault == Fault::Solver ? kappa * (1 + 1e-3) : kappa;
      const Tensor got = diffuse_implicit(x, std::vector<Real>{used}, h, plan);
      const auto want = dense_implicit_step(x.data(), 8, 8, kappa, h);
      for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
  }
  return {detail::check("solver", "diffuse_implicit matches the dense direct solve", worst, 1e-10)};
}

/// Largest |coefficient ratio| of DCT mode k after one diffusion step,
/// applied to the pure mode k.
inline Real max_amplification(std::size_t n, Real kappa, Real h, bool implicit,
                              std::size_t* argmax = nullptr) {
  const DctPlan plan(n, n);
  Real worst = 0;
  for (std::size_t k = 0; k < n * n; ++k) {
    Tensor coeff = grid(1, 1, n, n);
    coeff[k] = 1.0;
    const Tensor mode = idct2(coeff, plan);
    const std::vector<Real> kv{kappa};
    const Tensor out = implicit ? diffuse_implicit(mode, kv, h, plan) : diffuse_explicit(mode, kv, h);
    const Real ratio = std::abs(dct2(out, plan)[k]);
    if (ratio > worst) {
      worst = ratio;
      if (argmax) *argmax = k;
    }
  }
  return worst;
}

inline std::vector<Check> suite_stability(const Options&) {
  Real implicit_worst = 0;
  for (Real h : {0.1, 1.0, 10.0})
    for (Real kappa : {1e-3, 1.0, 1e3, 1e6}) implicit_worst = std::max(implicit_worst, max_amplification(8, kappa, h, true));
  std::size_t k = 0;
  const Real unstable = max_amplification(8, 0.3, 1.0, false, &k);
  const Real stable = max_amplification(8, 0.25, 1.0, false);
  std::vector<Check> out;
  out.push_back(detail::check("stability", "implicit step never amplifies a mode", implicit_worst - 1, 1e-12));
  Check amp{"stability", "explicit step at h*kappa=0.3 amplifies the highest mode",
            unstable > 1 && k == 63, unstable, 1};
  out.push_back(amp);
  out.push_back(detail::check("stability", "explicit step at h*kappa=0.25 amplifies no mode", stable - 1, 1e-12));
  return out;
}

/// Backward options that corrupt the push_color flow gradient by 1% when the
/// gradient fault is requested.
inline BackwardOptions backward_options(Fault fault) {
  BackwardOptions bo;
  if (fault == Fault::Gradient) {
    bo.rule_hook = [](std::string_view op, std::vector<Tensor>& g) {
      if (op == "push_color" && !g[1].empty())
        for (Real& v : g[1].data()) v *= 1.01;
    };
  }
  return bo;
}

struct GradcheckCase {
  std::size_t size = 6;
  std::size_t layers = 2;
  std::size_t channels = 4;
  std::size_t batch = 1;
  Real step = 1e-5;
};

/// Random model and batch for `seed`, checked against central differences.
inline GradcheckReport gradcheck_case(std::uint64_t seed, const GradcheckCase& c = {},
                                      const BackwardOptions& bo = {}) {
  ModelConfig cfg;
  cfg.channels = c.channels;
  cfg.layer_count = c.layers;
  const AdrModel model = random_model(cfg, seed);
  std::mt19937_64 rng(seed + 100);
  Batch batch{random_grid(rng, c.batch, 1, c.size, c.size, 0, 1),
              random_grid(rng, c.batch, 1, c.size, c.size, 0, 1)};
  return gradcheck(model, batch, c.step, bo);
}

inline std::vector<Check> suite_gradcheck(const Options& o) {
  Real worst = 0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    worst = std::max(worst, gradcheck_case(o.seed + s, {}, backward_options(o.fault)).worst());
  }
  return {detail::check("gradcheck", "parameter gradients match central differences", worst, 1e-4)};
}

inline std::vector<Check> suite_metrics(const Options& o) {
  std::mt19937_64 rng(o.seed + 4);
  const Tensor x = random_grid(rng, 2, 1, 16, 16, 0.1, 1);
  Tensor y = x;
  for (Real& v : y.data()) v += 0.1;
  std::vector<Check> out;
  out.push_back(detail::check("metrics", "ssim(x, x) = 1", std::abs(metrics::ssim(x, x, 1.0) - 1), 1e-12));
  out.push_back(detail::check("metrics", "psnr at mse 0.01 and max 1 is 20 dB",
                              std::abs(metrics::psnr(y, x, 1.0) - 20), 1e-10));
  Real naive = 0;
  for (std::size_t i = 0; i < x.size(); ++i) naive += (y[i] - x[i]) * (y[i] - x[i]);
  naive /= static_cast<Real>(x.size());
  out.push_back(detail::check("metrics", "mse matches the loop sum",
                              std::abs(metrics::mse(y, x) - naive), 1e-12));
  return out;
}

struct Suite {
  const char* name;
  std::vector<Check> (*run)(const Options&);
};

inline const std::vector<Suite>& suites() {
  static const std::vector<Suite> all{
      {"adjoint", suite_adjoint},     {"conservation", suite_conservation},
      {"dct", suite_dct},             {"solver", suite_solver},
      {"stability", suite_stability}, {"gradcheck", suite_gradcheck},
      {"metrics", suite_metrics}};
  return all;
}

/// Runs the named suites (all of them when `only` is empty).
inline std::vector<Check> run(const std::vector<std::string>& only, const Options& o = {}) {
  for (const auto& name : only) {
    if (std::none_of(suites().begin(), suites().end(), [&](const Suite& s) { return name == s.name; })) {
      throw Error("unknown verify suite '" + name + "'");
    }
  }
  std::vector<Check> out;
  for (const auto& s : suites()) {
    if (!only.empty() && std::find(only.begin(), only.end(), s.name) == only.end()) continue;
    auto part = s.run(o);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

inline bool all_passed(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

inline void write_text(std::ostream& os, const std::vector<Check>& checks) {
  for (const auto& c : checks) {
    os << (c.passed ? "PASS " : "FAIL ") << c.suite << ": " << c.property << " (measured "
       << c.measured << ", tolerance " << c.tolerance << ")\n";
  }
}

inline void write_csv(std::ostream& os, const std::vector<Check>& checks) {
  os.precision(17);
  os << "suite,property,passed,measured,tolerance\n";
  for (const auto& c : checks) {
    os << c.suite << ",\"" << c.property << "\"," << (c.passed ? 1 : 0) << "," << c.measured << ","
       << c.tolerance << "\n";
  }
}

}  // namespace adrflow::verify

#endif  // ADRFLOW_VERIFY_HPP

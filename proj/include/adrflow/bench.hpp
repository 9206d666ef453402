#ifndef ADRFLOW_BENCH_HPP
#define ADRFLOW_BENCH_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "adrflow/advection.hpp"
#include "adrflow/diffusion.hpp"

/// Wall-clock scaling of the grid operators against a dense direct solve.
namespace adrflow::bench {

struct Timing {
  std::string op;
  std::size_t size = 0;
  std::size_t repeats = 0;
  std::size_t calls = 0;  // calls per repeat
  Real median = 0, min = 0, max = 0;  // seconds per call
};

struct Options {
  std::vector<std::size_t> sizes{32, 64, 128, 256};
  std::size_t repeats = 5;
  std::size_t dense_max = 64;  // a dense N^2 x N^2 LU beyond this needs > 1 GB
  Real min_repeat_seconds = 0.05;
  std::uint64_t seed = 0;
};

/// Calls `f` enough times per repeat to fill `min_seconds`, then reports the
/// per-call median, min and max over the repeats.
template <class F>
Timing time_op(std::string op, std::size_t size, std::size_t repeats, Real min_seconds, F&& f) {
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::duration d) { return std::chrono::duration<Real>(d).count(); };
  auto t0 = clock::now();
  f();
  const Real once = std::max(seconds(clock::now() - t0), 1e-9);
  const std::size_t calls = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(min_seconds / once)));
  std::vector<Real> per_call;
  for (std::size_t r = 0; r < repeats; ++r) {
    t0 = clock::now();
    for (std::size_t k = 0; k < calls; ++k) f();
    per_call.push_back(seconds(clock::now() - t0) / static_cast<Real>(calls));
  }
  std::sort(per_call.begin(), per_call.end());
  const std::size_t n = per_call.size();
  const Real median = n % 2 ? per_call[n / 2] : 0.5 * (per_call[n / 2 - 1] + per_call[n / 2]);
  return Timing{std::move(op), size, repeats, calls, median, per_call.front(), per_call.back()};
}

/// Id - h kappa Lap on an n x n Neumann grid, assembled densely.
inline Eigen::MatrixXd dense_operator(std::size_t n, Real hk) {
  const Eigen::Index N = static_cast<Eigen::Index>(n * n);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(N, N);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const auto p = static_cast<Eigen::Index>(r * n + c);
      auto link = [&](std::size_t rr, std::size_t cc) {
        const auto q = static_cast<Eigen::Index>(rr * n + cc);
        a(p, q) -= hk;
        a(p, p) += hk;
      };
      if (r > 0) link(r - 1, c);
      if (r + 1 < n) link(r + 1, c);
      if (c > 0) link(r, c - 1);
      if (c + 1 < n) link(r, c + 1);
    }
  return a;
}

inline std::vector<Timing> run(const Options& o) {
  std::vector<Timing> out;
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<Real> unit(0, 1), disp(-2, 2);
  const Real h = 1.0;
  const std::vector<Real> kappa{1.0};
  for (std::size_t n : o.sizes) {
    Tensor field = grid(1, 1, n, n);
    for (Real& v : field.data()) v = unit(rng);
    Tensor u = grid(1, 2, n, n);
    for (Real& v : u.data()) v = disp(rng);
    Real sink = 0;
    auto keep = [&](const Tensor& t) { sink += t[0]; };

    out.push_back(time_op("push_color", n, o.repeats, o.min_repeat_seconds,
                          [&] { keep(push_color(field, u)); }));
    out.push_back(time_op("push_mass", n, o.repeats, o.min_repeat_seconds,
                          [&] { keep(push_mass(field, u)); }));
    const DctPlan matrix(n, n, DctBackend::Matrix);
    out.push_back(time_op("diffuse_implicit_dct_matrix", n, o.repeats, o.min_repeat_seconds,
                          [&] { keep(diffuse_implicit(field, kappa, h, matrix)); }));
    if (fftw_available()) {
      const DctPlan fast(n, n, DctBackend::Fftw);
      out.push_back(time_op("diffuse_implicit_dct_fftw", n, o.repeats, o.min_repeat_seconds,
                            [&] { keep(diffuse_implicit(field, kappa, h, fast)); }));
    }
    if (n <= o.dense_max) {
      const Eigen::MatrixXd a = dense_operator(n, h * kappa[0]);
      const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(field.data().data(),
                                                                  static_cast<Eigen::Index>(n * n));
      out.push_back(time_op("dense_solve", n, o.repeats, o.min_repeat_seconds, [&] {
        Eigen::VectorXd x = a.partialPivLu().solve(b);
        sink += x[0];
      }));
    }
    if (!std::isfinite(sink)) throw NumericError("bench: non-finite result");
  }
  return out;
}

/// Least-squares slope of log(median time) against log(size) for `op`;
/// NaN when the op ran on fewer than two sizes.
inline Real growth_exponent(const std::vector<Timing>& timings, const std::string& op) {
  std::vector<Real> x, y;
  for (const auto& t : timings) {
    if (t.op != op) continue;
    x.push_back(std::log(static_cast<Real>(t.size)));
    y.push_back(std::log(t.median));
  }
  if (x.size() < 2) return std::numeric_limits<Real>::quiet_NaN();
  const Real n = static_cast<Real>(x.size());
  Real sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Median time at `b` over median time at `a`; NaN if either is missing.
inline Real growth_ratio(const std::vector<Timing>& timings, const std::string& op, std::size_t a,
                         std::size_t b) {
  Real ta = 0, tb = 0;
  for (const auto& t : timings) {
    if (t.op != op) continue;
    if (t.size == a) ta = t.median;
    if (t.size == b) tb = t.median;
  }
  return ta > 0 && tb > 0 ? tb / ta : std::numeric_limits<Real>::quiet_NaN();
}

inline void write_csv(std::ostream& os, const std::vector<Timing>& timings) {
  os.precision(9);
  os << "op,size,repeats,calls_per_repeat,median_s,min_s,max_s\n";
  for (const auto& t : timings) {
    os << t.op << "," << t.size << "," << t.repeats << "," << t.calls << "," << t.median << ","
       << t.min << "," << t.max << "\n";
  }
}

}  // namespace adrflow::bench

#endif  // ADRFLOW_BENCH_HPP

// Exit gate: one PASS/FAIL line per acceptance criterion, with the measured
// quantities and wall time. `acceptance N [N...]` runs a subset.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "adrflow/adrflow.hpp"
#include "adrflow/bench.hpp"

using namespace adrflow;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

// Tolerances and budgets, pinned here.
constexpr Real kFig1Fit = 1e-8;
constexpr Real kFig1BaselineFloor = 1e-3;
constexpr Real kParamBudget = 0.20;
constexpr Real kAdjointTol = 1e-12;
constexpr Real kConservationTol = 1e-12;
constexpr Real kSolverTol = 1e-10;
constexpr Real kNoAmplification = 1e-12;
constexpr Real kGradTol = 1e-4;
constexpr Real kBlobOneStep = 5e-2;
constexpr Real kBlobTenStep = 2e-1;
constexpr Real kMetricOracleTol = 1e-10;
constexpr Real kDenseGrowth = 8.0;  // minimum 32 -> 64 ratio
constexpr Real kDctGrowth = 8.0;    // maximum 32 -> 64 ratio: n log n predicts 4.8, pixel-quadratic 16

std::string fmt(Real v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// Criterion 1: single-pixel transport with and without advection.
Outcome fig1() {
  const RunConfig rc = preset("fig1");
  const auto [seqs, unused] = generate_dataset(rc.data);
  const auto data = windows_of(seqs, rc.model.history_len, 1);
  AdrModel adr = init_model(rc.model, rc.train.seed);
  const Real adr_loss = train(adr, data, rc.train).final_train_loss;
  AdrModel base = init_model(no_advection_baseline(rc.model), rc.train.seed);
  const Real base_loss = train(base, data, rc.train).final_train_loss;
  const Real pa = static_cast<Real>(adr.parameter_count()), pb = static_cast<Real>(base.parameter_count());
  const bool budget = std::abs(pb - pa) <= kParamBudget * pa;
  return {adr_loss < kFig1Fit && base_loss > kFig1BaselineFloor && budget,
          "adr mse " + fmt(adr_loss) + " (< " + fmt(kFig1Fit) + "), residual-conv mse " + fmt(base_loss) +
              " (> " + fmt(kFig1BaselineFloor) + "), " + std::to_string(rc.train.epochs) +
              " iterations, params " + fmt(pa) + " vs " + fmt(pb)};
}

// Criterion 2: mass matrix is the color matrix transposed.
Outcome adjoint() {
  std::mt19937_64 rng(2);
  Real worst = 0;
  int cases = 0;
  for (std::size_t n : {4, 8}) {
    for (int t = 0; t < 50; ++t, ++cases) {
      const Real reach = t < 25 ? 1.0 : 1.5 * static_cast<Real>(n);  // half of them leave the grid
      const Tensor u = verify::random_grid(rng, 1, 2, n, n, -reach, reach);
      const Tensor mass = assemble_push_matrix(u, PushMode::Mass, 0);
      const Tensor color = assemble_push_matrix(u, PushMode::Color, 0);
      const std::size_t hw = n * n;
      for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t j = 0; j < hw; ++j) worst = std::max(worst, std::abs(mass[i * hw + j] - color[j * hw + i]));
    }
  }
  return {worst <= kAdjointTol, std::to_string(cases) + " random U on 4x4 and 8x8, max entry gap " + fmt(worst)};
}

// Criterion 3: push_mass conserves each channel's sum.
Outcome conservation() {
  std::mt19937_64 rng(3);
  Real worst = 0;
  int leaving = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t h = 2 + rng() % 15, w = 2 + rng() % 15, c = 1 + rng() % 3;
    const Tensor field = verify::random_grid(rng, 1, c, h, w, -1, 1);
    const Real reach = t % 2 ? 3.0 * static_cast<Real>(std::max(h, w)) : 1.0;
    const Tensor u = verify::random_grid(rng, 1, 2 * c, h, w, -reach, reach);
    const Tensor out = push_mass(field, u);
    for (Real v : u.data())
      if (std::abs(v) > static_cast<Real>(std::max(h, w))) {
        ++leaving;
        break;
      }
    for (std::size_t k = 0; k < c; ++k) {
      Real before = 0, after = 0, scale = 0;
      for (Real v : field.plane(0, k)) before += v, scale += std::abs(v);
      for (Real v : out.plane(0, k)) after += v;
      worst = std::max(worst, std::abs(after - before) / scale);
    }
  }
  return {worst <= kConservationTol,
          "1000 pairs (" + std::to_string(leaving) + " with displacements off the grid), max relative sum change " +
              fmt(worst)};
}

// Criterion 4: DCT solve against an LU solve of the assembled operator.
Outcome solver() {
  std::mt19937_64 rng(4);
  const DctPlan plan(8, 8);
  Real worst = 0;
  for (Real kappa : {0.01, 1.0, 100.0}) {
    for (Real h : {0.1, 1.0}) {
      const Tensor x = verify::random_grid(rng, 1, 1, 8, 8, -1, 1);
      const Tensor got = diffuse_implicit(x, std::vector<Real>{kappa}, h, plan);
      const Eigen::MatrixXd a = bench::dense_operator(8, h * kappa);
      const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(x.data().data(), 64);
      const Eigen::VectorXd want = a.fullPivLu().solve(b);
      for (Eigen::Index i = 0; i < 64; ++i) worst = std::max(worst, std::abs(got[static_cast<std::size_t>(i)] - want[i]));
    }
  }
  return {worst <= kSolverTol, "8x8, kappa {0.01,1,100} x h {0.1,1}, max abs gap " + fmt(worst)};
}

// Criterion 5: spectral amplification, measured with a direct cosine sum.
Real mode_gain(std::size_t n, std::size_t i, std::size_t j, Real hk, bool implicit) {
  const Real pi = std::numbers::pi;
  Tensor mode = grid(1, 1, n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      mode.at(0, 0, r, c) = std::cos(pi * (2.0 * r + 1) * i / (2.0 * n)) * std::cos(pi * (2.0 * c + 1) * j / (2.0 * n));
  const std::vector<Real> kappa{hk};
  const Tensor out = implicit ? diffuse_implicit(mode, kappa, 1.0, *shared_dct_plan(n, n))
                              : diffuse_explicit(mode, kappa, 1.0);
  const auto cin = verify::naive_dct2(mode.data(), n, n);
  const auto cout = verify::naive_dct2(out.data(), n, n);
  return std::abs(cout[i * n + j]) / std::abs(cin[i * n + j]);
}

Outcome stability() {
  Real implicit_worst = 0;
  std::mt19937_64 rng(5);
  for (std::size_t n : {8, 16})
    for (Real h : {0.01, 1.0, 100.0})
      for (Real kappa : {1e-3, 1.0, 1e3, 1e6}) {
        // a random field: every coefficient must shrink or stay
        const Tensor x = verify::random_grid(rng, 1, 1, n, n, -1, 1);
        const Tensor y = diffuse_implicit(x, std::vector<Real>{kappa}, h, *shared_dct_plan(n, n));
        const auto cx = verify::naive_dct2(x.data(), n, n), cy = verify::naive_dct2(y.data(), n, n);
        for (std::size_t k = 0; k < cx.size(); ++k)
          implicit_worst = std::max(implicit_worst, std::abs(cy[k]) - std::abs(cx[k]));
      }
  const std::size_t n = 8;
  const Real top_unstable = mode_gain(n, n - 1, n - 1, 0.3, false);
  Real stable_worst = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) stable_worst = std::max(stable_worst, mode_gain(n, i, j, 0.25, false));
  const bool ok = implicit_worst <= kNoAmplification && top_unstable > 1 && stable_worst <= 1 + kNoAmplification;
  return {ok, "implicit max coefficient growth " + fmt(implicit_worst) + " up to h*kappa*lambda = 8e8; explicit gain " +
                  fmt(top_unstable) + " on the highest mode at 0.3, max " + fmt(stable_worst) + " at 0.25"};
}

// Criterion 6: end-to-end gradients over 10 seeds.
Outcome gradients() {
  Real worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) worst = std::max(worst, verify::gradcheck_case(seed).worst());
  return {worst < kGradTol, "2 layers, c=4, 6x6, 10 seeds, worst group relative error " + fmt(worst)};
}

// Criterion 7: advection generalisation on held-out blob sequences.
Outcome blobs() {
  const RunConfig rc = preset("blob");
  const auto [train_seqs, val_seqs] = generate_dataset(rc.data);
  AdrModel model = init_model(rc.model, rc.train.seed);
  const auto train_set = windows_of(train_seqs, rc.model.history_len, rc.train.unroll);
  const Real loss = train(model, train_set, rc.train).final_train_loss;
  const Real one = evaluate_rollout(model, val_seqs, 1).report.nrmse;
  const Real ten = evaluate_rollout(model, val_seqs, 10).report.nrmse;
  return {one < kBlobOneStep && ten < kBlobTenStep,
          std::to_string(train_seqs.size()) + " train / " + std::to_string(val_seqs.size()) +
              " held-out sequences, train mse " + fmt(loss) + ", one-step nRMSE " + fmt(one) + " (< " +
              fmt(kBlobOneStep) + "), 10-step nRMSE " + fmt(ten) + " (< " + fmt(kBlobTenStep) + ")"};
}

// Criterion 8: metric identities and loop oracles.
Real loop_ssim(const Tensor& x, const Tensor& y) {
  const int win = 11;
  Real g[11], gs = 0;
  for (int i = 0; i < win; ++i) gs += g[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2 * 1.5 * 1.5));
  const Real c1 = 1e-4, c2 = 9e-4;
  Real total = 0;
  for (std::size_t n = 0; n < x.batch(); ++n) {
    Real acc = 0;
    int count = 0;
    for (std::size_t r0 = 0; r0 + win <= x.height(); ++r0)
      for (std::size_t q0 = 0; q0 + win <= x.width(); ++q0, ++count) {
        Real mx = 0, my = 0, vx = 0, vy = 0, cv = 0;
        for (int a = 0; a < win; ++a)
          for (int b = 0; b < win; ++b) {
            const Real wt = g[a] * g[b] / (gs * gs);
            mx += wt * x.at(n, 0, r0 + a, q0 + b);
            my += wt * y.at(n, 0, r0 + a, q0 + b);
          }
        for (int a = 0; a < win; ++a)
          for (int b = 0; b < win; ++b) {
            const Real wt = g[a] * g[b] / (gs * gs);
            const Real dx = x.at(n, 0, r0 + a, q0 + b) - mx, dy = y.at(n, 0, r0 + a, q0 + b) - my;
            vx += wt * dx * dx, vy += wt * dy * dy, cv += wt * dx * dy;
          }
        acc += (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    total += acc / count;
  }
  return total / static_cast<Real>(x.batch());
}

Outcome metric_suite() {
  std::mt19937_64 rng(8);
  const Tensor x = verify::random_grid(rng, 3, 1, 16, 16, 0.05, 1);
  const Real self = metrics::ssim(x, x, 1.0);
  // one unit residual among 100 pixels: MSE is exactly the double nearest 0.01
  Tensor t = grid(1, 1, 10, 10), p = grid(1, 1, 10, 10);
  p[37] = 1.0;
  const Real db = metrics::psnr(p, t, 1.0);

  Real worst = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = verify::random_grid(rng, 4, 1, 16, 16, 0.05, 1);
    const Tensor b = verify::random_grid(rng, 4, 1, 16, 16, 0.05, 1);
    const Real L = 256;
    Real mse = 0, mae = 0, rmse = 0, nmse = 0, nrmse = 0, psnr = 0;
    for (std::size_t n = 0; n < 4; ++n) {
      Real sq = 0, ab = 0, rel = 0;
      for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t q = 0; q < 16; ++q) {
          const Real d = a.at(n, 0, r, q) - b.at(n, 0, r, q);
          sq += d * d, ab += std::abs(d), rel += d * d / (b.at(n, 0, r, q) * b.at(n, 0, r, q));
        }
      mse += sq / L / 4, mae += ab / L / 4, rmse += std::sqrt(sq / L) / 4;
      nmse += rel / L / 4, nrmse += std::sqrt(rel / L) / 4, psnr += 10 * std::log10(L / sq) / 4;
    }
    const auto r = metrics::report(a, b);
    for (auto [got, want] : {std::pair{r.mse, mse}, {r.mae, mae}, {r.rmse, rmse}, {r.nmse, nmse},
                             {r.nrmse, nrmse}, {r.psnr, psnr}, {r.ssim, loop_ssim(a, b)}})
      worst = std::max(worst, std::abs(got - want));
  }
  return {self == 1.0 && db == 20.0 && worst <= kMetricOracleTol,
          "ssim(x,x) = " + fmt(self) + ", psnr = " + fmt(db) + " dB (exact: " + (db == 20.0 ? "yes" : "no") +
              "), worst gap to loop oracles " + fmt(worst)};
}

// Criterion 9: time-vs-size growth, DCT path against the dense solve.
Outcome complexity() {
  bench::Options o;
  o.repeats = 5;
  const auto t = bench::run(o);
  const std::string dct = fftw_available() ? "diffuse_implicit_dct_fftw" : "diffuse_implicit_dct_matrix";
  const Real e_dct = bench::growth_exponent(t, dct), e_dense = bench::growth_exponent(t, "dense_solve");
  const Real r_dct = bench::growth_ratio(t, dct, 32, 64), r_dense = bench::growth_ratio(t, "dense_solve", 32, 64);
  return {e_dct < e_dense && r_dense >= kDenseGrowth && r_dct <= kDctGrowth,
          dct + " exponent " + fmt(e_dct) + " over 32..256 vs dense " + fmt(e_dense) + " over 32..64 (dense capped at " +
              std::to_string(o.dense_max) + "); 32->64 ratios dense " + fmt(r_dense) + ", dct " + fmt(r_dct)};
}

struct Criterion {
  int id;
  const char* name;
  Real budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "fig1-transport", 120, fig1},         {2, "adjoint-oracle", 10, adjoint},
      {3, "mass-conservation", 5, conservation}, {4, "solver-oracle", 10, solver},
      {5, "stability", 5, stability},           {6, "gradient-suite", 120, gradients},
      {7, "blob-generalisation", 900, blobs},   {8, "metrics-self-test", 5, metric_suite},
      {9, "complexity", 300, complexity}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool ok = true;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const Real s = std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = s <= c.budget_s;
    const bool pass = o.passed && in_time;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.id << " " << c.name << ": " << o.detail << "; " << fmt(s)
              << " s (budget " << c.budget_s << " s" << (in_time ? "" : ", exceeded") << ")" << std::endl;
  }
  return ok ? 0 : 1;
}

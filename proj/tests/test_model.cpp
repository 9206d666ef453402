#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adrflow/advection.hpp"
#include "adrflow/diffusion.hpp"
#include "adrflow/model.hpp"
#include "test_util.hpp"

using namespace adrflow;

namespace {

// A SiLU MLP that passes `in` channel 0 through to `out` channel 0: silu(x + 50)
// equals x + 50 to far below double round-off, and the second layer removes
// the shift. Other output channels are zero.
Mlp1x1Params pass_through(std::size_t in, std::size_t hidden, std::size_t out) {
  Mlp1x1Params p{{Tensor(Shape{hidden, in}), Tensor(Shape{hidden})},
                 {Tensor(Shape{out, hidden}), Tensor(Shape{out})}};
  p.first.weight[0] = 1;
  p.first.bias[0] = 50;
  p.second.weight[0] = 1;
  p.second.bias[0] = -50;
  return p;
}

// One layer that does nothing except push by the constant displacement (ur, uc).
AdrModel transport_model(std::size_t c, PushMode mode, Real ur, Real uc) {
  ModelConfig cfg;
  cfg.channels = c;
  cfg.push_mode = mode;
  AdrModel m = init_model(cfg, 0);
  m.embed = pass_through(1, cfg.mlp_hidden(), c);
  m.project = pass_through(c, cfg.mlp_hidden(), 1);
  auto& layer = m.layers[0];
  layer.reaction.second.weight = Tensor(layer.reaction.second.weight.shape());
  layer.reaction.second.bias = Tensor(layer.reaction.second.bias.shape());
  for (Real& v : layer.kappa.raw.data()) v = -80;  // softplus(-80) ~ 1e-35
  for (std::size_t k = 0; k < c; ++k) {
    layer.flow->output.bias[2 * k] = ur;
    layer.flow->output.bias[2 * k + 1] = uc;
  }
  return m;
}

Tensor blob(std::size_t n, Real cr, Real cc, Real sigma) {
  Tensor t = grid(1, 1, n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      t.at(0, 0, r, c) = std::exp(-((r - cr) * (r - cr) + (c - cc) * (c - cc)) / (2 * sigma * sigma));
  return t;
}

}  // namespace

TEST(ModelConfig, RejectsInvalid) {
  ModelConfig cfg;
  cfg.channels = 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.channels = 4;
  cfg.layer_count = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(DisplacementNet, ZeroAtInitialisation) {
  std::mt19937_64 rng(1);
  const DisplacementNetParams p = init_displacement_net(3, 5, 6, 2, rng);
  EXPECT_EQ(max_abs(p.output.kernel), 0.0);
  EXPECT_EQ(max_abs(p.output.bias), 0.0);
  EXPECT_EQ(max_abs(displacement_net(testutil::random_grid(rng, 2, 3, 5, 5), p)), 0.0);
}

TEST(DisplacementNet, ConstantBiasGivesConstantFlow) {
  std::mt19937_64 rng(2);
  DisplacementNetParams p = init_displacement_net(2, 4, 4, 1, rng);
  for (Real& v : p.output.bias.data()) v = 0.5;
  const Tensor u = displacement_net(testutil::random_grid(rng, 1, 2, 4, 4), p);
  for (Real v : u.data()) EXPECT_EQ(v, 0.5);
}

TEST(DisplacementNet, MatchesStraightLineBlocks) {
  std::mt19937_64 rng(3);
  DisplacementNetParams p = init_displacement_net(2, 3, 4, 2, rng);
  p.output = init_conv(3, 4, rng);
  const Tensor x = testutil::random_grid(rng, 1, 2, 4, 4);
  auto act = [](Tensor t) {
    for (Real& v : t.data()) v = silu(v);
    return t;
  };
  Tensor h = act(conv3x3(x, p.input));
  for (const auto& blk : p.blocks) {
    const Tensor t = conv3x3(act(conv3x3(h, blk.a)), blk.b);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += t[i];
  }
  EXPECT_LT(max_abs_diff(displacement_net(x, p), conv3x3(h, p.output)), 1e-14);
}

TEST(DisplacementNet, ShapeMismatchRejected) {
  std::mt19937_64 rng(4);
  const DisplacementNetParams p = init_displacement_net(2, 3, 4, 1, rng);
  EXPECT_THROW(displacement_net(grid(1, 3, 4, 4), p), ShapeError);
}

TEST(AdrLayer, ZeroInitHasNoAdvection) {
  ModelConfig cfg;
  cfg.channels = 3;
  const AdrModel m = init_model(cfg, 5);
  std::mt19937_64 rng(5);
  const Tensor x = testutil::random_grid(rng, 1, 3, 5, 5);
  const auto& p = m.layers[0];
  const Tensor reacted = reaction_step(x, p.reaction, cfg.h);
  const Tensor want = diffuse_implicit(reacted, p.kappa.effective().data(), cfg.h, DctPlan(5, 5));
  EXPECT_LT(max_abs_diff(adr_layer(x, p, cfg), want), 1e-14);
}

TEST(AdrLayer, ConstantIntegerFlowShiftsOneRow) {
  const AdrModel m = transport_model(2, PushMode::Color, -1.0, 0.0);
  std::mt19937_64 rng(6);
  const Tensor x = testutil::random_grid(rng, 1, 2, 5, 4);
  const Tensor y = adr_layer(x, m.layers[0], m.config);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 1; r < 5; ++r)
      for (std::size_t q = 0; q < 4; ++q) EXPECT_NEAR(y.at(0, c, r, q), x.at(0, c, r - 1, q), 1e-14);
}

TEST(AdrLayer, EqualsComposedModuleOperations) {
  ModelConfig cfg;
  cfg.channels = 2;
  cfg.h = 0.7;
  for (PushMode mode : {PushMode::Mass, PushMode::Color}) {
    cfg.push_mode = mode;
    AdrModel m = init_model(cfg, 7);
    std::mt19937_64 rng(7);
    auto& p = m.layers[0];
    p.flow->output = init_conv(cfg.flow_hidden(), 4, rng);
    p.kappa.raw = testutil::random_like(rng, Shape{2});
    const Tensor x = testutil::random_grid(rng, 1, 2, 4, 4);
    const Tensor dr = diffuse_implicit(reaction_step(x, p.reaction, cfg.h), p.kappa.effective().data(),
                                       cfg.h, DctPlan(4, 4));
    const Tensor want = push(mode, dr, displacement_net(dr, *p.flow));
    EXPECT_LT(max_abs_diff(adr_layer(x, p, cfg), want), 1e-13);
  }
}

TEST(AdrLayer, FlowFromHistoryUsesRawWindow) {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.history_len = 1;
  cfg.flow_from_history = true;
  AdrModel m = init_model(cfg, 8);
  std::mt19937_64 rng(8);
  auto& p = m.layers[0];
  p.flow->output = init_conv(cfg.flow_hidden(), 6, rng);
  const Tensor x = testutil::random_grid(rng, 1, 3, 5, 5);
  const Tensor hist = testutil::random_grid(rng, 1, 2, 5, 5);
  const Tensor dr = diffuse_implicit(reaction_step(x, p.reaction, cfg.h), p.kappa.effective().data(),
                                     cfg.h, DctPlan(5, 5));
  const Tensor want = push_color(dr, displacement_net(hist, *p.flow));
  EXPECT_LT(max_abs_diff(adr_layer(x, p, cfg, &hist), want), 1e-13);
}

TEST(Forward, ZeroInitEqualsModelWithoutAdvection) {
  ModelConfig cfg;
  cfg.channels = 4;
  cfg.layer_count = 3;
  const AdrModel m = init_model(cfg, 9);
  AdrModel plain = m;
  for (auto& layer : plain.layers) layer.flow.reset();
  std::mt19937_64 rng(9);
  const HistoryWindow w{{testutil::random_grid(rng, 2, 1, 6, 6)}};
  EXPECT_LT(max_abs_diff(forward(m, w), forward(plain, w)), 1e-12);
}

TEST(Forward, PassThroughModelReturnsInput) {
  const AdrModel m = transport_model(2, PushMode::Color, 0.0, 0.0);
  std::mt19937_64 rng(10);
  const Tensor q = testutil::random_grid(rng, 1, 1, 5, 5);
  EXPECT_LT(max_abs_diff(forward(m, HistoryWindow{{q}}), q), 1e-12);
}

TEST(Forward, IsDeterministic) {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.history_len = 2;
  AdrModel m = init_model(cfg, 11);
  std::mt19937_64 rng(11);
  m.layers[0].flow->output = init_conv(cfg.flow_hidden(), 6, rng);
  HistoryWindow w;
  for (int k = 0; k < 3; ++k) w.frames.push_back(testutil::random_grid(rng, 1, 1, 5, 5));
  EXPECT_EQ(forward(m, w).vec(), forward(m, w).vec());
}

TEST(Forward, HistoryLengthMismatchRejected) {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.history_len = 2;
  const AdrModel m = init_model(cfg, 12);
  EXPECT_THROW(forward(m, HistoryWindow{{grid(1, 1, 4, 4), grid(1, 1, 4, 4)}}), Error);
}

// The Figure 1 capability, asserted constructively: one push with a hand-set
// displacement carries the bottom-left delta to the top-right corner.
TEST(Forward, HandSetFlowMovesCornerToCorner) {
  for (PushMode mode : {PushMode::Mass, PushMode::Color}) {
    const Real s = mode == PushMode::Mass ? 1.0 : -1.0;
    const AdrModel m = transport_model(2, mode, -5.0 * s, 5.0 * s);
    Tensor src = grid(1, 1, 6, 6), dst = grid(1, 1, 6, 6);
    src.at(0, 0, 5, 0) = 1;
    dst.at(0, 0, 0, 5) = 1;
    const Tensor out = forward(m, HistoryWindow{{src}});
    // push_color replicates the clamped corner, so only the mass form leaves
    // the rest of the grid empty
    if (mode == PushMode::Mass) EXPECT_LT(max_abs_diff(out, dst), 1e-12);
    else EXPECT_NEAR(out.at(0, 0, 0, 5), 1.0, 1e-12);
  }
}

TEST(Forward, MassModeConservesFeatureSums) {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.layer_count = 3;
  cfg.push_mode = PushMode::Mass;
  AdrModel m = init_model(cfg, 13);
  std::mt19937_64 rng(13);
  for (auto& layer : m.layers) {
    layer.reaction.second.weight = Tensor(layer.reaction.second.weight.shape());
    layer.reaction.second.bias = Tensor(layer.reaction.second.bias.shape());
    layer.flow->output = init_conv(cfg.flow_hidden(), 6, rng);
    for (Real& v : layer.flow->output.kernel.data()) v *= 10;
  }
  Tensor state = testutil::random_grid(rng, 1, 3, 6, 6);
  for (const auto& layer : m.layers) {
    const Tensor next = adr_layer(state, layer, cfg);
    for (std::size_t c = 0; c < 3; ++c) {
      Real a = 0, b = 0;
      for (Real v : state.plane(0, c)) a += v;
      for (Real v : next.plane(0, c)) b += v;
      EXPECT_NEAR(a, b, 1e-12);
    }
    state = next;
  }
}

TEST(Rollout, OneStepEqualsForward) {
  ModelConfig cfg;
  cfg.channels = 3;
  const AdrModel m = init_model(cfg, 14);
  std::mt19937_64 rng(14);
  const HistoryWindow w{{testutil::random_grid(rng, 1, 1, 5, 5)}};
  EXPECT_EQ(rollout(m, w, 1).at(0).vec(), forward(m, w).vec());
  EXPECT_THROW(rollout(m, w, 0), Error);
}

TEST(Rollout, PassThroughModelRepeatsLastFrame) {
  const AdrModel m = transport_model(2, PushMode::Color, 0.0, 0.0);
  std::mt19937_64 rng(15);
  const Tensor q = testutil::random_grid(rng, 1, 1, 5, 5);
  for (const Tensor& f : rollout(m, HistoryWindow{{q}}, 6)) EXPECT_LT(max_abs_diff(f, q), 1e-12);
}

TEST(Rollout, HandBuiltModelTracksTranslatingBlob) {
  const std::size_t n = 32;
  const Real sigma = 1.2;
  const AdrModel m = transport_model(2, PushMode::Color, -1.0, 0.0);
  const auto frames = rollout(m, HistoryWindow{{blob(n, 10, 16, sigma)}}, 10);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_LT(max_abs_diff(frames[t], blob(n, 11.0 + t, 16, sigma)), 1e-10) << "step " << t + 1;
  }
}

TEST(Baseline, ParameterBudgetWithinTwentyPercent) {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.flow_from_history = true;
  const ModelConfig base = no_advection_baseline(cfg);
  const AdrModel a = init_model(cfg, 0), b = init_model(base, 0);
  EXPECT_FALSE(b.layers[0].flow.has_value());
  EXPECT_TRUE(b.layers[0].fused.has_value());
  const Real ratio = static_cast<Real>(b.parameter_count()) / static_cast<Real>(a.parameter_count());
  EXPECT_GT(ratio, 0.8);
  EXPECT_LT(ratio, 1.2);
}

TEST(Parameters, GroupsAndCount) {
  ModelConfig cfg;
  cfg.channels = 4;
  cfg.layer_count = 2;
  const AdrModel m = init_model(cfg, 0);
  std::set<std::string> groups;
  std::size_t total = 0;
  m.for_each_parameter([&](const std::string&, const std::string& g, const Tensor& t) {
    groups.insert(g);
    total += t.size();
  });
  EXPECT_EQ(total, m.parameter_count());
  for (const char* g : {"embed", "layer0.reaction", "layer0.kappa", "layer0.flow", "layer1.flow", "project"}) {
    EXPECT_TRUE(groups.count(g)) << g;
  }
  EXPECT_EQ(m.layers[0].flow->output.kernel.shape()[0], 2 * cfg.channels);
}

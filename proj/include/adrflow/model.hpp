#ifndef ADRFLOW_MODEL_HPP
#define ADRFLOW_MODEL_HPP

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "adrflow/advection.hpp"
#include "adrflow/diffusion.hpp"
#include "adrflow/ops.hpp"
#include "adrflow/reaction.hpp"
#include "adrflow/tape.hpp"
#include "adrflow/tensor.hpp"

namespace adrflow {

enum class DiffusionScheme { Implicit, Explicit };

struct ModelConfig {
  std::size_t in_channels = 1;  // m: channels of one data frame
  std::size_t channels = 8;     // c: hidden feature channels
  std::size_t mlp_width = 0;    // hidden width of every 1x1 MLP; 0 means `channels`
  std::size_t layer_count = 1;
  Real h = 1.0;
  PushMode push_mode = PushMode::Color;
  bool advection = true;
  bool flow_from_history = false;  // displacement from the raw window instead of I_DR
  bool fused_dr = false;           // residual 3x3 block instead of reaction + diffusion
  bool shared_flow = false;        // one displacement pair for all channels
  std::size_t reaction_substeps = 1;
  std::size_t history_len = 0;     // j: the window holds j + 1 frames
  std::size_t flow_blocks = 2;
  std::size_t flow_width = 0;      // 0 means `channels`
  std::size_t fused_width = 0;     // 0 means `channels`
  Real kappa_init = 1e-3;
  DiffusionScheme diffusion = DiffusionScheme::Implicit;

  std::size_t mlp_hidden() const { return mlp_width ? mlp_width : channels; }
  std::size_t flow_hidden() const { return flow_width ? flow_width : channels; }
  std::size_t fused_hidden() const { return fused_width ? fused_width : channels; }
  std::size_t window_frames() const { return history_len + 1; }
  std::size_t stacked_channels() const { return in_channels * window_frames(); }
  std::size_t flow_channels() const { return shared_flow ? 2 : 2 * channels; }

  void validate() const {
    if (layer_count < 1) throw Error("model config: layer_count must be >= 1");
    if (in_channels < 1) throw Error("model config: in_channels must be >= 1");
    if (channels <= in_channels) {
      throw Error("model config: hidden channels (" + std::to_string(channels) +
                  ") must exceed in_channels (" + std::to_string(in_channels) + ")");
    }
    if (reaction_substeps < 1) throw Error("model config: reaction_substeps must be >= 1");
    if (!(h > 0)) throw Error("model config: h must be positive");
    if (!(kappa_init > 0)) throw Error("model config: kappa_init must be positive");
  }
};

/// Residual convolutional network predicting displacements (zero at init).
struct DisplacementNetParams {
  struct Block {
    Conv3x3Params a, b;
  };
  Conv3x3Params input;
  std::vector<Block> blocks;
  Conv3x3Params output;  // zero-initialised
};

struct AdrLayerParams {
  Mlp1x1Params reaction;
  Diffusivity kappa;
  std::optional<DisplacementNetParams> flow;  // absent when advection is disabled
  std::optional<FusedDrParams> fused;         // present only in fused mode
};

/// The frames [q(t_{k-j}) ... q(t_k)], each a [batch][m][H][W] field.
struct HistoryWindow {
  std::vector<Tensor> frames;

  Tensor stacked() const { return concat_channels(frames); }
};

struct AdrModel {
  ModelConfig config;
  Mlp1x1Params embed;    // m(j+1) -> c
  std::vector<AdrLayerParams> layers;
  Mlp1x1Params project;  // c -> m

  /// Calls f(name, group, tensor) for every trainable tensor in a fixed order.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    auto linear = [&](const std::string& base, const std::string& group, auto& lin) {
      f(base + ".weight", group, lin.weight);
      f(base + ".bias", group, lin.bias);
    };
    auto mlp = [&](const std::string& base, const std::string& group, auto& m) {
      linear(base + ".first", group, m.first);
      linear(base + ".second", group, m.second);
    };
    auto conv = [&](const std::string& base, const std::string& group, auto& c) {
      f(base + ".kernel", group, c.kernel);
      f(base + ".bias", group, c.bias);
    };
    mlp("embed", "embed", self.embed);
    for (std::size_t j = 0; j < self.layers.size(); ++j) {
      auto& layer = self.layers[j];
      const std::string base = "layer" + std::to_string(j);
      if (layer.fused) {
        conv(base + ".fused.first", base + ".fused", layer.fused->first);
        conv(base + ".fused.second", base + ".fused", layer.fused->second);
      } else {
        mlp(base + ".reaction", base + ".reaction", layer.reaction);
        f(base + ".kappa.raw", base + ".kappa", layer.kappa.raw);
      }
      if (layer.flow) {
        const std::string g = base + ".flow";
        conv(g + ".input", g, layer.flow->input);
        for (std::size_t b = 0; b < layer.flow->blocks.size(); ++b) {
          conv(g + ".block" + std::to_string(b) + ".a", g, layer.flow->blocks[b].a);
          conv(g + ".block" + std::to_string(b) + ".b", g, layer.flow->blocks[b].b);
        }
        conv(g + ".output", g, layer.flow->output);
      }
    }
    mlp("project", "project", self.project);
  }

  template <class F>
  void for_each_parameter(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each_parameter(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }
};

inline DisplacementNetParams init_displacement_net(std::size_t in, std::size_t width,
                                                   std::size_t out, std::size_t blocks,
                                                   std::mt19937_64& rng) {
  DisplacementNetParams p;
  p.input = init_conv(in, width, rng);
  for (std::size_t b = 0; b < blocks; ++b) {
    DisplacementNetParams::Block blk;
    blk.a = init_conv(width, width, rng);
    blk.b = init_conv(width, width, rng);
    p.blocks.push_back(std::move(blk));
  }
  p.output = zero_conv(width, out);
  return p;
}

inline AdrModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  AdrModel m;
  m.config = cfg;
  const std::size_t c = cfg.channels, w = cfg.mlp_hidden();
  m.embed = init_mlp(cfg.stacked_channels(), w, c, rng);
  for (std::size_t j = 0; j < cfg.layer_count; ++j) {
    AdrLayerParams layer;
    if (cfg.fused_dr) {
      layer.fused = FusedDrParams{init_conv(c, cfg.fused_hidden(), rng),
                                  init_conv(cfg.fused_hidden(), c, rng)};
    } else {
      layer.reaction = init_mlp(c, w, c, rng);
      layer.kappa = Diffusivity::constant(c, cfg.kappa_init);
    }
    if (cfg.advection) {
      const std::size_t flow_in = cfg.flow_from_history ? cfg.stacked_channels() : c;
      layer.flow = init_displacement_net(flow_in, cfg.flow_hidden(), cfg.flow_channels(),
                                         cfg.flow_blocks, rng);
    }
    m.layers.push_back(std::move(layer));
  }
  m.project = init_mlp(c, w, cfg.in_channels, rng);
  return m;
}

/// The advection-free comparison network: fused residual 3x3 blocks with the
/// hidden width chosen so its parameter count is closest to `cfg`'s model.
inline ModelConfig no_advection_baseline(const ModelConfig& cfg) {
  const std::size_t target = init_model(cfg, 0).parameter_count();
  ModelConfig base = cfg;
  base.advection = false;
  base.fused_dr = true;
  // parameter count grows with the width, so the gap is unimodal
  std::size_t best_width = 1, best_gap = static_cast<std::size_t>(-1);
  for (std::size_t w = 1; w <= 16 * cfg.channels; ++w) {
    base.fused_width = w;
    const std::size_t n = init_model(base, 0).parameter_count();
    const std::size_t gap = n > target ? n - target : target - n;
    if (gap >= best_gap) break;
    best_gap = gap;
    best_width = w;
  }
  base.fused_width = best_width;
  return base;
}

/// Registers parameter tensors on a tape on first use. Trainable binders make
/// leaves (gradients tracked); frozen ones make constants.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

  VarId operator()(const Tensor& param) {
    auto it = vars_.find(&param);
    if (it != vars_.end()) return it->second;
    VarId v = trainable_ ? tape_.leaf(param) : tape_.constant(param);
    vars_.emplace(&param, v);
    return v;
  }

  std::optional<VarId> find(const Tensor& param) const {
    auto it = vars_.find(&param);
    if (it == vars_.end()) return std::nullopt;
    return it->second;
  }

  MlpVars mlp(const Mlp1x1Params& p) {
    return {{(*this)(p.first.weight), (*this)(p.first.bias)},
            {(*this)(p.second.weight), (*this)(p.second.bias)}};
  }
  ConvVars conv(const Conv3x3Params& p) { return {(*this)(p.kernel), (*this)(p.bias)}; }

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  bool trainable_;
  std::unordered_map<const Tensor*, VarId> vars_;
};

inline VarId displacement_net(ParamBinder& bind, VarId input, const DisplacementNetParams& p) {
  Tape& tape = bind.tape();
  auto conv = [&](VarId x, const Conv3x3Params& c) {
    ConvVars v = bind.conv(c);
    return conv3x3(tape, x, v.kernel, v.bias);
  };
  VarId h = silu(tape, conv(input, p.input));
  for (const auto& blk : p.blocks) {
    VarId t = silu(tape, conv(h, blk.a));
    h = add(tape, h, conv(t, blk.b));
  }
  return conv(h, p.output);
}

/// Value-level displacement net; output has 2c (or 2 when shared) channels.
inline DisplacementField displacement_net(const Tensor& input, const DisplacementNetParams& p) {
  if (p.input.in_channels() != input.channels()) {
    throw ShapeError("displacement_net: expects " + std::to_string(p.input.in_channels()) +
                     " input channels, got " + input.shape().str());
  }
  Tape tape;
  ParamBinder bind(tape, false);
  VarId u = displacement_net(bind, tape.constant(input), p);
  return tape.value(u);
}

/// Intermediate results of one layer, exposed for verification.
struct LayerTrace {
  VarId reacted, diffused, flow, output;
  bool has_flow = false;
};

/// One operator-splitting layer: advection after diffusion after reaction.
/// `history` is the stacked raw window (used when flow_from_history is set).
inline VarId adr_layer(ParamBinder& bind, VarId field, VarId history, const AdrLayerParams& p,
                       const ModelConfig& cfg, LayerTrace* trace = nullptr) {
  Tape& tape = bind.tape();
  const Shape shape = tape.value(field).shape();
  if (shape.rank() != 4 || shape[1] != cfg.channels) {
    throw ShapeError("adr_layer: expected " + std::to_string(cfg.channels) +
                     " channels, got " + shape.str());
  }
  VarId reacted = field, diffused;
  if (p.fused) {
    diffused = fused_dr_step(tape, field, bind.conv(p.fused->first), bind.conv(p.fused->second),
                             cfg.h);
  } else {
    const MlpVars theta = bind.mlp(p.reaction);
    for (std::size_t s = 0; s < cfg.reaction_substeps; ++s) {
      reacted = reaction_step(tape, reacted, theta, cfg.h);
    }
    VarId kappa = softplus(tape, bind(p.kappa.raw));
    if (cfg.diffusion == DiffusionScheme::Implicit) {
      diffused = diffuse_implicit(tape, reacted, kappa, cfg.h, shared_dct_plan(shape[2], shape[3]));
    } else {
      diffused = diffuse_explicit(tape, reacted, kappa, cfg.h);
    }
  }
  VarId out = diffused;
  VarId flow{};
  if (p.flow) {
    flow = displacement_net(bind, cfg.flow_from_history ? history : diffused, *p.flow);
    out = push(tape, cfg.push_mode, diffused, flow);
  }
  if (trace) *trace = LayerTrace{reacted, diffused, flow, out, p.flow.has_value()};
  return out;
}

/// Full forward pass on a stacked window [batch][m(j+1)][H][W]; returns the
/// predicted next frame [batch][m][H][W].
inline VarId forward(ParamBinder& bind, const AdrModel& model, VarId stacked,
                     std::vector<LayerTrace>* traces = nullptr) {
  Tape& tape = bind.tape();
  const ModelConfig& cfg = model.config;
  const Tensor& sv = tape.value(stacked);
  require_grid(sv, "forward");
  if (sv.channels() != cfg.stacked_channels()) {
    throw ShapeError("forward: history window has " + std::to_string(sv.channels()) +
                     " stacked channels, model expects " + std::to_string(cfg.stacked_channels()) +
                     " (" + std::to_string(cfg.window_frames()) + " frames of " +
                     std::to_string(cfg.in_channels) + ")");
  }
  VarId state = mlp1x1(tape, stacked, bind.mlp(model.embed));
  for (const auto& layer : model.layers) {
    LayerTrace t;
    state = adr_layer(bind, state, stacked, layer, cfg, &t);
    if (traces) traces->push_back(t);
  }
  // The optional output denoiser is not part of this model; its place is here.
  return mlp1x1(tape, state, bind.mlp(model.project));
}

inline void check_window(const AdrModel& model, const HistoryWindow& window) {
  if (window.frames.size() != model.config.window_frames()) {
    throw ShapeError("forward: history window has " + std::to_string(window.frames.size()) +
                     " frames, model expects " + std::to_string(model.config.window_frames()));
  }
}

inline Tensor forward(const AdrModel& model, const HistoryWindow& window) {
  check_window(model, window);
  Tape tape;
  ParamBinder bind(tape, false);
  return tape.value(forward(bind, model, tape.constant(window.stacked())));
}

/// Autoregressive prediction: each output is appended to the window, dropping
/// the oldest frame, and fed back in.
inline std::vector<Tensor> rollout(const AdrModel& model, HistoryWindow window, std::size_t steps) {
  if (steps < 1) throw Error("rollout: steps must be >= 1");
  std::vector<Tensor> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    Tensor next = forward(model, window);
    window.frames.erase(window.frames.begin());
    window.frames.push_back(next);
    out.push_back(std::move(next));
  }
  return out;
}

/// Value-level single layer applied to hidden state `field`.
inline Tensor adr_layer(const Tensor& field, const AdrLayerParams& p, const ModelConfig& cfg,
                        const Tensor* history = nullptr) {
  Tape tape;
  ParamBinder bind(tape, false);
  VarId f = tape.constant(field);
  VarId hist = history ? tape.constant(*history) : f;
  return tape.value(adr_layer(bind, f, hist, p, cfg));
}

}  // namespace adrflow

#endif  // ADRFLOW_MODEL_HPP

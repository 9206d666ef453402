#ifndef ADRFLOW_CONFIG_HPP
#define ADRFLOW_CONFIG_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "adrflow/data.hpp"
#include "adrflow/metrics.hpp"
#include "adrflow/model.hpp"
#include "adrflow/training.hpp"

namespace adrflow {

class ConfigError : public Error {
 public:
  using Error::Error;
};

using Json = nlohmann::json;

struct DataConfig {
  std::string path;       // dataset directory with train.adrt / val.adrt
  std::string generator;  // or: generate in memory (fig1 | blob | diffusion)
  std::uint64_t split_seed = 0;
  std::size_t size = 6;
  std::size_t steps = 20;
  std::size_t count = 1;
  std::size_t val_count = 0;
  std::uint64_t seed = 0;
  Real sigma = 2.0;
  Real velocity_max = 2.0;
  Real background = 0.0;
  Real kappa = 0.1;
  Real dt = 1.0;
};

struct EvalConfig {
  metrics::Convention convention = metrics::Convention::PdeBench;
  std::vector<std::size_t> rollout_steps{1};
  Real max_val = 1.0;
  metrics::SsimWindow ssim_window = metrics::SsimWindow::Gaussian;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
};

namespace detail {

inline void reject_unknown(const Json& obj, const std::set<std::string>& known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

template <class T>
void read(const Json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("config key '" + where + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline Json to_json(const ModelConfig& m) {
  return Json{{"in_channels", m.in_channels},
              {"hidden_channels", m.channels},
              {"mlp_width", m.mlp_width},
              {"layer_count", m.layer_count},
              {"h", m.h},
              {"push_mode", std::string(to_string(m.push_mode))},
              {"advection", m.advection},
              {"flow_from_history", m.flow_from_history},
              {"fused_dr", m.fused_dr},
              {"shared_flow", m.shared_flow},
              {"reaction_substeps", m.reaction_substeps},
              {"history_len", m.history_len},
              {"flow_blocks", m.flow_blocks},
              {"flow_width", m.flow_width},
              {"fused_width", m.fused_width},
              {"kappa_init", m.kappa_init},
              {"diffusion", m.diffusion == DiffusionScheme::Implicit ? "implicit" : "explicit"}};
}

inline void apply_json(const Json& j, ModelConfig& m) {
  const std::string w = "model";
  detail::reject_unknown(j,
                         {"in_channels", "hidden_channels", "mlp_width", "layer_count", "h",
                          "push_mode", "advection", "flow_from_history", "fused_dr", "shared_flow",
                          "reaction_substeps", "history_len", "flow_blocks", "flow_width",
                          "fused_width", "kappa_init", "diffusion"},
                         w);
  detail::read(j, "in_channels", m.in_channels, w);
  detail::read(j, "hidden_channels", m.channels, w);
  detail::read(j, "mlp_width", m.mlp_width, w);
  detail::read(j, "layer_count", m.layer_count, w);
  detail::read(j, "h", m.h, w);
  detail::read(j, "advection", m.advection, w);
  detail::read(j, "flow_from_history", m.flow_from_history, w);
  detail::read(j, "fused_dr", m.fused_dr, w);
  detail::read(j, "shared_flow", m.shared_flow, w);
  detail::read(j, "reaction_substeps", m.reaction_substeps, w);
  detail::read(j, "history_len", m.history_len, w);
  detail::read(j, "flow_blocks", m.flow_blocks, w);
  detail::read(j, "flow_width", m.flow_width, w);
  detail::read(j, "fused_width", m.fused_width, w);
  detail::read(j, "kappa_init", m.kappa_init, w);
  if (j.contains("push_mode")) {
    try {
      m.push_mode = parse_push_mode(j.at("push_mode").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("model.push_mode: ") + e.what());
    }
  }
  if (j.contains("diffusion")) {
    const auto s = j.at("diffusion").get<std::string>();
    if (s == "implicit") m.diffusion = DiffusionScheme::Implicit;
    else if (s == "explicit") m.diffusion = DiffusionScheme::Explicit;
    else throw ConfigError("model.diffusion must be implicit|explicit, got '" + s + "'");
  }
}

inline Json to_json(const TrainConfig& t) {
  return Json{{"lr", t.learning_rate},
              {"batch", t.batch_size},
              {"epochs", t.epochs},
              {"scheduler", t.schedule == LrSchedule::None ? "none" : "exponential"},
              {"gamma", t.gamma},
              {"seed", t.seed},
              {"threads", t.threads},
              {"unroll", t.unroll},
              {"unroll_from", t.unroll_from}};
}

inline void apply_json(const Json& j, TrainConfig& t) {
  const std::string w = "train";
  detail::reject_unknown(j, {"lr", "batch", "epochs", "scheduler", "gamma", "seed", "threads", "unroll", "unroll_from"}, w);
  detail::read(j, "lr", t.learning_rate, w);
  detail::read(j, "batch", t.batch_size, w);
  detail::read(j, "epochs", t.epochs, w);
  detail::read(j, "gamma", t.gamma, w);
  detail::read(j, "seed", t.seed, w);
  detail::read(j, "threads", t.threads, w);
  detail::read(j, "unroll", t.unroll, w);
  detail::read(j, "unroll_from", t.unroll_from, w);
  if (j.contains("scheduler")) {
    const auto s = j.at("scheduler").get<std::string>();
    if (s == "none") t.schedule = LrSchedule::None;
    else if (s == "exponential") t.schedule = LrSchedule::Exponential;
    else throw ConfigError("train.scheduler must be none|exponential, got '" + s + "'");
  }
}

inline Json to_json(const DataConfig& d) {
  return Json{{"path", d.path},     {"generator", d.generator}, {"split_seed", d.split_seed},
              {"size", d.size},     {"steps", d.steps},         {"count", d.count},
              {"val_count", d.val_count}, {"seed", d.seed},     {"sigma", d.sigma},
              {"velocity_max", d.velocity_max}, {"background", d.background},
              {"kappa", d.kappa},   {"dt", d.dt}};
}

inline void apply_json(const Json& j, DataConfig& d) {
  const std::string w = "data";
  detail::reject_unknown(j,
                         {"path", "generator", "split_seed", "size", "steps", "count", "val_count",
                          "seed", "sigma", "velocity_max", "background", "kappa", "dt"},
                         w);
  detail::read(j, "path", d.path, w);
  detail::read(j, "generator", d.generator, w);
  detail::read(j, "split_seed", d.split_seed, w);
  detail::read(j, "size", d.size, w);
  detail::read(j, "steps", d.steps, w);
  detail::read(j, "count", d.count, w);
  detail::read(j, "val_count", d.val_count, w);
  detail::read(j, "seed", d.seed, w);
  detail::read(j, "sigma", d.sigma, w);
  detail::read(j, "velocity_max", d.velocity_max, w);
  detail::read(j, "background", d.background, w);
  detail::read(j, "kappa", d.kappa, w);
  detail::read(j, "dt", d.dt, w);
}

inline Json to_json(const EvalConfig& e) {
  return Json{{"convention", e.convention == metrics::Convention::Video ? "video" : "pdebench"},
              {"rollout_steps", e.rollout_steps},
              {"max_val", e.max_val},
              {"ssim_window", e.ssim_window == metrics::SsimWindow::Gaussian ? "gaussian" : "uniform"}};
}

inline void apply_json(const Json& j, EvalConfig& e) {
  const std::string w = "eval";
  detail::reject_unknown(j, {"convention", "rollout_steps", "max_val", "ssim_window"}, w);
  detail::read(j, "rollout_steps", e.rollout_steps, w);
  detail::read(j, "max_val", e.max_val, w);
  if (j.contains("convention")) {
    const auto s = j.at("convention").get<std::string>();
    if (s == "video") e.convention = metrics::Convention::Video;
    else if (s == "pdebench") e.convention = metrics::Convention::PdeBench;
    else throw ConfigError("eval.convention must be video|pdebench, got '" + s + "'");
  }
  if (j.contains("ssim_window")) {
    const auto s = j.at("ssim_window").get<std::string>();
    if (s == "gaussian") e.ssim_window = metrics::SsimWindow::Gaussian;
    else if (s == "uniform") e.ssim_window = metrics::SsimWindow::Uniform;
    else throw ConfigError("eval.ssim_window must be gaussian|uniform, got '" + s + "'");
  }
}

inline Json to_json(const RunConfig& r) {
  return Json{{"model", to_json(r.model)},
              {"train", to_json(r.train)},
              {"data", to_json(r.data)},
              {"eval", to_json(r.eval)}};
}

/// Train and validation sequences for an in-memory generator. fig1 yields a
/// single two-frame sequence; blob and diffusion draw `count + val_count`
/// sequences and split them whole.
inline std::pair<std::vector<Sequence>, std::vector<Sequence>> generate_dataset(const DataConfig& d) {
  if (d.generator == "fig1") {
    if (d.size < 2) throw ConfigError("data.size must be >= 2 for fig1");
    SequenceSample s = gen_fig1(d.size, d.size);
    return {{Sequence{s.history.frames[0], s.target[0]}}, {}};
  }
  if (d.count == 0) throw ConfigError("data.count must be >= 1");
  std::vector<Sequence> all;
  if (d.generator == "blob") {
    if (!(d.sigma > 0)) throw ConfigError("data.sigma must be positive");
    if (d.background < 0 || d.background >= 1) throw ConfigError("data.background must be in [0,1)");
    BlobOptions o;
    o.height = o.width = d.size;
    o.sigma = d.sigma;
    o.steps = d.steps;
    o.background = d.background;
    all = gen_blob_dataset(d.count + d.val_count, o, d.velocity_max, d.seed);
  } else if (d.generator == "diffusion") {
    if (d.kappa < 0) throw ConfigError("data.kappa must be >= 0");
    if (!(d.dt > 0)) throw ConfigError("data.dt must be positive");
    std::mt19937_64 rng(d.seed);
    for (std::size_t i = 0; i < d.count + d.val_count; ++i) {
      all.push_back(gen_diffusion_sequence(d.size, d.size, d.kappa, d.dt, d.steps, rng()));
    }
  } else {
    throw ConfigError("unknown data generator '" + d.generator + "' (expected fig1|blob|diffusion)");
  }
  return split_sequences(std::move(all), d.val_count, d.split_seed);
}

/// Hyperparameter presets. `swe-like` and `video-like` are the full-scale
/// shallow-water and video settings; `fig1` is swe-like on the 6x6 single-pixel task.
/// `blob` is the desk-scale advection generalisation setup.
inline RunConfig preset(const std::string& name) {
  RunConfig r;
  if (name == "swe-like" || name == "fig1") {
    r.train.learning_rate = 1e-4;
    r.train.batch_size = 64;
    r.train.epochs = 200;
    r.model.layer_count = 1;
    r.model.channels = 128;
    if (name == "fig1") {
      r.model.channels = 8;
      // Displacement read from the raw frame and kappa starting at softplus(0):
      // with the displacement computed from I_DR and a tiny initial kappa,
      // about a third of the seeds stall at the constant-mean prediction.
      r.model.flow_from_history = true;
      r.model.kappa_init = std::log(2.0);
      r.train.epochs = 5000;
      r.data.generator = "fig1";
      r.data.size = 6;
    }
  } else if (name == "blob") {
    r.data.generator = "blob";
    r.data.size = 24;
    r.data.steps = 12;
    r.data.count = 50;
    r.data.val_count = 10;
    r.data.sigma = 2.0;
    r.data.velocity_max = 2.0;
    // Keeps targets away from zero so the pointwise nRMSE is defined. With the
    // true velocity, bilinear transport alone scores about 0.02 (one step) and
    // 0.07 (ten steps) at this level, 0.04 and 0.14 at 0.1.
    r.data.background = 0.2;
    r.model.channels = 8;
    r.model.layer_count = 2;  // one layer with per-channel flows never learns the velocity
    r.model.history_len = 1;
    r.model.flow_from_history = true;
    r.train.learning_rate = 1e-3;
    r.train.batch_size = 16;
    r.train.epochs = 60;
    r.train.unroll = 3;
    r.train.unroll_from = 40;
    r.train.schedule = LrSchedule::Exponential;
    r.train.gamma = 0.97;
    r.eval.rollout_steps = {1, 10};
  } else if (name == "video-like") {
    r.train.learning_rate = 2e-6;
    r.train.batch_size = 16;
    r.train.epochs = 1000;
    r.train.schedule = LrSchedule::Exponential;
    r.model.layer_count = 8;
    r.model.channels = 192;
  } else if (name != "default") {
    throw ConfigError("unknown preset '" + name + "' (expected default|swe-like|video-like|fig1|blob)");
  }
  return r;
}

/// Applies a config document on top of `base` (or its named preset).
inline RunConfig parse_run_config(const Json& j, RunConfig base = {}) {
  detail::reject_unknown(j, {"preset", "model", "train", "data", "eval"}, "<root>");
  if (j.contains("preset")) base = preset(j.at("preset").get<std::string>());
  if (j.contains("model")) apply_json(j.at("model"), base.model);
  if (j.contains("train")) apply_json(j.at("train"), base.train);
  if (j.contains("data")) apply_json(j.at("data"), base.data);
  if (j.contains("eval")) apply_json(j.at("eval"), base.eval);
  return base;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
  Json j;
  try {
    f >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

// ---------------------------------------------------------------------------
// Checkpoints: one float64 entry per parameter plus the model config as JSON
// text under "__config__".

inline constexpr const char* kConfigEntry = "__config__";

inline void save_checkpoint(const std::filesystem::path& path, const AdrModel& model) {
  std::vector<ContainerEntry> entries;
  entries.push_back(ContainerEntry::from_text(kConfigEntry, to_json(model.config).dump()));
  model.for_each_parameter([&](const std::string& name, const std::string&, const Tensor& t) {
    entries.push_back(ContainerEntry::from_tensor(name, t));
  });
  save_container(path, entries);
}

inline AdrModel load_checkpoint(const std::filesystem::path& path) {
  const auto entries = load_container(path);
  ModelConfig cfg;
  try {
    apply_json(Json::parse(find_entry(entries, kConfigEntry).to_text()), cfg);
  } catch (const Json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' has an unreadable config: " + e.what());
  }
  AdrModel model = init_model(cfg, 0);
  model.for_each_parameter([&](const std::string& name, const std::string&, Tensor& t) {
    Tensor loaded = find_entry(entries, name).to_tensor();
    if (loaded.shape() != t.shape()) {
      throw IoError("checkpoint parameter '" + name + "' has shape " + loaded.shape().str() +
                    ", model expects " + t.shape().str());
    }
    t = std::move(loaded);
  });
  return model;
}

}  // namespace adrflow

#endif  // ADRFLOW_CONFIG_HPP

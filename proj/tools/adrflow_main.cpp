#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "adrflow/adrflow.hpp"
#include "adrflow/bench.hpp"

#ifndef ADRFLOW_VERSION
#define ADRFLOW_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace adrflow;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kDiverged = 3 };

// Reported as exit code 2 with its message.
struct UsageError : Error {
  using Error::Error;
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("ADRFLOW_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("ADRFLOW_SEED must be an unsigned integer, got '") + s + "'");
  }
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << j.dump(2) << "\n";
}

Json manifest(const std::string& command, const Json& config) {
  return Json{{"command", command},
              {"version", ADRFLOW_VERSION},
              {"config", config},
              {"config_hash", fnv1a_hex(config.dump())}};
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

// 8-bit binary PGM of one plane, min-max normalised; returns (min, max).
std::pair<Real, Real> write_pgm(const fs::path& path, std::span<const Real> plane, std::size_t h,
                                std::size_t w) {
  const auto [lo_it, hi_it] = std::minmax_element(plane.begin(), plane.end());
  const Real lo = *lo_it, hi = *hi_it;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << "P5\n" << w << " " << h << "\n255\n";
  for (Real v : plane) {
    const Real t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
  }
  return {lo, hi};
}

// Config resolution: preset, then config file, then ADRFLOW_SEED, then flags.
struct ConfigFlags {
  std::string config_path;
  std::string preset_name;
};

RunConfig resolve_config(const ConfigFlags& f) {
  RunConfig base = f.preset_name.empty() ? RunConfig{} : preset(f.preset_name);
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw ConfigError("cannot open config '" + f.config_path + "'");
    Json j;
    try {
      in >> j;
    } catch (const Json::exception& e) {
      throw ConfigError("config '" + f.config_path + "' is not valid JSON: " + e.what());
    }
    base = parse_run_config(j, base);
  }
  if (auto s = env_seed()) {
    base.train.seed = *s;
    base.data.seed = *s;
  }
  return base;
}

struct Splits {
  std::vector<Sequence> train, val;
  std::string source;
};

Splits load_data(const DataConfig& d) {
  if (!d.path.empty()) {
    const fs::path dir(d.path);
    if (!fs::exists(dir / "train.adrt")) {
      throw UsageError("dataset not found: '" + (dir / "train.adrt").string() + "' does not exist");
    }
    Splits s{load_sequences(dir / "train.adrt"), {}, dir.string()};
    if (fs::exists(dir / "val.adrt")) s.val = load_sequences(dir / "val.adrt");
    return s;
  }
  if (!d.generator.empty()) {
    auto [train, val] = generate_dataset(d);
    return {std::move(train), std::move(val), "generator:" + d.generator};
  }
  throw UsageError("no dataset: pass --data DIR or set data.generator in the config");
}

std::size_t frame_channels(const std::vector<Sequence>& seqs) {
  if (seqs.empty() || seqs.front().empty()) throw UsageError("dataset has no frames");
  return seqs.front().front().channels();
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string generator;
  std::string out;
  DataConfig data;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(GenDataArgs a) {
  a.data.generator = a.generator;
  if (auto s = env_seed()) a.data.seed = *s;
  if (a.seed) a.data.seed = *a.seed;
  const fs::path out = a.out.empty() ? fs::path("data") / a.generator : fs::path(a.out);
  auto [train, val] = generate_dataset(a.data);
  make_dir(out);
  save_sequences(out / "train.adrt", train);
  if (!val.empty()) save_sequences(out / "val.adrt", val);
  Json m = manifest("gen-data", to_json(a.data));
  m["seed"] = a.data.seed;
  m["split_seed"] = a.data.split_seed;
  m["train_sequences"] = train.size();
  m["val_sequences"] = val.size();
  write_json(out / "manifest.json", m);
  std::cout << "wrote " << train.size() << " train and " << val.size() << " val sequences to "
            << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags cfg;
  std::string data;
  std::string out = "runs/train";
  std::optional<std::size_t> epochs, batch, unroll, unroll_from;
  std::optional<Real> lr;
  std::optional<std::uint64_t> seed;
  bool no_advection = false;
  std::size_t threads = 1;
  std::size_t log_every = 0;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = resolve_config(a.cfg);
  if (!a.data.empty()) rc.data.path = a.data;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.batch) rc.train.batch_size = *a.batch;
  if (a.unroll) rc.train.unroll = *a.unroll;
  if (a.unroll_from) rc.train.unroll_from = *a.unroll_from;
  if (a.lr) rc.train.learning_rate = *a.lr;
  if (a.seed) rc.train.seed = *a.seed;
  rc.train.threads = a.threads;
  const Splits data = load_data(rc.data);
  rc.model.in_channels = frame_channels(data.train);
  if (a.no_advection) rc.model = no_advection_baseline(rc.model);
  try {
    rc.model.validate();
    rc.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  const auto train_set = windows_of(data.train, rc.model.history_len, rc.train.unroll);
  const auto val_set = windows_of(data.val, rc.model.history_len, rc.train.unroll);
  if (train_set.empty()) {
    throw UsageError("no training window fits: sequences are shorter than history + 1 + unroll frames");
  }

  const fs::path out(a.out);
  make_dir(out);
  const Json config = to_json(rc);
  Json m = manifest("train", config);
  m["seed"] = rc.train.seed;
  m["data"] = data.source;
  m["no_advection"] = a.no_advection;

  AdrModel model = init_model(rc.model, rc.train.seed);
  std::cout << "model parameters " << model.parameter_count() << ", training windows "
            << train_set.size() << ", validation windows " << val_set.size() << "\n";
  std::ofstream loss_csv(out / "loss.csv");
  loss_csv.precision(17);
  loss_csv << "epoch,train_loss,val_loss,lr\n";
  const std::size_t every = a.log_every ? a.log_every : std::max<std::size_t>(1, rc.train.epochs / 10);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  try {
    result = train(model, train_set, rc.train, val_set, [&](const EpochLog& e) {
      loss_csv << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.lr << "\n";
      if (e.epoch % every == 0 || e.epoch + 1 == rc.train.epochs) {
        std::cout << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << "\n";
      }
    });
  } catch (const DivergenceError& e) {
    loss_csv.flush();
    m["status"] = "diverged";
    m["diverged_epoch"] = e.epoch();
    write_json(out / "manifest.json", m);
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  }
  const Real seconds = std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(out / "checkpoint.adrt", model);
  m["status"] = "ok";
  m["final_train_loss"] = result.final_train_loss;
  m["parameters"] = model.parameter_count();
  write_json(out / "manifest.json", m);
  std::cout.precision(6);
  std::cout << "final train mse " << std::scientific << result.final_train_loss << std::defaultfloat
            << " (" << seconds << " s)\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  ConfigFlags cfg;
  std::string checkpoint;
  std::string data;
  std::string split = "val";
  std::vector<std::size_t> horizons;
  std::string convention;
  std::optional<Real> max_val;
  std::string out = "metrics.csv";
  std::string dump_frames;
  std::size_t stride = 1;
};

int cmd_eval(const EvalArgs& a) {
  RunConfig rc = resolve_config(a.cfg);
  if (!a.data.empty()) rc.data.path = a.data;
  if (!a.horizons.empty()) rc.eval.rollout_steps = a.horizons;
  if (!a.convention.empty()) {
    if (a.convention == "video") rc.eval.convention = metrics::Convention::Video;
    else if (a.convention == "pdebench") rc.eval.convention = metrics::Convention::PdeBench;
    else throw UsageError("--convention must be video|pdebench");
  }
  if (a.max_val) rc.eval.max_val = *a.max_val;

  AdrModel model;
  try {
    model = load_checkpoint(a.checkpoint);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const Splits data = load_data(rc.data);
  const std::vector<Sequence>& seqs = a.split == "train" ? data.train : data.val;
  if (a.split != "train" && a.split != "val") throw UsageError("--split must be train|val");
  if (seqs.empty()) throw UsageError("the " + a.split + " split is empty");
  const std::size_t m = frame_channels(seqs);
  if (m != model.config.in_channels) {
    throw ShapeError("checkpoint expects " + std::to_string(model.config.in_channels) +
                     "-channel frames, dataset has " + std::to_string(m));
  }

  std::ofstream csv(a.out);
  if (!csv) throw IoError("cannot write '" + a.out + "'");
  csv.precision(17);
  csv << "horizon,n_samples,mse,mae,rmse,nmse,nrmse,psnr,ssim\n";
  std::ofstream norms;
  if (!a.dump_frames.empty()) {
    make_dir(a.dump_frames);
    norms.open(fs::path(a.dump_frames) / "normalisation.csv");
    norms.precision(17);
    norms << "file,min,max\n";
  }
  const metrics::ReportOptions ro{rc.eval.convention, rc.eval.max_val, rc.eval.ssim_window};
  for (std::size_t horizon : rc.eval.rollout_steps) {
    if (horizon < 1) throw UsageError("rollout horizons must be >= 1");
    if (windows_of(seqs, model.config.history_len, horizon, a.stride).empty()) {
      throw UsageError("no " + a.split + " sequence is long enough for horizon " + std::to_string(horizon));
    }
    auto dump = [&](std::size_t i, const SequenceSample& sample, const std::vector<Tensor>& roll) {
      if (i != 0 || a.dump_frames.empty()) return;
      const Tensor& p = roll.back();
      const Tensor& t = sample.target.at(horizon - 1);
      Tensor diff(p.shape());
      for (std::size_t k = 0; k < p.size(); ++k) diff[k] = std::abs(p[k] - t[k]);
      for (std::size_t c = 0; c < p.channels(); ++c) {
        const std::string stem = "h" + std::to_string(horizon) + "_c" + std::to_string(c) + "_";
        for (auto [name, img] : {std::pair<const char*, const Tensor*>{"prediction", &p},
                                 {"target", &t}, {"absdiff", &diff}}) {
          const std::string file = stem + name + ".pgm";
          auto [lo, hi] = write_pgm(fs::path(a.dump_frames) / file, img->plane(0, c), p.height(), p.width());
          norms << file << "," << lo << "," << hi << "\n";
        }
      }
    };
    const RolloutEval ev = evaluate_rollout(model, seqs, horizon, a.stride, ro, dump);
    const auto& r = ev.report;
    csv << horizon << "," << r.n_samples << "," << r.mse << "," << r.mae << "," << r.rmse << ","
        << r.nmse << "," << r.nrmse << "," << r.psnr << "," << r.ssim << "\n";
    std::cout << "horizon " << horizon << ": mse " << r.mse << " nrmse " << r.nrmse << " psnr "
              << r.psnr << " ssim " << r.ssim << " (" << ev.windows << " windows)\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  verify::GradcheckCase c;
  Real tolerance = 1e-4;
  std::string fault = "none";
};

int cmd_gradcheck(GradcheckArgs a) {
  if (auto s = env_seed()) a.seed = *s;
  const BackwardOptions bo = verify::backward_options(verify::parse_fault(a.fault));
  bool ok = true;
  for (std::size_t k = 0; k < a.seeds; ++k) {
    const auto report = verify::gradcheck_case(a.seed + k, a.c, bo);
    for (const auto& g : report.groups) {
      const bool pass = g.max_relative_error < a.tolerance;
      ok = ok && pass;
      std::cout << (pass ? "PASS " : "FAIL ") << "seed " << a.seed + k << " " << g.group << ": "
                << g.entries << " entries, relative error " << g.max_relative_error << "\n";
    }
  }
  return ok ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::vector<std::string> only;
  std::string fault = "none";
  std::string csv;
  std::uint64_t seed = 0;
};

int cmd_verify(VerifyArgs a) {
  if (auto s = env_seed()) a.seed = *s;
  verify::Options o;
  o.seed = a.seed;
  o.fault = verify::parse_fault(a.fault);
  const auto checks = verify::run(a.only, o);
  verify::write_text(std::cout, checks);
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw IoError("cannot write '" + a.csv + "'");
    verify::write_csv(f, checks);
  }
  if (verify::all_passed(checks)) {
    std::cout << "all " << checks.size() << " checks passed\n";
    return kOk;
  }
  std::cout << "failed:";
  for (const auto& c : checks)
    if (!c.passed) std::cout << " " << c.suite << "/" << c.property << ";";
  std::cout << "\n";
  return kVerifyFailed;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  bench::Options o;
  std::string out = "bench.csv";
};

int cmd_bench(const BenchArgs& a) {
  if (a.o.repeats < 1) throw UsageError("--repeats must be >= 1");
  const auto timings = bench::run(a.o);
  std::ofstream f(a.out);
  if (!f) throw IoError("cannot write '" + a.out + "'");
  bench::write_csv(f, timings);
  bench::write_csv(std::cout, timings);
  std::vector<std::string> ops;
  for (const auto& t : timings)
    if (std::find(ops.begin(), ops.end(), t.op) == ops.end()) ops.push_back(t.op);
  for (const auto& op : ops) {
    std::cout << "growth exponent " << op << " " << bench::growth_exponent(timings, op);
    if (a.o.sizes.size() >= 2) {
      std::cout << ", ratio " << a.o.sizes[0] << "->" << a.o.sizes[1] << " "
                << bench::growth_ratio(timings, op, a.o.sizes[0], a.o.sizes[1]);
    }
    std::cout << "\n";
  }
  return kOk;
}

void add_config_flags(CLI::App* sub, ConfigFlags& f) {
  sub->add_option("--config", f.config_path, "JSON run config (sections model, train, data, eval)");
  sub->add_option("--preset", f.preset_name, "default | swe-like | video-like | fig1 | blob");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adrflow: advection-diffusion-reaction networks on regular grids"};
  app.set_version_flag("--version", ADRFLOW_VERSION);
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("generator", gen.generator, "fig1 | blob | diffusion")->required();
  g->add_option("--out", gen.out, "Output directory (default data/<generator>)");
  g->add_option("--size", gen.data.size, "Grid side length")->capture_default_str();
  g->add_option("--steps", gen.data.steps, "Frames per sequence")->capture_default_str();
  g->add_option("--count", gen.data.count, "Training sequences")->capture_default_str();
  g->add_option("--val-count", gen.data.val_count, "Validation sequences")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed (default 0, or ADRFLOW_SEED)");
  g->add_option("--split-seed", gen.data.split_seed, "Seed of the train/val split")->capture_default_str();
  g->add_option("--sigma", gen.data.sigma, "Blob width")->capture_default_str();
  g->add_option("--velocity-max", gen.data.velocity_max, "Largest blob speed, px/frame")->capture_default_str();
  g->add_option("--background", gen.data.background, "Blob background level")->capture_default_str();
  g->add_option("--kappa", gen.data.kappa, "Diffusion generator diffusivity")->capture_default_str();
  g->add_option("--dt", gen.data.dt, "Diffusion generator step")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; writes checkpoint.adrt, loss.csv, manifest.json");
  t->add_option("config,--config", tr.cfg.config_path, "JSON run config");
  t->add_option("--preset", tr.cfg.preset_name, "default | swe-like | video-like | fig1 | blob");
  t->add_option("--data", tr.data, "Dataset directory with train.adrt and optional val.adrt");
  t->add_option("--out", tr.out, "Run directory")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Override train.epochs");
  t->add_option("--batch", tr.batch, "Override train.batch");
  t->add_option("--lr", tr.lr, "Override train.lr");
  t->add_option("--unroll", tr.unroll, "Override train.unroll");
  t->add_option("--unroll-from", tr.unroll_from, "Override train.unroll_from");
  t->add_option("--seed", tr.seed, "Override train.seed");
  t->add_flag("--no-advection", tr.no_advection, "Replace the model by the residual-conv baseline");
  t->add_option("--threads", tr.threads, "Worker threads per batch")->capture_default_str();
  t->add_option("--log-every", tr.log_every, "Print every N epochs (default epochs/10)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Roll out a checkpoint and write per-horizon metrics");
  add_config_flags(e, ev.cfg);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint from train")->required();
  e->add_option("--data", ev.data, "Dataset directory");
  e->add_option("--split", ev.split, "train | val")->capture_default_str();
  e->add_option("--horizons", ev.horizons, "Rollout horizons, e.g. 5,10,20,50")->delimiter(',');
  e->add_option("--convention", ev.convention, "video | pdebench");
  e->add_option("--max-val", ev.max_val, "PSNR/SSIM dynamic range");
  e->add_option("--out", ev.out, "Metrics CSV")->capture_default_str();
  e->add_option("--dump-frames", ev.dump_frames, "Directory for PGM prediction/target/absdiff triptychs");
  e->add_option("--stride", ev.stride, "Window stride")->capture_default_str();

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare tape gradients with central differences");
  c->add_option("--seed", gc.seed, "First seed")->capture_default_str();
  c->add_option("--seeds", gc.seeds, "Number of seeds")->capture_default_str();
  c->add_option("--size", gc.c.size, "Grid side")->capture_default_str();
  c->add_option("--layers", gc.c.layers, "ADR layers")->capture_default_str();
  c->add_option("--channels", gc.c.channels, "Hidden channels")->capture_default_str();
  c->add_option("--batch", gc.c.batch, "Batch size")->capture_default_str();
  c->add_option("--step", gc.c.step, "Finite-difference step")->capture_default_str();
  c->add_option("--tolerance", gc.tolerance, "Largest relative error accepted")->capture_default_str();
  c->add_option("--fault", gc.fault, "Inject a gradient fault: none | gradient")->capture_default_str();

  VerifyArgs vf;
  auto* v = app.add_subcommand("verify", "Run the oracle suites");
  v->add_option("--only", vf.only, "Suites: adjoint,conservation,dct,solver,stability,gradcheck,metrics")
      ->delimiter(',');
  v->add_option("--fault", vf.fault, "none | adjoint | conservation | solver | gradient")->capture_default_str();
  v->add_option("--csv", vf.csv, "Also write the report as CSV");
  v->add_option("--seed", vf.seed, "Seed of the random cases")->capture_default_str();

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Time push and diffusion operators against a dense solve");
  b->add_option("--sizes", bn.o.sizes, "Grid sides")->delimiter(',')->capture_default_str();
  b->add_option("--repeats", bn.o.repeats, "Timed repeats per (op, size)")->capture_default_str();
  b->add_option("--dense-max", bn.o.dense_max, "Largest side for the dense solve")->capture_default_str();
  b->add_option("--min-seconds", bn.o.min_repeat_seconds, "Minimum duration of one repeat")->capture_default_str();
  b->add_option("--out", bn.out, "Timing CSV")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_gradcheck(gc);
    if (*v) return cmd_verify(vf);
    if (*b) return cmd_bench(bn);
  } catch (const DivergenceError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDiverged;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

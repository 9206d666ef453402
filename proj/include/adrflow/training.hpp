#ifndef ADRFLOW_TRAINING_HPP
#define ADRFLOW_TRAINING_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "adrflow/data.hpp"
#include "adrflow/gradcheck.hpp"
#include "adrflow/model.hpp"
#include "adrflow/ops.hpp"

namespace adrflow {

enum class LrSchedule { None, Exponential };

struct TrainConfig {
  Real learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  LrSchedule schedule = LrSchedule::None;
  Real gamma = 0.999;
  std::uint64_t seed = 0;
  Real beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::size_t threads = 1;
  std::size_t unroll = 1;       // autoregressive steps per training sample
  std::size_t unroll_from = 0;  // epochs before this one train on a single step

  std::size_t steps_at(std::size_t epoch) const { return epoch < unroll_from ? 1 : unroll; }

  void validate() const {
    if (unroll < 1) throw Error("train config: unroll must be >= 1");
    if (!(learning_rate > 0)) throw Error("train config: learning rate must be positive");
    if (batch_size < 1) throw Error("train config: batch size must be >= 1");
    if (threads < 1) throw Error("train config: threads must be >= 1");
  }

  /// Learning rate used during `epoch` (0-based): lr0 * gamma^epoch.
  Real lr_at(std::size_t epoch) const {
    if (schedule == LrSchedule::None) return learning_rate;
    return learning_rate * std::pow(gamma, static_cast<Real>(epoch));
  }
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Mean of squared differences over every entry.
inline Real mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  Real s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Real d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<Real>(pred.size());
}

struct AdamState {
  std::vector<Tensor> first, second;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter is touched; a non-finite entry names its parameter group.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      const std::vector<std::string>& groups, AdamState& state, Real lr,
                      const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw Error("adam_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(*params[k], grads[k], "adam_step");
    if (!grads[k].all_finite()) {
      throw NumericError("adam_step: non-finite gradient in parameter group '" +
                         (k < groups.size() ? groups[k] : std::to_string(k)) + "'");
    }
  }
  if (state.first.empty()) {
    for (Tensor* p : params) {
      state.first.emplace_back(p->shape());
      state.second.emplace_back(p->shape());
    }
  }
  ++state.step;
  const Real t = static_cast<Real>(state.step);
  const Real c1 = 1 - std::pow(cfg.beta1, t);
  const Real c2 = 1 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& m = state.first[k];
    Tensor& v = state.second[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

/// Stacked inputs and first target frame of several samples, batched.
struct Batch {
  Tensor inputs;  // [B][m(j+1)][H][W]
  Tensor target;  // [B][m * steps][H][W], the next `steps` frames
};

inline Batch make_batch(const std::vector<SequenceSample>& samples,
                        const std::vector<std::size_t>& indices, std::size_t steps = 1) {
  std::vector<Tensor> in, tg;
  for (std::size_t i : indices) {
    const SequenceSample& s = samples.at(i);
    if (s.target.size() < steps) {
      throw ShapeError("make_batch: sample " + std::to_string(i) + " has " +
                       std::to_string(s.target.size()) + " target frames, need " +
                       std::to_string(steps));
    }
    in.push_back(s.history.stacked());
    tg.push_back(concat_channels(std::vector<Tensor>(s.target.begin(),
                                                     s.target.begin() + static_cast<std::ptrdiff_t>(steps))));
  }
  return {concat_batch(in), concat_batch(tg)};
}

/// Mean over the batch's target frames of the per-step MSE, rolling the
/// model's own predictions back into the window on the tape.
inline VarId unrolled_loss(ParamBinder& bind, const AdrModel& model, const Batch& batch) {
  Tape& tape = bind.tape();
  const std::size_t m = model.config.in_channels;
  const std::size_t width = model.config.stacked_channels();
  if (batch.target.channels() % m != 0 || batch.target.channels() == 0) {
    throw ShapeError("loss: target has " + std::to_string(batch.target.channels()) +
                     " channels, not a multiple of " + std::to_string(m));
  }
  const std::size_t steps = batch.target.channels() / m;
  VarId window = tape.constant(batch.inputs);
  VarId target = tape.constant(batch.target);
  VarId pred = forward(bind, model, window);
  if (steps == 1) return mse(tape, pred, target);
  VarId loss = mse(tape, pred, channel_slice(tape, target, 0, m));
  for (std::size_t s = 1; s < steps; ++s) {
    window = width == m ? pred : channel_concat(tape, channel_slice(tape, window, m, width - m), pred);
    pred = forward(bind, model, window);
    loss = add(tape, loss, mse(tape, pred, channel_slice(tape, target, s * m, m)));
  }
  return scale(tape, loss, 1.0 / static_cast<Real>(steps));
}

struct LossAndGrads {
  Real loss = 0;
  std::vector<Tensor> grads;  // in AdrModel::visit order
};

/// MSE of the model's prediction and its gradient w.r.t. every parameter.
inline LossAndGrads loss_and_gradients(const AdrModel& model, const Batch& batch,
                                       const BackwardOptions& options = {}) {
  Tape tape;
  ParamBinder bind(tape, true);
  VarId loss = unrolled_loss(bind, model, batch);
  Gradients g = tape.backward(loss, options);
  LossAndGrads out;
  out.loss = tape.value(loss).item();
  model.for_each_parameter([&](const std::string&, const std::string&, const Tensor& p) {
    auto v = bind.find(p);
    out.grads.push_back(v ? g[*v] : Tensor(p.shape()));
  });
  return out;
}

inline Real evaluate_loss(const AdrModel& model, const Batch& batch) {
  Tape tape;
  ParamBinder bind(tape, false);
  return tape.value(unrolled_loss(bind, model, batch)).item();
}

namespace detail {

inline Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t len = t.size() / t.batch();
  Tensor out = grid(end - begin, t.channels(), t.height(), t.width());
  std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(begin * len),
            t.data().begin() + static_cast<std::ptrdiff_t>(end * len), out.data().begin());
  return out;
}

}  // namespace detail

/// Splits the batch into `threads` contiguous chunks, one tape per thread,
/// and combines the chunk means weighted by chunk size.
inline LossAndGrads parallel_loss_and_gradients(const AdrModel& model, const Batch& batch,
                                                std::size_t threads) {
  const std::size_t n = batch.inputs.batch();
  threads = std::min(threads, n);
  if (threads <= 1) return loss_and_gradients(model, batch);
  std::vector<LossAndGrads> parts(threads);
  std::vector<std::size_t> bounds(threads + 1);
  for (std::size_t t = 0; t <= threads; ++t) bounds[t] = n * t / threads;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        Batch chunk{detail::slice_batch(batch.inputs, bounds[t], bounds[t + 1]),
                    detail::slice_batch(batch.target, bounds[t], bounds[t + 1])};
        parts[t] = loss_and_gradients(model, chunk);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  LossAndGrads out = std::move(parts[0]);
  const Real w0 = static_cast<Real>(bounds[1] - bounds[0]) / static_cast<Real>(n);
  out.loss *= w0;
  for (auto& g : out.grads)
    for (Real& v : g.data()) v *= w0;
  for (std::size_t t = 1; t < threads; ++t) {
    const Real w = static_cast<Real>(bounds[t + 1] - bounds[t]) / static_cast<Real>(n);
    out.loss += w * parts[t].loss;
    for (std::size_t k = 0; k < out.grads.size(); ++k)
      for (std::size_t i = 0; i < out.grads[k].size(); ++i) out.grads[k][i] += w * parts[t].grads[k][i];
  }
  return out;
}

struct EpochLog {
  std::size_t epoch;
  Real train_loss;
  Real val_loss;  // NaN when there is no validation set
  Real lr;
};

struct TrainResult {
  std::vector<EpochLog> log;
  Real final_train_loss = std::numeric_limits<Real>::quiet_NaN();
};

/// Mean loss over a dataset evaluated in batches of `batch_size`.
inline Real dataset_loss(const AdrModel& model, const std::vector<SequenceSample>& data,
                         std::size_t batch_size, std::size_t steps = 1) {
  Real total = 0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(data.size(), b + batch_size); ++i) idx.push_back(i);
    total += evaluate_loss(model, make_batch(data, idx, steps)) * static_cast<Real>(idx.size());
  }
  return total / static_cast<Real>(data.size());
}

/// Mini-batch Adam on the `cfg.unroll`-step MSE (single-step before
/// `cfg.unroll_from`); validation and final losses use the full unroll. The train loss of an epoch is the
/// size-weighted mean of its batch losses before each update. Deterministic
/// for a given seed when threads == 1.
inline TrainResult train(AdrModel& model, const std::vector<SequenceSample>& train_set,
                         const TrainConfig& cfg,
                         const std::vector<SequenceSample>& val_set = {},
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw Error("train: empty dataset");
  std::vector<Tensor*> params;
  std::vector<std::string> groups;
  model.for_each_parameter([&](const std::string&, const std::string& group, Tensor& t) {
    params.push_back(&t);
    groups.push_back(group);
  });
  AdamState state;
  TrainResult result;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Real lr = cfg.lr_at(epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    Real total = 0;
    try {
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(order.size(), b + cfg.batch_size)));
        LossAndGrads lg = parallel_loss_and_gradients(model, make_batch(train_set, idx, cfg.steps_at(epoch)), cfg.threads);
        if (!std::isfinite(lg.loss)) throw NumericError("loss is " + std::to_string(lg.loss));
        total += lg.loss * static_cast<Real>(idx.size());
        adam_step(params, lg.grads, groups, state, lr, cfg);
      }
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericError& e) {
      throw DivergenceError(epoch, e.what());
    }
    EpochLog entry{epoch, total / static_cast<Real>(train_set.size()),
                   val_set.empty() ? std::numeric_limits<Real>::quiet_NaN()
                                   : dataset_loss(model, val_set, cfg.batch_size, cfg.unroll),
                   lr};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.final_train_loss = dataset_loss(model, train_set, cfg.batch_size, cfg.unroll);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient verification.

struct GradcheckGroup {
  std::string group;
  std::size_t entries = 0;
  Real max_abs_error = 0;  // largest |analytic - numeric| in the group
  Real scale = 0;          // largest |gradient| in the group, either estimate
  Real max_relative_error = 0;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;

  Real worst() const {
    Real w = 0;
    for (const auto& g : groups) w = std::max(w, g.max_relative_error);
    return w;
  }
  bool passed(Real tolerance = 1e-4) const { return worst() < tolerance; }
};

/// Compares tape gradients of the batch MSE against central differences for
/// every parameter. The error of a group is normwise over all its tensors:
/// max |analytic - numeric| / max(|analytic|, |numeric|), so a tensor whose
/// gradient is small next to its neighbours is judged on the group's scale.
inline GradcheckReport gradcheck(const AdrModel& model, const Batch& batch, Real step = 1e-5,
                                 const BackwardOptions& options = {}) {
  const LossAndGrads analytic = loss_and_gradients(model, batch, options);
  AdrModel probe = model;
  std::vector<Tensor*> params;
  std::vector<std::string> groups;
  probe.for_each_parameter([&](const std::string&, const std::string& group, Tensor& t) {
    params.push_back(&t);
    groups.push_back(group);
  });
  GradcheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor saved = p;
    const Tensor numeric = finite_difference_grad(
        [&](const Tensor& x) {
          p = x;
          return evaluate_loss(probe, batch);
        },
        saved, step);
    p = saved;
    auto it = std::find_if(report.groups.begin(), report.groups.end(),
                           [&](const GradcheckGroup& g) { return g.group == groups[k]; });
    if (it == report.groups.end()) {
      report.groups.push_back({groups[k]});
      it = std::prev(report.groups.end());
    }
    it->entries += p.size();
    it->max_abs_error = std::max(it->max_abs_error, max_abs_diff(analytic.grads[k], numeric));
    it->scale = std::max({it->scale, max_abs(analytic.grads[k]), max_abs(numeric)});
  }
  for (auto& g : report.groups) g.max_relative_error = g.max_abs_error / std::max(g.scale, 1e-12);
  return report;
}

}  // namespace adrflow

#endif  // ADRFLOW_TRAINING_HPP

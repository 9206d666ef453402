#ifndef ADRFLOW_EVALUATE_HPP
#define ADRFLOW_EVALUATE_HPP

#include <functional>
#include <vector>

#include "adrflow/data.hpp"
#include "adrflow/metrics.hpp"
#include "adrflow/model.hpp"

namespace adrflow {

/// Every window of every sequence long enough for `history + 1 + horizon`
/// frames; shorter sequences are skipped.
inline std::vector<SequenceSample> windows_of(const std::vector<Sequence>& seqs, std::size_t history,
                                              std::size_t horizon, std::size_t stride = 1) {
  std::vector<SequenceSample> out;
  for (const auto& s : seqs) {
    if (s.size() < history + 1 + horizon) continue;
    for (auto& w : window(s, history, horizon, stride)) out.push_back(std::move(w));
  }
  return out;
}

struct RolloutEval {
  metrics::MetricReport report;  // over all windows x horizon predicted frames
  std::size_t windows = 0;
};

/// Rolls the model `horizon` steps from each window and scores the stacked
/// predictions. `visit` sees each window's predictions as they are made.
inline RolloutEval evaluate_rollout(
    const AdrModel& model, const std::vector<Sequence>& seqs, std::size_t horizon,
    std::size_t stride = 1, const metrics::ReportOptions& options = {},
    const std::function<void(std::size_t, const SequenceSample&, const std::vector<Tensor>&)>& visit = {}) {
  if (horizon < 1) throw Error("evaluate_rollout: horizon must be >= 1");
  const auto samples = windows_of(seqs, model.config.history_len, horizon, stride);
  if (samples.empty()) {
    throw Error("evaluate_rollout: no sequence is long enough for horizon " + std::to_string(horizon));
  }
  std::vector<Tensor> preds, targets;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto roll = rollout(model, samples[i].history, horizon);
    if (visit) visit(i, samples[i], roll);
    for (std::size_t s = 0; s < horizon; ++s) {
      preds.push_back(std::move(roll[s]));
      targets.push_back(samples[i].target[s]);
    }
  }
  return {metrics::report(concat_batch(preds), concat_batch(targets), options), samples.size()};
}

}  // namespace adrflow

#endif  // ADRFLOW_EVALUATE_HPP

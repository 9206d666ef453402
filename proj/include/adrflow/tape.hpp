#ifndef ADRFLOW_TAPE_HPP
#define ADRFLOW_TAPE_HPP

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adrflow/tensor.hpp"

namespace adrflow {

/// Handle to a value recorded on a specific Tape.
struct VarId {
  std::uint64_t tape = 0;
  std::uint32_t index = 0;
};

class Tape;

/// Result of Tape::backward: d(loss)/d(var) for every variable that requires a
/// gradient. Variables the loss does not depend on get zeros.
class Gradients {
 public:
  const Tensor& operator[](VarId v) const {
    if (v.tape != tape_ || v.index >= grads_.size()) {
      throw Error("gradient requested for a variable that is not on this tape");
    }
    const Tensor& g = grads_[v.index];
    if (g.empty()) {
      throw Error("variable " + std::to_string(v.index) + " does not require a gradient");
    }
    return g;
  }

 private:
  friend class Tape;
  std::uint64_t tape_ = 0;
  std::vector<Tensor> grads_;
};

struct BackwardOptions {
  /// Called with each rule's input gradients before they are accumulated.
  /// Test fixtures use it to corrupt a rule.
  std::function<void(std::string_view op, std::vector<Tensor>& input_grads)> rule_hook;
};

/// Explicit, per-forward-pass record of differentiable operations.
///
/// Each recorded node owns its primal value and a gradient rule mapping the
/// output cotangent to one cotangent per input. A tape is not thread-safe;
/// use one tape per thread and sum the resulting gradients.
class Tape {
 public:
  /// Receives the output cotangent and a per-input "needs gradient" mask;
  /// returns one cotangent per input (an empty Tensor where not needed).
  using Rule = std::function<std::vector<Tensor>(const Tensor& grad_out,
                                                 const std::vector<bool>& needed)>;

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  VarId leaf(Tensor value) { return push(std::move(value), true); }
  VarId constant(Tensor value) { return push(std::move(value), false); }

  VarId record(std::string_view op, Tensor value, std::vector<VarId> inputs, Rule rule) {
    Node node;
    node.op = op;
    node.rule = std::move(rule);
    bool any = false;
    for (VarId in : inputs) {
      check(in);
      node.inputs.push_back(in.index);
      any = any || nodes_[in.index].requires_grad;
    }
    if (!value.all_finite()) {
      throw NumericError(std::string(op) + ": produced a non-finite value");
    }
    node.requires_grad = any;
    return push_node(std::move(value), std::move(node));
  }

  const Tensor& value(VarId v) const {
    check(v);
    return values_[v.index];
  }
  bool requires_grad(VarId v) const {
    check(v);
    return nodes_[v.index].requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

  Gradients backward(VarId loss, const BackwardOptions& options = {}) const {
    check(loss);
    if (values_[loss.index].size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       values_[loss.index].shape().str());
    }
    Gradients out;
    out.tape_ = id_;
    out.grads_.resize(nodes_.size());
    out.grads_[loss.index] = Tensor(values_[loss.index].shape(), 1.0);

    for (std::size_t i = loss.index + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (!node.rule || !node.requires_grad || out.grads_[i].empty()) continue;
      std::vector<bool> needed(node.inputs.size());
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        needed[k] = nodes_[node.inputs[k]].requires_grad;
      }
      std::vector<Tensor> input_grads = node.rule(out.grads_[i], needed);
      if (options.rule_hook) options.rule_hook(node.op, input_grads);
      if (input_grads.size() != node.inputs.size()) {
        throw Error(std::string(node.op) + ": gradient rule returned wrong arity");
      }
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        if (!needed[k] || input_grads[k].empty()) continue;
        const std::uint32_t in = node.inputs[k];
        if (input_grads[k].shape() != values_[in].shape()) {
          throw ShapeError(std::string(node.op) + ": gradient shape " +
                           input_grads[k].shape().str() + " differs from primal " +
                           values_[in].shape().str());
        }
        Tensor& acc = out.grads_[in];
        if (acc.empty()) {
          acc = std::move(input_grads[k]);
        } else {
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += input_grads[k][j];
        }
      }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].requires_grad && out.grads_[i].empty()) {
        out.grads_[i] = Tensor(values_[i].shape(), 0.0);
      }
    }
    return out;
  }

 private:
  struct Node {
    std::string_view op;
    std::vector<std::uint32_t> inputs;
    Rule rule;
    bool requires_grad = false;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  VarId push(Tensor value, bool requires_grad) {
    Node node;
    node.op = requires_grad ? "leaf" : "constant";
    node.requires_grad = requires_grad;
    return push_node(std::move(value), std::move(node));
  }

  VarId push_node(Tensor value, Node node) {
    values_.push_back(std::move(value));
    nodes_.push_back(std::move(node));
    return VarId{id_, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void check(VarId v) const {
    if (v.tape != id_ || v.index >= nodes_.size()) {
      throw Error("variable is not on this tape");
    }
  }

  std::uint64_t id_;
  std::deque<Tensor> values_;  // references stay valid across record()
  std::vector<Node> nodes_;
};

}  // namespace adrflow

#endif  // ADRFLOW_TAPE_HPP

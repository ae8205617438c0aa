#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "alnmt/tensor.hpp"

namespace alnmt {

/// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<T>(value.shape(), std::vector<T>(value.size(), T(0)));
  }
  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
};

/// Records primitive operations in execution order so that `backward` can
/// run reverse accumulation. With recording disabled the tape only holds
/// forward values (inference).
template <typename T>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> value);
  /// Registers a trainable leaf. Registering the same parameter twice yields
  /// the same node, so shared weights accumulate one gradient.
  Var<T> parameter(Parameter<T>& p);

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  /// Gradient of the last `backward` loss w.r.t. this node (zeros if none).
  Tensor<T> grad(Var<T> v) const;

  /// Reverse accumulation from a 1x1 loss. Parameter gradients are added to
  /// `Parameter::grad`; callers zero them between steps.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var<T> push(Tensor<T> value, std::span<const Var<T>> parents,
              std::function<void(Tape&, std::size_t)> backward_fn);
  Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> parents,
              std::function<void(Tape&, std::size_t)> backward_fn) {
    return push(std::move(value), std::span<const Var<T>>(parents.begin(), parents.size()),
                std::move(backward_fn));
  }
  Tensor<T>& grad_buffer(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.shape().empty(); }
  const Tensor<T>& node_grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape&, std::size_t)> backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

/// Differentiable primitives. All operate on rank-2 values.
namespace ops {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
/// Element-wise product.
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
/// Adds a 1 x n row to every row of `a`.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
template <typename T> Var<T> rowwise_softmax(Var<T> a);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps);
template <typename T> Var<T> relu(Var<T> a);
/// Rows of `table` selected by `ids`.
template <typename T> Var<T> embedding_lookup(Var<T> table, std::span<const int> ids);
/// Horizontal concatenation.
template <typename T> Var<T> concat(std::span<const Var<T>> parts);
/// Entries where `mask` is true are replaced by the most-negative finite value.
template <typename T> Var<T> masked_fill(Var<T> a, const std::vector<bool>& mask);
/// Multiplies by a fixed mask (already scaled by 1/keep for inverted dropout).
template <typename T> Var<T> apply_mask(Var<T> a, Tensor<T> mask);
template <typename T> Var<T> sum(Var<T> a);

/// Label-smoothed cross entropy of row-wise logits against `targets`,
/// summed over rows and divided by `normalizer`. The smoothed target puts
/// (1 - smoothing) on the gold id plus smoothing/|V| on every id.
template <typename T>
Var<T> smoothed_cross_entropy(Var<T> logits, std::span<const int> targets, T smoothing,
                              T normalizer);

}  // namespace ops

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace alnmt

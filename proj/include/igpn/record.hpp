#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <type_traits>
#include <string_view>
#include <vector>

#include "igpn/tensor.hpp"

namespace igpn {

/// The closed operator set. Every non-leaf entry of a record carries one of these.
enum class Op {
  leaf,
  constant,
  matmul,
  batched_matmul,
  add,
  sub,
  mul,
  scale,
  tanh,
  sigmoid,
  relu,
  softmax,
  sum,
  mean,
  temporal_conv,
  frame_pair_mean,
  concat_channels,
  reshape,
  permute,
  expand,
  channel_affine,
  channel_bias,
  channel_standardize,
  cross_entropy,
};

std::string_view op_name(Op op);

template <typename T>
class Record;

/// Handle to one entry of a Record.
template <typename T>
struct Var {
  Record<T>* record = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
using ForwardFn = std::function<Tensor<T>(std::span<const Tensor<T>* const> inputs, std::vector<Tensor<T>>& saved)>;

/// Receives the output gradient and returns one gradient per input. Entries for
/// inputs whose `wanted` flag is false may be left empty.
template <typename T>
using BackwardFn = std::function<std::vector<Tensor<T>>(
    const Tensor<T>& grad_out, std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
    const std::vector<Tensor<T>>& saved, std::span<const bool> wanted)>;

/// ComputationRecord: an append-only, topologically ordered list of operator
/// applications. Entries own their output values and any saved intermediates.
template <typename T>
class Record {
 public:
  struct Entry {
    Op op = Op::leaf;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    std::vector<Tensor<T>> saved;
    ForwardFn<T> forward;
    BackwardFn<T> backward;
    std::uint64_t macs = 0;
  };

  Record() = default;
  Record(const Record&) = delete;
  Record& operator=(const Record&) = delete;

  Var<T> leaf(Tensor<T> value);
  Var<T> constant(Tensor<T> value);

  /// Runs `forward` on the input values, checks the result is finite and appends it.
  Var<T> apply(Op op, std::vector<Var<T>> inputs, ForwardFn<T> forward, BackwardFn<T> backward,
               std::uint64_t macs = 0);

  const Entry& entry(std::size_t id) const { return entries_.at(id); }
  const Tensor<T>& value(std::size_t id) const { return entries_.at(id).value; }
  std::size_t size() const { return entries_.size(); }

  /// Total multiply-accumulates of all recorded operators.
  std::uint64_t macs() const;

  /// Recomputes every entry from its inputs. Leaves keep their recorded values
  /// unless overridden. Returns the value of every entry.
  std::vector<Tensor<T>> replay(const std::map<std::size_t, Tensor<T>>& leaf_overrides = {}) const;

 private:
  std::vector<Entry> entries_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return record->value(id);
}

template <typename T>
struct GradientSet {
  std::map<std::size_t, Tensor<T>> grads;
  /// Requested leaves that the output does not depend on; their gradient is zero.
  std::vector<std::size_t> unreachable;

  const Tensor<T>& operator[](const Var<T>& leaf) const { return grads.at(leaf.id); }
  bool is_unreachable(const Var<T>& leaf) const;
};

/// Reverse accumulation from a scalar output to the requested leaves.
template <typename T>
GradientSet<T> evaluate_with_gradients(const Record<T>& record, Var<T> scalar_output,
                                       std::type_identity_t<std::span<const Var<T>>> leaves);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every element of x.
template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                                    std::type_identity_t<T> eps);

extern template class Record<float>;
extern template class Record<double>;

}  // namespace igpn

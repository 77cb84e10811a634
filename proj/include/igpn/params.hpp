#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "igpn/record.hpp"

namespace igpn {

enum class Mode { train, eval };

/// Normalization scales and shifts are excluded from weight decay.
enum class ParamKind { weight, norm };

/// Named trainable tensors plus non-trainable state (running moments), both in
/// insertion order so serialization and optimizer sweeps are deterministic.
template <typename T>
class ParameterSet {
 public:
  void add(const std::string& name, Tensor<T> value, ParamKind kind = ParamKind::weight);
  void add_state(const std::string& name, Tensor<T> value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  bool contains_state(const std::string& name) const { return state_.count(name) != 0; }

  Tensor<T>& value(const std::string& name);
  const Tensor<T>& value(const std::string& name) const;
  ParamKind kind(const std::string& name) const;
  Tensor<T>& state(const std::string& name);
  const Tensor<T>& state(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  const std::vector<std::string>& state_names() const { return state_order_; }
  std::size_t scalar_count() const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.order_ != b.order_ || a.state_order_ != b.state_order_) return false;
    for (const auto& n : a.order_) {
      if (!(a.value(n) == b.value(n)) || a.kind(n) != b.kind(n)) return false;
    }
    for (const auto& n : a.state_order_) {
      if (!(a.state(n) == b.state(n))) return false;
    }
    return true;
  }

 private:
  struct Slot {
    Tensor<T> value;
    ParamKind kind;
  };
  std::map<std::string, Slot> params_;
  std::vector<std::string> order_;
  std::map<std::string, Tensor<T>> state_;
  std::vector<std::string> state_order_;
};

/// One forward pass: the record being built, where parameters come from, and
/// whether normalization uses batch or running statistics.
template <typename T>
class ForwardContext {
 public:
  using FieldObserver = std::function<void(const std::string& site, const Tensor<T>& field)>;

  ForwardContext(Record<T>& record, ParameterSet<T>& params, Mode mode) : record_(record), params_(params), mode_(mode) {}

  Record<T>& record() { return record_; }
  ParameterSet<T>& params() { return params_; }
  Mode mode() const { return mode_; }

  /// Leaf for a named parameter; created on first use, reused afterwards.
  Var<T> param(const std::string& name);
  Var<T> constant(Tensor<T> value) { return record_.constant(std::move(value)); }

  const std::vector<std::pair<std::string, Var<T>>>& leaves() const { return leaves_; }

  void set_field_observer(FieldObserver observer) { observer_ = std::move(observer); }
  void observe(const std::string& site, const Tensor<T>& field) const {
    if (observer_) observer_(site, field);
  }

 private:
  Record<T>& record_;
  ParameterSet<T>& params_;
  Mode mode_;
  std::map<std::string, Var<T>> cache_;
  std::vector<std::pair<std::string, Var<T>>> leaves_;
  FieldObserver observer_;
};

/// Uniform(-bound, bound) entries drawn in double precision so float and double
/// builds start from the same values up to rounding.
template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng);

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class ForwardContext<float>;
extern template class ForwardContext<double>;

}  // namespace igpn

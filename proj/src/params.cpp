#include "igpn/params.hpp"

#include <stdexcept>

namespace igpn {

template <typename T>
void ParameterSet<T>::add(const std::string& name, Tensor<T> value, ParamKind kind) {
  if (!params_.emplace(name, Slot{std::move(value), kind}).second) {
    throw std::invalid_argument("duplicate parameter '" + name + "'");
  }
  order_.push_back(name);
}

template <typename T>
void ParameterSet<T>::add_state(const std::string& name, Tensor<T> value) {
  if (!state_.emplace(name, std::move(value)).second) {
    throw std::invalid_argument("duplicate state entry '" + name + "'");
  }
  state_order_.push_back(name);
}

template <typename T>
Tensor<T>& ParameterSet<T>::value(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.value;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::value(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.value;
}

template <typename T>
ParamKind ParameterSet<T>::kind(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.kind;
}

template <typename T>
Tensor<T>& ParameterSet<T>::state(const std::string& name) {
  auto it = state_.find(name);
  if (it == state_.end()) throw std::out_of_range("unknown state entry '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::state(const std::string& name) const {
  auto it = state_.find(name);
  if (it == state_.end()) throw std::out_of_range("unknown state entry '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [name, slot] : params_) total += slot.value.size();
  return total;
}

template <typename T>
Var<T> ForwardContext<T>::param(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  Var<T> v = record_.leaf(params_.value(name));
  cache_.emplace(name, v);
  leaves_.emplace_back(name, v);
  return v;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<T> out(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class ForwardContext<float>;
template class ForwardContext<double>;
template Tensor<float> uniform_tensor(Shape, double, std::mt19937_64&);
template Tensor<double> uniform_tensor(Shape, double, std::mt19937_64&);

}  // namespace igpn

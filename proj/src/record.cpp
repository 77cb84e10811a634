#include "igpn/record.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace igpn {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::matmul: return "matmul";
    case Op::batched_matmul: return "batched_matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::softmax: return "softmax";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::temporal_conv: return "temporal_conv";
    case Op::frame_pair_mean: return "frame_pair_mean";
    case Op::concat_channels: return "concat_channels";
    case Op::reshape: return "reshape";
    case Op::permute: return "permute";
    case Op::expand: return "expand";
    case Op::channel_affine: return "channel_affine";
    case Op::channel_bias: return "channel_bias";
    case Op::channel_standardize: return "channel_standardize";
    case Op::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

namespace {

template <typename T>
void require_finite(const Tensor<T>& t, Op op, const char* phase) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite value in ") + phase + " of operator '" +
                       std::string(op_name(op)) + "'");
  }
}

}  // namespace

template <typename T>
Var<T> Record<T>::leaf(Tensor<T> value) {
  require_finite(value, Op::leaf, "leaf value");
  Entry e;
  e.op = Op::leaf;
  e.value = std::move(value);
  entries_.push_back(std::move(e));
  return {this, entries_.size() - 1};
}

template <typename T>
Var<T> Record<T>::constant(Tensor<T> value) {
  require_finite(value, Op::constant, "constant value");
  Entry e;
  e.op = Op::constant;
  e.value = std::move(value);
  entries_.push_back(std::move(e));
  return {this, entries_.size() - 1};
}

template <typename T>
Var<T> Record<T>::apply(Op op, std::vector<Var<T>> inputs, ForwardFn<T> forward, BackwardFn<T> backward,
                        std::uint64_t macs) {
  Entry e;
  e.op = op;
  std::vector<const Tensor<T>*> in;
  in.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.record != this) throw std::logic_error("operand belongs to a different record");
    e.inputs.push_back(v.id);
    in.push_back(&entries_[v.id].value);
  }
  e.value = forward(in, e.saved);
  require_finite(e.value, op, "forward");
  e.forward = std::move(forward);
  e.backward = std::move(backward);
  e.macs = macs;
  entries_.push_back(std::move(e));
  return {this, entries_.size() - 1};
}

template <typename T>
std::uint64_t Record<T>::macs() const {
  std::uint64_t total = 0;
  for (const auto& e : entries_) total += e.macs;
  return total;
}

template <typename T>
std::vector<Tensor<T>> Record<T>::replay(const std::map<std::size_t, Tensor<T>>& leaf_overrides) const {
  std::vector<Tensor<T>> values;
  values.reserve(entries_.size());
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const Entry& e = entries_[k];
    if (e.op == Op::leaf || e.op == Op::constant) {
      auto it = leaf_overrides.find(k);
      values.push_back(it != leaf_overrides.end() ? it->second : e.value);
      continue;
    }
    std::vector<const Tensor<T>*> in;
    for (std::size_t id : e.inputs) in.push_back(&values[id]);
    std::vector<Tensor<T>> saved;
    values.push_back(e.forward(in, saved));
    require_finite(values.back(), e.op, "replay");
  }
  return values;
}

template <typename T>
bool GradientSet<T>::is_unreachable(const Var<T>& leaf) const {
  return std::find(unreachable.begin(), unreachable.end(), leaf.id) != unreachable.end();
}

template <typename T>
GradientSet<T> evaluate_with_gradients(const Record<T>& record, Var<T> scalar_output,
                                       std::type_identity_t<std::span<const Var<T>>> leaves) {
  if (scalar_output.record != &record) throw std::logic_error("output belongs to a different record");
  const Tensor<T>& out_value = record.value(scalar_output.id);
  if (!out_value.shape().empty()) {
    throw ShapeError("gradient evaluation needs a scalar output, got shape " + to_string(out_value.shape()));
  }

  const std::size_t n = scalar_output.id + 1;
  std::vector<bool> wanted(n, false);
  for (const auto& leaf : leaves) {
    if (leaf.id < n) wanted[leaf.id] = true;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto& e = record.entry(k);
    for (std::size_t id : e.inputs) {
      if (wanted[id]) {
        wanted[k] = true;
        break;
      }
    }
  }

  std::vector<std::optional<Tensor<T>>> grads(n);
  grads[scalar_output.id] = Tensor<T>(Shape{}, T{1});
  for (std::size_t k = n; k-- > 0;) {
    const auto& e = record.entry(k);
    if (!grads[k] || e.inputs.empty() || !wanted[k]) continue;
    std::vector<const Tensor<T>*> in;
    bool wants[8] = {};
    for (std::size_t i = 0; i < e.inputs.size(); ++i) {
      in.push_back(&record.value(e.inputs[i]));
      wants[i] = wanted[e.inputs[i]];
    }
    auto input_grads = e.backward(*grads[k], in, e.value, e.saved, std::span<const bool>(wants, e.inputs.size()));
    for (std::size_t i = 0; i < e.inputs.size(); ++i) {
      if (!wants[i]) continue;
      auto& g = input_grads.at(i);
      require_finite(g, e.op, "backward");
      auto& slot = grads[e.inputs[i]];
      if (!slot) {
        slot = std::move(g);
      } else {
        auto dst = slot->data();
        auto src = g.data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  }

  GradientSet<T> result;
  for (const auto& leaf : leaves) {
    if (leaf.id < n && grads[leaf.id]) {
      result.grads.insert_or_assign(leaf.id, *grads[leaf.id]);
    } else {
      result.grads.insert_or_assign(leaf.id, Tensor<T>(record.value(leaf.id).shape()));
      result.unreachable.push_back(leaf.id);
    }
  }
  return result;
}

template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                                    std::type_identity_t<T> eps) {
  if (!(eps > T{0})) throw std::invalid_argument("finite difference step must be positive");
  Tensor<T> probe = x;
  Tensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = f(probe);
    probe[i] = orig - eps;
    const T down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value during finite differencing at element " + std::to_string(i));
    }
    grad[i] = (up - down) / (T{2} * eps);
  }
  return grad;
}

template class Record<float>;
template class Record<double>;
template struct GradientSet<float>;
template struct GradientSet<double>;
template GradientSet<float> evaluate_with_gradients(const Record<float>&, Var<float>, std::span<const Var<float>>);
template GradientSet<double> evaluate_with_gradients(const Record<double>&, Var<double>, std::span<const Var<double>>);
template Tensor<float> finite_difference_gradient(const std::function<float(const Tensor<float>&)>&,
                                                  const Tensor<float>&, float);
template Tensor<double> finite_difference_gradient(const std::function<double(const Tensor<double>&)>&,
                                                   const Tensor<double>&, double);

}  // namespace igpn

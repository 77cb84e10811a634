#include "igpn/gcn.hpp"

#include <cmath>

namespace igpn {

template <typename T>
Var<T> spatial_graph_conv(Var<T> x, Var<T> weight, Var<T> adjacency) {
  const auto s = x.shape();
  if (s.size() != 4) throw ShapeError("spatial_graph_conv: input must be (B,C,T,N), got " + to_string(s));
  const auto& ws = weight.shape();
  if (ws.size() != 2 || ws[1] != s[1]) {
    throw ShapeError("spatial_graph_conv: weight " + to_string(ws) + " does not match input " + to_string(s));
  }
  if (adjacency.shape() != Shape{s[3], s[3]}) {
    throw ShapeError("spatial_graph_conv: adjacency " + to_string(adjacency.shape()) + " does not match " +
                     std::to_string(s[3]) + " nodes");
  }
  const std::size_t batch = s[0], frames = s[2], nodes = s[3], out = ws[0];
  auto updated = batched_matmul(weight, reshape(x, Shape{batch, s[1], frames * nodes}));
  auto rows = reshape(updated, Shape{batch * out * frames, nodes});
  return reshape(matmul(rows, adjacency), Shape{batch, out, frames, nodes});
}

template <typename T>
Var<T> batch_normalize(Var<T> x, Var<T> gamma, Var<T> beta, Mode mode, Tensor<T>& running_mean,
                       Tensor<T>& running_var) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ShapeError("batch_normalize: input must have a channel axis, got " + to_string(s));
  if (s[0] == 0) throw ShapeError("batch_normalize: zero-size batch");
  const std::size_t channels = s[1];
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels} || running_mean.shape() != Shape{channels} ||
      running_var.shape() != Shape{channels}) {
    throw ShapeError("batch_normalize: parameters must have " + std::to_string(channels) + " entries");
  }
  const T eps = static_cast<T>(kNormEpsilon);
  Record<T>& rec = *x.record;

  if (mode == Mode::eval) {
    Tensor<T> scale(Shape{channels}), shift(Shape{channels});
    for (std::size_t c = 0; c < channels; ++c) {
      scale[c] = T{1} / std::sqrt(running_var[c] + eps);
      shift[c] = -running_mean[c] * scale[c];
    }
    auto standardized = channel_affine(x, rec.constant(std::move(scale)), rec.constant(std::move(shift)));
    return channel_affine(standardized, gamma, beta);
  }

  const std::size_t inner = x.value().size() / (s[0] * channels);
  const std::size_t count = s[0] * inner;
  const auto& xv = x.value();
  const T momentum = static_cast<T>(kNormMomentum);
  for (std::size_t c = 0; c < channels; ++c) {
    T mu{0};
    for (std::size_t b = 0; b < s[0]; ++b) {
      for (std::size_t j = 0; j < inner; ++j) mu += xv[(b * channels + c) * inner + j];
    }
    mu /= static_cast<T>(count);
    T var{0};
    for (std::size_t b = 0; b < s[0]; ++b) {
      for (std::size_t j = 0; j < inner; ++j) {
        const T d = xv[(b * channels + c) * inner + j] - mu;
        var += d * d;
      }
    }
    const T unbiased = count > 1 ? var / static_cast<T>(count - 1) : T{0};
    running_mean[c] = (T{1} - momentum) * running_mean[c] + momentum * mu;
    running_var[c] = (T{1} - momentum) * running_var[c] + momentum * unbiased;
  }
  return channel_affine(channel_standardize(x, eps), gamma, beta);
}

template <typename T>
void init_batch_norm(ParameterSet<T>& params, const std::string& prefix, std::size_t channels) {
  params.add(prefix + ".gamma", Tensor<T>(Shape{channels}, T{1}), ParamKind::norm);
  params.add(prefix + ".beta", Tensor<T>(Shape{channels}, T{0}), ParamKind::norm);
  params.add_state(prefix + ".running_mean", Tensor<T>(Shape{channels}, T{0}));
  params.add_state(prefix + ".running_var", Tensor<T>(Shape{channels}, T{1}));
}

template <typename T>
Var<T> batch_norm_layer(ForwardContext<T>& ctx, const std::string& prefix, Var<T> x) {
  auto& params = ctx.params();
  return batch_normalize(x, ctx.param(prefix + ".gamma"), ctx.param(prefix + ".beta"), ctx.mode(),
                         params.state(prefix + ".running_mean"), params.state(prefix + ".running_var"));
}

template <typename T>
GcnBlock<T>::GcnBlock(std::string prefix, GcnBlockConfig config) : prefix_(std::move(prefix)), config_(config) {
  if (config_.temporal_kernel % 2 == 0) throw std::invalid_argument("temporal kernel size must be odd");
  if (config_.in_channels == 0 || config_.out_channels == 0) throw std::invalid_argument("GCN block needs channels");
}

template <typename T>
void GcnBlock<T>::init(ParameterSet<T>& params, std::mt19937_64& rng) const {
  const auto cin = static_cast<double>(config_.in_channels);
  const auto cout = static_cast<double>(config_.out_channels);
  const auto k = static_cast<double>(config_.temporal_kernel);
  params.add(prefix_ + ".gcn.weight",
             uniform_tensor<T>(Shape{config_.out_channels, config_.in_channels}, std::sqrt(6.0 / cin), rng));
  init_batch_norm(params, prefix_ + ".bn1", config_.out_channels);
  params.add(prefix_ + ".tcn.weight",
             uniform_tensor<T>(Shape{config_.out_channels, config_.out_channels, config_.temporal_kernel},
                               std::sqrt(6.0 / (cout * k)), rng));
  init_batch_norm(params, prefix_ + ".bn2", config_.out_channels);
}

template <typename T>
Var<T> GcnBlock<T>::forward(ForwardContext<T>& ctx, Var<T> x, Var<T> adjacency) const {
  auto y = spatial_graph_conv(x, ctx.param(prefix_ + ".gcn.weight"), adjacency);
  y = relu(batch_norm_layer(ctx, prefix_ + ".bn1", y));
  y = temporal_conv(y, ctx.param(prefix_ + ".tcn.weight"), config_.temporal_stride);
  y = batch_norm_layer(ctx, prefix_ + ".bn2", y);
  if (has_residual()) y = add(y, x);
  return relu(y);
}

template class GcnBlock<float>;
template class GcnBlock<double>;

#define IGPN_INSTANTIATE_GCN(T)                                                                           \
  template Var<T> spatial_graph_conv(Var<T>, Var<T>, Var<T>);                                             \
  template Var<T> batch_normalize(Var<T>, Var<T>, Var<T>, Mode, Tensor<T>&, Tensor<T>&);                  \
  template void init_batch_norm(ParameterSet<T>&, const std::string&, std::size_t);                       \
  template Var<T> batch_norm_layer(ForwardContext<T>&, const std::string&, Var<T>);

IGPN_INSTANTIATE_GCN(float)
IGPN_INSTANTIATE_GCN(double)

}  // namespace igpn

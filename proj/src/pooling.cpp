#include "igpn/pooling.hpp"

#include <cmath>

#include "igpn/gcn.hpp"

namespace igpn {

std::string to_string(Normalizer sigma) {
  switch (sigma) {
    case Normalizer::tanh: return "tanh";
    case Normalizer::sigmoid: return "sigmoid";
    case Normalizer::softmax: return "softmax";
  }
  return "tanh";
}

Normalizer parse_normalizer(const std::string& text) {
  if (text == "tanh") return Normalizer::tanh;
  if (text == "sigmoid") return Normalizer::sigmoid;
  if (text == "softmax") return Normalizer::softmax;
  throw std::invalid_argument("unknown normalizer '" + text + "' (expected tanh, sigmoid or softmax)");
}

namespace {

// 1x1 map of (B,C,T,N) by weight (C',C).
template <typename T>
Var<T> project(Var<T> x, Var<T> weight) {
  const auto s = x.shape();
  const std::size_t out = weight.shape().at(0);
  auto flat = reshape(x, Shape{s[0], s[1], s[2] * s[3]});
  return reshape(batched_matmul(weight, flat), Shape{s[0], out, s[2], s[3]});
}

}  // namespace

template <typename T>
Var<T> correlation(Var<T> x, Var<T> phi, Var<T> psi, Normalizer sigma) {
  const auto s = x.shape();
  if (s.size() != 4) throw ShapeError("correlation: input must be (B,C,T,N), got " + to_string(s));
  const std::size_t batch = s[0], frames = s[2], nodes = s[3];
  if (phi.shape().size() != 2 || phi.shape()[1] != s[1] || psi.shape() != phi.shape()) {
    throw ShapeError("correlation: projections must both be (C/r, " + std::to_string(s[1]) + ")");
  }
  const std::size_t proj = phi.shape()[0];

  // (B,C',T,N) -> (B*T, N, C') and (B*T, C', N); their product holds every <phi_i, psi_j>.
  auto queries = reshape(permute(project(x, phi), {0, 2, 3, 1}), Shape{batch * frames, nodes, proj});
  auto keys = reshape(permute(project(x, psi), {0, 2, 1, 3}), Shape{batch * frames, proj, nodes});
  auto pairwise = batched_matmul(queries, keys);
  auto avg = reshape(mean(pairwise, {2}), Shape{batch, frames, nodes});
  switch (sigma) {
    case Normalizer::tanh: return tanh(avg);
    case Normalizer::sigmoid: return sigmoid(avg);
    case Normalizer::softmax: return softmax(avg);
  }
  return tanh(avg);
}

template <typename T>
Var<T> spatial_pool(Var<T> x, Var<T> field, Var<T> assignment, bool residual) {
  const auto s = x.shape();
  if (s.size() != 4) throw ShapeError("spatial_pool: input must be (B,C,T,N), got " + to_string(s));
  const std::size_t batch = s[0], channels = s[1], frames = s[2], nodes = s[3];
  if (field.shape() != Shape{batch, frames, nodes}) {
    throw ShapeError("spatial_pool: field " + to_string(field.shape()) + " does not match input " + to_string(s));
  }
  const auto& ps = assignment.shape();
  if (ps.size() != 2 || ps[0] != nodes) {
    throw ShapeError("spatial_pool: assignment " + to_string(ps) + " does not match " + std::to_string(nodes) +
                     " nodes");
  }
  const std::size_t regions = ps[1];
  auto weights = expand(reshape(field, Shape{batch, 1, frames, nodes}), 1, channels);
  auto weighted = mul(x, weights);
  if (residual) weighted = add(x, weighted);
  auto rows = reshape(weighted, Shape{batch * channels * frames, nodes});
  return reshape(matmul(rows, assignment), Shape{batch, channels, frames, regions});
}

template <typename T>
Var<T> temporal_pool(Var<T> x) {
  return frame_pair_mean(x);
}

template <typename T>
StructurePooling<T>::StructurePooling(std::string prefix, std::size_t channels, PoolingConfig config,
                                      AssignmentMatrix assignment, bool temporal)
    : prefix_(std::move(prefix)),
      channels_(channels),
      config_(config),
      assignment_(std::move(assignment)),
      temporal_(temporal) {
  if (config_.reduction < 1) throw std::invalid_argument("pooling reduction ratio must be >= 1");
  if (channels_ % config_.reduction != 0) {
    throw std::invalid_argument("channel count " + std::to_string(channels_) + " is not divisible by r=" +
                                std::to_string(config_.reduction));
  }
}

template <typename T>
void StructurePooling<T>::init(ParameterSet<T>& params, std::mt19937_64& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels_));
  params.add(prefix_ + ".phi", uniform_tensor<T>(Shape{projected(), channels_}, bound, rng));
  params.add(prefix_ + ".psi", uniform_tensor<T>(Shape{projected(), channels_}, bound, rng));
  if (config_.latent_norm) {
    params.add_state(prefix_ + ".latent.running_mean", Tensor<T>(Shape{channels_}, T{0}));
    params.add_state(prefix_ + ".latent.running_var", Tensor<T>(Shape{channels_}, T{1}));
  }
}

template <typename T>
Var<T> StructurePooling<T>::latent(ForwardContext<T>& ctx, Var<T> x) const {
  if (!config_.latent_norm) return x;
  auto& params = ctx.params();
  return batch_normalize(x, ctx.constant(Tensor<T>(Shape{channels_}, T{1})), ctx.constant(Tensor<T>(Shape{channels_}, T{0})),
                         ctx.mode(), params.state(prefix_ + ".latent.running_mean"),
                         params.state(prefix_ + ".latent.running_var"));
}

template <typename T>
Var<T> StructurePooling<T>::correlation(ForwardContext<T>& ctx, Var<T> x) const {
  auto field = igpn::correlation(latent(ctx, x), ctx.param(prefix_ + ".phi"), ctx.param(prefix_ + ".psi"), config_.sigma);
  ctx.observe(prefix_, field.value());
  return field;
}

template <typename T>
Var<T> StructurePooling<T>::forward(ForwardContext<T>& ctx, Var<T> x) const {
  auto field = correlation(ctx, x);
  auto p = ctx.constant(assignment_.p.template cast<T>());
  auto pooled = spatial_pool(x, field, p, config_.residual);
  return temporal_ ? temporal_pool(pooled) : pooled;
}

template class StructurePooling<float>;
template class StructurePooling<double>;

#define IGPN_INSTANTIATE_POOLING(T)                                       \
  template Var<T> correlation(Var<T>, Var<T>, Var<T>, Normalizer);        \
  template Var<T> spatial_pool(Var<T>, Var<T>, Var<T>, bool);             \
  template Var<T> temporal_pool(Var<T>);

IGPN_INSTANTIATE_POOLING(float)
IGPN_INSTANTIATE_POOLING(double)

}  // namespace igpn

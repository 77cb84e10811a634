#include "igpn/blocks.hpp"

#include <cmath>

namespace igpn {

std::string to_string(FusionMode mode) { return mode == FusionMode::sum ? "sum" : "concat"; }

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "sum") return FusionMode::sum;
  if (text == "concat") return FusionMode::concat;
  throw std::invalid_argument("unknown fusion mode '" + text + "' (expected sum or concat)");
}

template <typename T>
Var<T> fuse_branches(Var<T> coarse, Var<T> fine, double weight, FusionMode mode, Var<T>* projection) {
  if (coarse.shape() != fine.shape()) {
    throw ShapeError("fuse_branches: branch shapes differ " + to_string(coarse.shape()) + " vs " +
                     to_string(fine.shape()));
  }
  if (mode == FusionMode::sum) {
    if (weight < 0.0 || weight > 1.0) throw std::invalid_argument("fusion weight must lie in [0,1]");
    return add(scale(coarse, static_cast<T>(weight)), scale(fine, static_cast<T>(1.0 - weight)));
  }
  if (projection == nullptr) throw std::invalid_argument("concat fusion needs a projection weight");
  auto stacked = concat_channels(coarse, fine);
  const auto s = stacked.shape();
  const std::size_t out = projection->shape().at(0);
  if (s.size() == 2) return matmul(stacked, permute(*projection, {1, 0}));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  auto mixed = batched_matmul(*projection, reshape(stacked, Shape{s[0], s[1], inner}));
  Shape out_shape = s;
  out_shape[1] = out;
  return reshape(mixed, out_shape);
}

template <typename T>
CrossFusionBlock<T>::CrossFusionBlock(std::string prefix, CrossFusionConfig config, AssignmentMatrix assignment)
    : prefix_(std::move(prefix)),
      config_(config),
      coarse_pool_(prefix_ + ".coarse.pool", config.in_channels, config.pooling, assignment, config.temporal_pooling),
      coarse_gcn_(prefix_ + ".coarse.gcn", {config.in_channels, config.out_channels, config.temporal_kernel, 1}),
      fine_gcn_(prefix_ + ".fine.gcn", {config.in_channels, config.out_channels, config.temporal_kernel, 1}),
      fine_pool_(prefix_ + ".fine.pool", config.out_channels, config.pooling, std::move(assignment),
                 config.temporal_pooling) {
  if (config_.weight < 0.0 || config_.weight > 1.0) throw std::invalid_argument("fusion weight must lie in [0,1]");
}

template <typename T>
void CrossFusionBlock<T>::init(ParameterSet<T>& params, std::mt19937_64& rng) const {
  coarse_pool_.init(params, rng);
  coarse_gcn_.init(params, rng);
  fine_gcn_.init(params, rng);
  fine_pool_.init(params, rng);
  if (config_.mode == FusionMode::concat) {
    const std::size_t c = config_.out_channels;
    params.add(prefix_ + ".fuse.weight",
               uniform_tensor<T>(Shape{c, 2 * c}, std::sqrt(3.0 / static_cast<double>(2 * c)), rng));
  }
}

template <typename T>
typename CrossFusionBlock<T>::Branches CrossFusionBlock<T>::branches(ForwardContext<T>& ctx, Var<T> x,
                                                                     Var<T> fine_adjacency,
                                                                     Var<T> coarse_adjacency) const {
  auto coarse = coarse_gcn_.forward(ctx, coarse_pool_.forward(ctx, x), coarse_adjacency);
  auto refined = fine_gcn_.forward(ctx, x, fine_adjacency);
  auto fine = fine_pool_.forward(ctx, refined);
  return {coarse, fine};
}

template <typename T>
Var<T> CrossFusionBlock<T>::fuse(ForwardContext<T>& ctx, Var<T> coarse, Var<T> fine) const {
  if (config_.mode == FusionMode::concat) {
    auto w = ctx.param(prefix_ + ".fuse.weight");
    return fuse_branches(coarse, fine, config_.weight, config_.mode, &w);
  }
  return fuse_branches(coarse, fine, config_.weight, config_.mode);
}

template <typename T>
Var<T> CrossFusionBlock<T>::forward(ForwardContext<T>& ctx, Var<T> x, Var<T> fine_adjacency,
                                    Var<T> coarse_adjacency) const {
  auto b = branches(ctx, x, fine_adjacency, coarse_adjacency);
  return fuse(ctx, b.coarse, b.fine);
}

template <typename T>
Tensor<T> bone_features(const Tensor<T>& positions, const SkeletonTopology& topology) {
  const auto& s = positions.shape();
  if (s.size() != 4 || s[3] != topology.node_count) {
    throw ShapeError("bone_features: positions " + to_string(s) + " do not match topology '" + topology.name + "'");
  }
  if (!topology.has_parents()) {
    throw SkeletonError("bone_features: topology '" + topology.name + "' has no parent map");
  }
  Tensor<T> out(s);
  const std::size_t rows = s[0] * s[1] * s[2], nodes = s[3];
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = positions.data().data() + r * nodes;
    T* dst = out.data().data() + r * nodes;
    for (std::size_t n = 0; n < nodes; ++n) {
      const auto& parent = topology.parents[n];
      dst[n] = parent ? src[n] - src[*parent] : T{0};
    }
  }
  return out;
}

template <typename T>
Tensor<T> motion_features(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[2] == 0) throw ShapeError("motion_features: input must be (B,C,T,N), got " + to_string(s));
  Tensor<T> out(s);
  const std::size_t rows = s[0] * s[1], frames = s[2], nodes = s[3];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t + 1 < frames; ++t) {
      const T* cur = x.data().data() + (r * frames + t) * nodes;
      const T* next = cur + nodes;
      T* dst = out.data().data() + (r * frames + t) * nodes;
      for (std::size_t n = 0; n < nodes; ++n) dst[n] = next[n] - cur[n];
    }
  }
  return out;
}

template <typename T>
InformationSupplement<T>::InformationSupplement(std::string prefix, IsmConfig config, SkeletonTopology topology)
    : prefix_(std::move(prefix)), config_(config), topology_(std::move(topology)) {
  if (config_.layers == 0 || config_.embed_channels == 0) throw std::invalid_argument("ISM needs layers and channels");
  if (config_.enabled && !topology_.has_parents()) {
    throw SkeletonError("ISM bone stream needs a parent map on topology '" + topology_.name + "'");
  }
}

template <typename T>
void InformationSupplement<T>::init(ParameterSet<T>& params, std::mt19937_64& rng) const {
  std::vector<std::string> streams = config_.enabled ? std::vector<std::string>{"vec", "pos"}
                                                     : std::vector<std::string>{"pos"};
  const std::size_t width = stream_channels();
  for (const auto& stream : streams) {
    const std::string base = prefix_ + "." + stream;
    if (config_.normalize) init_batch_norm(params, base + ".norm", 3);
    std::size_t in = 3;
    for (std::size_t l = 0; l < config_.layers; ++l) {
      params.add(base + ".embed" + std::to_string(l) + ".weight",
                 uniform_tensor<T>(Shape{width, in}, std::sqrt(6.0 / static_cast<double>(in)), rng));
      in = width;
    }
  }
}

template <typename T>
Var<T> InformationSupplement<T>::embed(ForwardContext<T>& ctx, const std::string& stream, Var<T> x,
                                       Var<T> adjacency) const {
  const std::string base = prefix_ + "." + stream;
  if (config_.normalize) x = batch_norm_layer(ctx, base + ".norm", x);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    x = relu(spatial_graph_conv(x, ctx.param(base + ".embed" + std::to_string(l) + ".weight"), adjacency));
  }
  return x;
}

template <typename T>
Var<T> InformationSupplement<T>::forward(ForwardContext<T>& ctx, const Tensor<T>& positions, Var<T> adjacency) const {
  const auto& s = positions.shape();
  if (s.size() != 4 || s[1] != 3 || s[3] != topology_.node_count) {
    throw ShapeError("ISM input must be (B,3,T," + std::to_string(topology_.node_count) + "), got " + to_string(s));
  }
  auto pos = embed(ctx, "pos", ctx.constant(positions), adjacency);
  if (!config_.enabled) return pos;
  auto vec = embed(ctx, "vec", ctx.constant(bone_features(positions, topology_)), adjacency);
  return concat_channels(vec, pos);
}

template <typename T>
Var<T> global_average_pool(Var<T> x) {
  if (x.shape().size() != 4) throw ShapeError("global_average_pool: input must be (B,C,T,N)");
  return mean(x, {2, 3});
}

template <typename T>
ClassifierHead<T>::ClassifierHead(std::string prefix, std::size_t channels, std::size_t classes)
    : prefix_(std::move(prefix)), channels_(channels), classes_(classes) {
  if (classes_ == 0) throw std::invalid_argument("classifier needs at least one class");
}

template <typename T>
void ClassifierHead<T>::init(ParameterSet<T>& params, std::mt19937_64& rng) const {
  // narrow start keeps the initial loss near ln K
  const double bound = 0.25 / std::sqrt(static_cast<double>(channels_));
  params.add(prefix_ + ".weight", uniform_tensor<T>(Shape{channels_, classes_}, bound, rng));
  params.add(prefix_ + ".bias", Tensor<T>(Shape{classes_}, T{0}));
}

template <typename T>
Var<T> ClassifierHead<T>::classify(ForwardContext<T>& ctx, Var<T> pooled) const {
  return channel_bias(matmul(pooled, ctx.param(prefix_ + ".weight")), ctx.param(prefix_ + ".bias"));
}

template <typename T>
Var<T> ClassifierHead<T>::forward(ForwardContext<T>& ctx, Var<T> x) const {
  return classify(ctx, global_average_pool(x));
}

template class CrossFusionBlock<float>;
template class CrossFusionBlock<double>;
template class InformationSupplement<float>;
template class InformationSupplement<double>;
template class ClassifierHead<float>;
template class ClassifierHead<double>;

#define IGPN_INSTANTIATE_BLOCKS(T)                                                  \
  template Var<T> fuse_branches(Var<T>, Var<T>, double, FusionMode, Var<T>*);       \
  template Tensor<T> bone_features(const Tensor<T>&, const SkeletonTopology&);      \
  template Tensor<T> motion_features(const Tensor<T>&);                             \
  template Var<T> global_average_pool(Var<T>);

IGPN_INSTANTIATE_BLOCKS(float)
IGPN_INSTANTIATE_BLOCKS(double)

}  // namespace igpn

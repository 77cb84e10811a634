#pragma once

#include <random>
#include <string>

#include "igpn/gcn.hpp"
#include "igpn/pooling.hpp"
#include "igpn/skeleton.hpp"

namespace igpn {

enum class FusionMode { sum, concat };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

struct CrossFusionConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t temporal_kernel = 5;
  PoolingConfig pooling;
  double weight = 0.5;  ///< s: share of the coarse (pooled-first) branch
  FusionMode mode = FusionMode::sum;
  bool temporal_pooling = true;
};

/// y = s h + (1 - s) e in sum mode. Concat mode stacks [h, e] on the channel
/// axis and maps 2C -> C with `projection` (C, 2C). Works on (B,C,...) tensors,
/// so it also fuses globally pooled (B,C) vectors.
template <typename T>
Var<T> fuse_branches(Var<T> coarse, Var<T> fine, double weight, FusionMode mode, Var<T>* projection = nullptr);

/// Coarse branch h = GCN(STPool(x)) on the pooled graph, fine branch
/// e = STPool(GCN(x)) with the fine-graph GCN, fused per fuse_branches.
template <typename T>
class CrossFusionBlock {
 public:
  struct Branches {
    Var<T> coarse;
    Var<T> fine;
  };

  CrossFusionBlock(std::string prefix, CrossFusionConfig config, AssignmentMatrix assignment);

  void init(ParameterSet<T>& params, std::mt19937_64& rng) const;
  Branches branches(ForwardContext<T>& ctx, Var<T> x, Var<T> fine_adjacency, Var<T> coarse_adjacency) const;
  Var<T> fuse(ForwardContext<T>& ctx, Var<T> coarse, Var<T> fine) const;
  Var<T> forward(ForwardContext<T>& ctx, Var<T> x, Var<T> fine_adjacency, Var<T> coarse_adjacency) const;

  const CrossFusionConfig& config() const { return config_; }

 private:
  std::string prefix_;
  CrossFusionConfig config_;
  StructurePooling<T> coarse_pool_;
  GcnBlock<T> coarse_gcn_;
  GcnBlock<T> fine_gcn_;
  StructurePooling<T> fine_pool_;
};

/// Bone vectors: joint minus its parent; the root gets zeros. x_pos (B,3,T,N).
template <typename T>
Tensor<T> bone_features(const Tensor<T>& positions, const SkeletonTopology& topology);

/// Frame differences x[t+1] - x[t]; the final frame is zero. x (B,C,T,N).
template <typename T>
Tensor<T> motion_features(const Tensor<T>& x);

struct IsmConfig {
  bool enabled = true;          ///< false: position stream only, embedded straight to 2 x embed channels
  bool normalize = true;        ///< input batch normalization on each stream
  std::size_t embed_channels = 32;
  std::size_t layers = 2;

  std::size_t output_channels() const { return 2 * embed_channels; }
};

/// Joint-position and bone-vector streams, each normalized and embedded by
/// stacked graph convolutions, concatenated as [bone, position].
template <typename T>
class InformationSupplement {
 public:
  InformationSupplement(std::string prefix, IsmConfig config, SkeletonTopology topology);

  void init(ParameterSet<T>& params, std::mt19937_64& rng) const;
  /// positions (B,3,T,N) -> (B, 2 * embed, T, N)
  Var<T> forward(ForwardContext<T>& ctx, const Tensor<T>& positions, Var<T> adjacency) const;

  const IsmConfig& config() const { return config_; }

 private:
  Var<T> embed(ForwardContext<T>& ctx, const std::string& stream, Var<T> x, Var<T> adjacency) const;
  std::size_t stream_channels() const { return config_.enabled ? config_.embed_channels : config_.output_channels(); }

  std::string prefix_;
  IsmConfig config_;
  SkeletonTopology topology_;
};

/// Mean over frames and nodes: (B,C,T,N) -> (B,C).
template <typename T>
Var<T> global_average_pool(Var<T> x);

/// Global average pooling followed by an affine C -> K map.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead(std::string prefix, std::size_t channels, std::size_t classes);

  void init(ParameterSet<T>& params, std::mt19937_64& rng) const;
  Var<T> forward(ForwardContext<T>& ctx, Var<T> x) const;
  /// Affine map only, for features that are already pooled to (B,C).
  Var<T> classify(ForwardContext<T>& ctx, Var<T> pooled) const;

 private:
  std::string prefix_;
  std::size_t channels_;
  std::size_t classes_;
};

extern template class CrossFusionBlock<float>;
extern template class CrossFusionBlock<double>;
extern template class InformationSupplement<float>;
extern template class InformationSupplement<double>;
extern template class ClassifierHead<float>;
extern template class ClassifierHead<double>;

}  // namespace igpn

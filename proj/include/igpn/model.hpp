#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "igpn/blocks.hpp"

namespace igpn {

enum class Variant { light, heavy };

std::string to_string(Variant variant);
Variant parse_variant(const std::string& text);

struct ModelConfig {
  Variant variant = Variant::light;
  SkeletonSpec skeleton = builtin_skeleton("ntu25");
  std::array<std::size_t, 3> channels{64, 128, 256};
  std::vector<std::size_t> pool_locations{1, 2, 3};  ///< 1-based stage indices that pool
  PoolingConfig pooling;
  double fusion_weight = 0.5;
  FusionMode fusion_mode = FusionMode::sum;
  std::size_t temporal_kernel = 5;
  std::size_t classes = 60;
  std::size_t frames = 64;
  IsmConfig ism;

  void validate() const;
  bool pools_at(std::size_t stage) const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Shapes flowing through one stage of the network.
struct StagePlan {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool pooled = false;
  std::size_t level_in = 0;  ///< graph hierarchy level of the stage input
  std::size_t level_out = 0;
  std::size_t frames_in = 0;
  std::size_t frames_out = 0;
  std::size_t nodes_in = 0;
  std::size_t nodes_out = 0;
};

std::vector<StagePlan> plan_stages(const ModelConfig& config);

/// Multiply-accumulate counts (1 MAC = 1 FLOP unit) derived from shapes only.
struct FlopsReport {
  struct Item {
    std::string stage;
    std::string op;
    std::uint64_t macs = 0;
  };
  std::vector<Item> items;

  std::uint64_t total() const;
  std::uint64_t stage_total(const std::string& stage) const;
  std::vector<std::string> stage_names() const;
};

FlopsReport count_flops(const ModelConfig& config, std::size_t batch = 1);

/// ISM stem -> three stages -> global average pooling -> classifier. Light
/// stages pool then convolve; heavy stages are cross fusion blocks, the last of
/// which fuses after global pooling. Stages outside pool_locations keep the
/// same modules with an identity assignment and no temporal pooling.
template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed);
  /// Adopts trained parameters; names and shapes must match a fresh build.
  static Model from_parameters(const ModelConfig& config, ParameterSet<T> params);

  Var<T> forward(ForwardContext<T>& ctx, const Tensor<T>& batch) const;
  /// Eval-mode logits (B,K).
  Tensor<T> predict(const Tensor<T>& batch);

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const GraphHierarchy& graphs() const { return graphs_; }
  const std::vector<StagePlan>& stages() const { return plan_; }

  /// Node count at the input and after every stage.
  std::vector<std::size_t> node_trajectory() const;

 private:
  struct StageModules {
    std::optional<StructurePooling<T>> pool;
    std::optional<GcnBlock<T>> gcn;
    std::optional<CrossFusionBlock<T>> fusion;
  };

  explicit Model(const ModelConfig& config);
  void init(std::uint64_t seed);

  ModelConfig config_;
  GraphHierarchy graphs_;
  std::vector<StagePlan> plan_;
  InformationSupplement<T> ism_;
  std::vector<StageModules> modules_;
  ClassifierHead<T> head_;
  ParameterSet<T> params_;
};

/// Little-endian container: magic, version, scalar width, config JSON, named
/// parameter blobs and running-norm state.
template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path);

template <typename T>
Model<T> load_checkpoint(const std::string& path);

/// Reads only the configuration echoed in a checkpoint.
ModelConfig read_checkpoint_config(const std::string& path);
/// 4 for float checkpoints, 8 for double.
std::size_t checkpoint_scalar_bytes(const std::string& path);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace igpn

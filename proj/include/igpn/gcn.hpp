#pragma once

#include <random>
#include <string>

#include "igpn/ops.hpp"
#include "igpn/params.hpp"

namespace igpn {

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kNormMomentum = 0.1;

/// 1x1 channel update followed by aggregation over the normalized adjacency:
/// y_t = (W x_t) A for each frame. x (B,Cin,T,N), weight (Cout,Cin), adjacency (N,N).
template <typename T>
Var<T> spatial_graph_conv(Var<T> x, Var<T> weight, Var<T> adjacency);

/// Batch normalization over (batch, frames, nodes) per channel. Train mode uses
/// batch moments and folds them into the running moments; eval mode uses the
/// running moments only.
template <typename T>
Var<T> batch_normalize(Var<T> x, Var<T> gamma, Var<T> beta, Mode mode, Tensor<T>& running_mean,
                       Tensor<T>& running_var);

/// Registers gamma = 1, beta = 0 and fresh running moments under `prefix`.
template <typename T>
void init_batch_norm(ParameterSet<T>& params, const std::string& prefix, std::size_t channels);

/// batch_normalize using the parameters and running moments stored under `prefix`.
template <typename T>
Var<T> batch_norm_layer(ForwardContext<T>& ctx, const std::string& prefix, Var<T> x);

struct GcnBlockConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t temporal_kernel = 5;
  std::size_t temporal_stride = 1;
};

/// Spatial graph conv -> BN -> ReLU -> temporal conv -> BN -> (+ identity skip
/// when shapes allow) -> ReLU.
template <typename T>
class GcnBlock {
 public:
  GcnBlock(std::string prefix, GcnBlockConfig config);

  void init(ParameterSet<T>& params, std::mt19937_64& rng) const;
  Var<T> forward(ForwardContext<T>& ctx, Var<T> x, Var<T> adjacency) const;

  bool has_residual() const { return config_.in_channels == config_.out_channels && config_.temporal_stride == 1; }
  const GcnBlockConfig& config() const { return config_; }

 private:
  std::string prefix_;
  GcnBlockConfig config_;
};

extern template class GcnBlock<float>;
extern template class GcnBlock<double>;

}  // namespace igpn

#pragma once

#include <random>
#include <string>

#include "igpn/ops.hpp"
#include "igpn/params.hpp"
#include "igpn/skeleton.hpp"

namespace igpn {

enum class Normalizer { tanh, sigmoid, softmax };

std::string to_string(Normalizer sigma);
Normalizer parse_normalizer(const std::string& text);

struct PoolingConfig {
  std::size_t reduction = 4;
  Normalizer sigma = Normalizer::tanh;
  bool residual = true;
  bool latent_norm = true;  ///< h(x): parameter-free batch normalization before phi/psi; false = identity
};

/// Per-frame, per-node correlation field R (B,T,N) of x (B,C,T,N):
/// R_ti = sigma(mean_j <phi x_ti, psi x_tj>), phi and psi being (C/r, C)
/// projection weights. Softmax normalizes over the nodes of each frame.
template <typename T>
Var<T> correlation(Var<T> x, Var<T> phi, Var<T> psi, Normalizer sigma);

/// x (B,C,T,N), R (B,T,N), assignment (N,M):
/// out_tj = sum_i x_ti (P_ij + R_ti P_ij), or sum_i x_ti R_ti P_ij without the residual path.
template <typename T>
Var<T> spatial_pool(Var<T> x, Var<T> field, Var<T> assignment, bool residual = true);

/// Averages frame pairs (0,1), (2,3), ...; T -> ceil(T/2).
template <typename T>
Var<T> temporal_pool(Var<T> x);

/// Region-aware pooling layer with its own phi/psi projections.
template <typename T>
class StructurePooling {
 public:
  /// temporal = false skips the frame-pair averaging (the identity-assignment
  /// stand-in used where a stage does not pool).
  StructurePooling(std::string prefix, std::size_t channels, PoolingConfig config, AssignmentMatrix assignment,
                   bool temporal = true);

  void init(ParameterSet<T>& params, std::mt19937_64& rng) const;

  /// R computed from h(x); pooling itself still weights the raw x.
  Var<T> correlation(ForwardContext<T>& ctx, Var<T> x) const;
  /// Spatial pooling followed by temporal pooling; the field is recomputed from x.
  Var<T> forward(ForwardContext<T>& ctx, Var<T> x) const;

  std::size_t channels() const { return channels_; }
  std::size_t projected() const { return channels_ / config_.reduction; }
  const AssignmentMatrix& assignment() const { return assignment_; }
  const PoolingConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }
  bool temporal() const { return temporal_; }

 private:
  Var<T> latent(ForwardContext<T>& ctx, Var<T> x) const;

  std::string prefix_;
  std::size_t channels_;
  PoolingConfig config_;
  AssignmentMatrix assignment_;
  bool temporal_;
};

extern template class StructurePooling<float>;
extern template class StructurePooling<double>;

}  // namespace igpn

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "igpn/data.hpp"
#include "igpn/model.hpp"

namespace igpn {

struct TrainConfig {
  std::size_t epochs = 65;
  std::size_t warmup_epochs = 5;
  double base_lr = 0.1;
  std::vector<std::size_t> decay_steps{35, 55};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 4e-4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double rotate_bound = 0.3;  ///< radians per axis; 0 disables the augmentation

  void validate() const;
};

/// Keeps freed tensor buffers in the process heap (glibc only). Training
/// allocates many short-lived multi-megabyte buffers; returning each to the OS
/// costs more than the arithmetic on it.
void tune_allocator();

/// Linear warmup base/W .. base over epochs 0..W-1, then step decay.
double lr_at(std::size_t epoch, const TrainConfig& config);

template <typename T>
struct OptimizerState {
  std::map<std::string, Tensor<T>> velocity;
};

/// Nesterov SGD: g = grad + wd p (wd skipped for norm parameters),
/// v = m v + g, p -= lr (g + m v). Parameters without a gradient are left alone.
template <typename T>
void sgd_nesterov_step(ParameterSet<T>& params, const std::map<std::string, Tensor<T>>& grads,
                       OptimizerState<T>& state, double lr, double momentum, double weight_decay);

/// R = Rx(ax) Ry(ay) Rz(az), row-major.
std::array<double, 9> rotation_matrix(double ax, double ay, double az);

/// One rotation per sequence, angles uniform in [-bound, bound]. seq (3,T,N).
template <typename T>
Tensor<T> random_rotate(const Tensor<T>& seq, std::uint64_t seed, double bound = 0.3);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;  ///< on the augmented mini-batches, train-mode statistics
  double eval_acc = 0.0;   ///< NaN without an evaluation set
};

void write_metrics(const std::vector<EpochMetrics>& metrics, const std::string& path);

/// Reproducible given config.seed: shuffling and rotation angles come from one
/// generator, and every kernel runs in a fixed order.
template <typename T>
std::vector<EpochMetrics> train_loop(Model<T>& model, const Dataset& train, const Dataset* eval,
                                     const TrainConfig& config,
                                     const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Eval-mode softmax scores for every sample.
template <typename T>
ScoreFile evaluate(Model<T>& model, const Dataset& dataset, std::size_t batch_size = 16);

/// Mean cross entropy over a dataset in eval mode.
template <typename T>
double dataset_loss(Model<T>& model, const Dataset& dataset, std::size_t batch_size = 16);

}  // namespace igpn

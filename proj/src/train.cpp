#include "igpn/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace igpn {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("base learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
  if (decay_factor <= 0.0 || decay_factor > 1.0) throw ConfigError("decay factor must lie in (0,1]");
  if (rotate_bound < 0.0) throw ConfigError("rotation bound must be nonnegative");
  std::size_t prev = warmup_epochs;
  for (std::size_t i = 0; i < decay_steps.size(); ++i) {
    const bool first = i == 0;
    if (first ? decay_steps[i] < prev : decay_steps[i] <= prev) {
      throw ConfigError("decay steps must be increasing and not precede the warmup");
    }
    prev = decay_steps[i];
  }
  if (!decay_steps.empty() && decay_steps.back() > epochs) throw ConfigError("last decay step exceeds the epoch count");
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  if (epoch >= config.epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0," + std::to_string(config.epochs) + ")");
  }
  if (epoch < config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);
  }
  double lr = config.base_lr;
  for (auto step : config.decay_steps) {
    if (epoch >= step) lr *= config.decay_factor;
  }
  return lr;
}

template <typename T>
void sgd_nesterov_step(ParameterSet<T>& params, const std::map<std::string, Tensor<T>>& grads,
                       OptimizerState<T>& state, double lr, double momentum, double weight_decay) {
  for (const auto& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    Tensor<T>& p = params.value(name);
    const Tensor<T>& grad = git->second;
    if (grad.shape() != p.shape()) {
      throw ShapeError("gradient for '" + name + "' is " + to_string(grad.shape()) + ", parameter is " +
                       to_string(p.shape()));
    }
    auto [vit, fresh] = state.velocity.try_emplace(name, p.shape());
    Tensor<T>& v = vit->second;
    if (v.shape() != p.shape()) throw ShapeError("velocity buffer for '" + name + "' has the wrong shape");
    const T wd = params.kind(name) == ParamKind::norm ? T{0} : static_cast<T>(weight_decay);
    const T m = static_cast<T>(momentum), step = static_cast<T>(lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T g = grad[i] + wd * p[i];
      v[i] = m * v[i] + g;
      p[i] -= step * (g + m * v[i]);
    }
  }
}

std::array<double, 9> rotation_matrix(double ax, double ay, double az) {
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);
  const std::array<double, 9> rx{1, 0, 0, 0, cx, -sx, 0, sx, cx};
  const std::array<double, 9> ry{cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  const std::array<double, 9> rz{cz, -sz, 0, sz, cz, 0, 0, 0, 1};
  auto mul = [](const std::array<double, 9>& a, const std::array<double, 9>& b) {
    std::array<double, 9> c{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return c;
  };
  return mul(mul(rx, ry), rz);
}

namespace {

// rotates one (3, T*N) block in place
template <typename T>
void rotate_block(T* data, std::size_t plane, const std::array<double, 9>& r) {
  T* x = data;
  T* y = data + plane;
  T* z = data + 2 * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const double a = x[i], b = y[i], c = z[i];
    x[i] = static_cast<T>(r[0] * a + r[1] * b + r[2] * c);
    y[i] = static_cast<T>(r[3] * a + r[4] * b + r[5] * c);
    z[i] = static_cast<T>(r[6] * a + r[7] * b + r[8] * c);
  }
}

std::array<double, 9> draw_rotation(std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> angle(-bound, bound);
  const double ax = angle(rng), ay = angle(rng), az = angle(rng);
  return rotation_matrix(ax, ay, az);
}

template <typename T>
std::vector<std::size_t> predictions(const Tensor<T>& logits) {
  const std::size_t b = logits.extent(0), k = logits.extent(1);
  std::vector<std::size_t> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

void check_dataset(const Dataset& data, const ModelConfig& config, const char* role) {
  if (data.samples.empty()) throw DataError(std::string(role) + " set is empty");
  data.validate();
  if (data.classes() != config.classes) {
    throw ConfigError(std::string(role) + " set has " + std::to_string(data.classes()) + " classes, model has " +
                      std::to_string(config.classes));
  }
  for (const auto& s : data.samples) {
    if (s.frame_count() != config.frames || s.node_count() != config.skeleton.topology.node_count) {
      throw ShapeError(std::string(role) + " sample '" + s.id + "' is " + to_string(s.frames.shape()) +
                       ", model expects (" + std::to_string(config.frames) + "," +
                       std::to_string(config.skeleton.topology.node_count) + ",3)");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> random_rotate(const Tensor<T>& seq, std::uint64_t seed, double bound) {
  if (seq.rank() != 3 || seq.extent(0) != 3) throw ShapeError("random_rotate: expected (3,T,N), got " + to_string(seq.shape()));
  std::mt19937_64 rng(seed);
  Tensor<T> out = seq;
  rotate_block(out.data().data(), seq.extent(1) * seq.extent(2), draw_rotation(rng, bound));
  return out;
}

void write_metrics(const std::vector<EpochMetrics>& metrics, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write metrics " + path);
  std::fprintf(f, "epoch,lr,train_loss,train_acc,eval_acc\n");
  for (const auto& m : metrics) {
    std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.lr, m.train_loss, m.train_acc, m.eval_acc);
  }
  if (std::fclose(f) != 0) throw IoError("failed writing metrics " + path);
}

template <typename T>
std::vector<EpochMetrics> train_loop(Model<T>& model, const Dataset& train, const Dataset* eval,
                                     const TrainConfig& config,
                                     const std::function<void(const EpochMetrics&)>& on_epoch) {
  config.validate();
  check_dataset(train, model.config(), "training");
  if (eval) check_dataset(*eval, model.config(), "evaluation");

  std::mt19937_64 rng(config.seed);
  OptimizerState<T> state;
  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t plane = model.config().frames * model.config().skeleton.topology.node_count;
  std::vector<EpochMetrics> history;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      Tensor<T> batch = assemble_batch<T>(train, idx);
      std::vector<std::size_t> labels;
      for (auto i : idx) labels.push_back(train.samples[i].label);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto r = draw_rotation(rng, config.rotate_bound);
        if (config.rotate_bound > 0.0) rotate_block(batch.data().data() + b * 3 * plane, plane, r);
      }

      Record<T> record;
      ForwardContext<T> ctx(record, model.params(), Mode::train);
      auto logits = model.forward(ctx, batch);
      auto loss = cross_entropy(logits, std::span<const std::size_t>(labels));
      const double value = static_cast<double>(loss.value().item());
      if (!std::isfinite(value)) throw NumericError("cross_entropy: non-finite loss at epoch " + std::to_string(epoch));

      std::vector<Var<T>> leaves;
      for (const auto& [name, var] : ctx.leaves()) leaves.push_back(var);
      auto grads = evaluate_with_gradients(record, loss, leaves);
      std::map<std::string, Tensor<T>> named;
      for (const auto& [name, var] : ctx.leaves()) named.emplace(name, grads[var]);
      sgd_nesterov_step(model.params(), named, state, lr, config.momentum, config.weight_decay);

      loss_sum += value * static_cast<double>(idx.size());
      const auto pred = predictions(logits.value());
      for (std::size_t b = 0; b < idx.size(); ++b) hits += pred[b] == labels[b];
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
    m.eval_acc = eval ? evaluate(model, *eval, config.batch_size).accuracy() : std::numeric_limits<double>::quiet_NaN();
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

template <typename T>
ScoreFile evaluate(Model<T>& model, const Dataset& dataset, std::size_t batch_size) {
  check_dataset(dataset, model.config(), "evaluation");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  ScoreFile out;
  const std::size_t k = model.config().classes;
  for (std::size_t start = 0; start < dataset.samples.size(); start += batch_size) {
    const std::size_t stop = std::min(dataset.samples.size(), start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = model.predict(assemble_batch<T>(dataset, idx));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& s = dataset.samples[idx[b]];
      std::vector<double> row(k);
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) peak = std::max(peak, static_cast<double>(logits[b * k + j]));
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) total += row[j] = std::exp(static_cast<double>(logits[b * k + j]) - peak);
      for (auto& v : row) v /= total;
      out.ids.push_back(s.id);
      out.labels.push_back(s.label);
      out.scores.push_back(std::move(row));
    }
  }
  return out;
}

template <typename T>
double dataset_loss(Model<T>& model, const Dataset& dataset, std::size_t batch_size) {
  const auto scores = evaluate(model, dataset, batch_size);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.ids.size(); ++i) sum -= std::log(scores.scores[i][scores.labels[i]]);
  return sum / static_cast<double>(scores.ids.size());
}

#define IGPN_INSTANTIATE_TRAIN(T)                                                                              \
  template void sgd_nesterov_step(ParameterSet<T>&, const std::map<std::string, Tensor<T>>&, OptimizerState<T>&, \
                                  double, double, double);                                                     \
  template Tensor<T> random_rotate(const Tensor<T>&, std::uint64_t, double);                                   \
  template std::vector<EpochMetrics> train_loop(Model<T>&, const Dataset&, const Dataset*, const TrainConfig&, \
                                                const std::function<void(const EpochMetrics&)>&);              \
  template ScoreFile evaluate(Model<T>&, const Dataset&, std::size_t);                                         \
  template double dataset_loss(Model<T>&, const Dataset&, std::size_t);

IGPN_INSTANTIATE_TRAIN(float)
IGPN_INSTANTIATE_TRAIN(double)

}  // namespace igpn

#include "igpn/model.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

namespace igpn {

using json = nlohmann::json;

std::string to_string(Variant variant) { return variant == Variant::light ? "light" : "heavy"; }

Variant parse_variant(const std::string& text) {
  if (text == "light") return Variant::light;
  if (text == "heavy") return Variant::heavy;
  throw ConfigError("unknown variant '" + text + "' (expected light or heavy)");
}

bool ModelConfig::pools_at(std::size_t stage) const {
  return std::find(pool_locations.begin(), pool_locations.end(), stage) != pool_locations.end();
}

void ModelConfig::validate() const {
  std::set<std::size_t> seen;
  for (std::size_t loc : pool_locations) {
    if (loc < 1 || loc > 3) throw ConfigError("pooling location " + std::to_string(loc) + " outside {1,2,3}");
    if (!seen.insert(loc).second) throw ConfigError("pooling location " + std::to_string(loc) + " repeated");
  }
  if (pool_locations.size() > skeleton.partition.stages.size()) {
    throw ConfigError("config requests " + std::to_string(pool_locations.size()) +
                      " pooled stages but the partition scheme defines only " +
                      std::to_string(skeleton.partition.stages.size()) + " coarse graphs");
  }
  for (std::size_t c : channels) {
    if (c == 0) throw ConfigError("channel plan entries must be positive");
  }
  if (frames == 0) throw ConfigError("frame count must be positive");
  if (classes == 0) throw ConfigError("class count must be positive");
  if (temporal_kernel % 2 == 0) throw ConfigError("temporal kernel must be odd");
  if (pooling.reduction == 0) throw ConfigError("reduction ratio r must be >= 1");
  if (fusion_weight < 0.0 || fusion_weight > 1.0) throw ConfigError("fusion weight s must lie in [0,1]");
  if (ism.embed_channels == 0 || ism.layers == 0) throw ConfigError("ISM needs positive width and depth");
  if (ism.enabled && !skeleton.topology.has_parents()) {
    throw ConfigError("ISM needs a parent map on topology '" + skeleton.topology.name + "'");
  }
  try {
    validate_topology(skeleton.topology);
    validate_partition(skeleton.partition, skeleton.topology.node_count);
  } catch (const SkeletonError& e) {
    throw ConfigError(e.what());
  }
  const auto plan = plan_stages(*this);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& st = plan[i];
    if (st.in_channels % pooling.reduction != 0) {
      throw ConfigError("stage " + std::to_string(i + 1) + " input channels " + std::to_string(st.in_channels) +
                        " not divisible by r=" + std::to_string(pooling.reduction));
    }
    if (variant == Variant::heavy && st.out_channels % pooling.reduction != 0) {
      throw ConfigError("stage " + std::to_string(i + 1) + " output channels " + std::to_string(st.out_channels) +
                        " not divisible by r=" + std::to_string(pooling.reduction));
    }
  }
}

std::string ModelConfig::to_json() const {
  json doc;
  doc["variant"] = to_string(variant);
  doc["skeleton"] = json::parse(serialize_skeleton(skeleton));
  doc["channels"] = channels;
  doc["pool_locations"] = pool_locations;
  doc["reduction"] = pooling.reduction;
  doc["sigma"] = to_string(pooling.sigma);
  doc["residual"] = pooling.residual;
  doc["latent_norm"] = pooling.latent_norm;
  doc["fusion_weight"] = fusion_weight;
  doc["fusion_mode"] = to_string(fusion_mode);
  doc["temporal_kernel"] = temporal_kernel;
  doc["classes"] = classes;
  doc["frames"] = frames;
  doc["ism"] = {{"enabled", ism.enabled},
                {"normalize", ism.normalize},
                {"embed_channels", ism.embed_channels},
                {"layers", ism.layers}};
  return doc.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    ModelConfig c;
    c.variant = parse_variant(doc.at("variant").get<std::string>());
    c.skeleton = parse_skeleton(doc.at("skeleton").dump());
    c.channels = doc.at("channels").get<std::array<std::size_t, 3>>();
    c.pool_locations = doc.at("pool_locations").get<std::vector<std::size_t>>();
    c.pooling.reduction = doc.at("reduction").get<std::size_t>();
    c.pooling.sigma = parse_normalizer(doc.at("sigma").get<std::string>());
    c.pooling.residual = doc.at("residual").get<bool>();
    c.pooling.latent_norm = doc.value("latent_norm", true);
    c.fusion_weight = doc.at("fusion_weight").get<double>();
    c.fusion_mode = parse_fusion_mode(doc.at("fusion_mode").get<std::string>());
    c.temporal_kernel = doc.at("temporal_kernel").get<std::size_t>();
    c.classes = doc.at("classes").get<std::size_t>();
    c.frames = doc.at("frames").get<std::size_t>();
    const auto& ism = doc.at("ism");
    c.ism.enabled = ism.at("enabled").get<bool>();
    c.ism.normalize = ism.at("normalize").get<bool>();
    c.ism.embed_channels = ism.at("embed_channels").get<std::size_t>();
    c.ism.layers = ism.at("layers").get<std::size_t>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

std::vector<StagePlan> plan_stages(const ModelConfig& config) {
  std::vector<StagePlan> plan;
  std::size_t level = 0;
  std::size_t nodes = config.skeleton.topology.node_count;
  std::size_t frames = config.frames;
  std::size_t channels = config.ism.output_channels();
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    StagePlan st;
    st.in_channels = channels;
    st.out_channels = config.channels[i];
    st.pooled = config.pools_at(i + 1) && level < config.skeleton.partition.stages.size();
    st.level_in = level;
    st.frames_in = frames;
    st.nodes_in = nodes;
    if (st.pooled) {
      nodes = config.skeleton.partition.stages[level].output_nodes();
      frames = (frames + 1) / 2;
      ++level;
    }
    st.level_out = level;
    st.frames_out = frames;
    st.nodes_out = nodes;
    channels = st.out_channels;
    plan.push_back(st);
  }
  return plan;
}

namespace {

AssignmentMatrix identity_assignment(std::size_t nodes) {
  Tensor<double> p(Shape{nodes, nodes});
  for (std::size_t i = 0; i < nodes; ++i) p.at({i, i}) = 1.0;
  return {std::move(p)};
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config)
    : config_((config.validate(), config)),
      graphs_(build_hierarchy(config_.skeleton)),
      plan_(plan_stages(config_)),
      ism_("ism", config_.ism, config_.skeleton.topology),
      head_("head", config_.channels.back(), config_.classes) {
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const auto& st = plan_[i];
    const std::string prefix = "stage" + std::to_string(i + 1);
    StageModules m;
    // a stage that does not pool keeps its modules but maps every node to itself
    const AssignmentMatrix assignment = st.pooled ? graphs_.assignments[st.level_in] : identity_assignment(st.nodes_in);
    if (config_.variant == Variant::heavy) {
      CrossFusionConfig fc{st.in_channels, st.out_channels, config_.temporal_kernel, config_.pooling,
                           config_.fusion_weight, config_.fusion_mode, st.pooled};
      m.fusion.emplace(prefix, fc, assignment);
    } else {
      m.pool.emplace(prefix + ".pool", st.in_channels, config_.pooling, assignment, st.pooled);
      m.gcn.emplace(prefix + ".gcn", GcnBlockConfig{st.in_channels, st.out_channels, config_.temporal_kernel, 1});
    }
    modules_.push_back(std::move(m));
  }
}

template <typename T>
void Model<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ism_.init(params_, rng);
  for (const auto& m : modules_) {
    if (m.fusion) m.fusion->init(params_, rng);
    if (m.pool) m.pool->init(params_, rng);
    if (m.gcn) m.gcn->init(params_, rng);
  }
  head_.init(params_, rng);
}

template <typename T>
Model<T> Model<T>::build(const ModelConfig& config, std::uint64_t seed) {
  Model model(config);
  model.init(seed);
  return model;
}

template <typename T>
Model<T> Model<T>::from_parameters(const ModelConfig& config, ParameterSet<T> params) {
  Model model = build(config, 0);
  const auto& expected = model.params_;
  if (expected.names() != params.names() || expected.state_names() != params.state_names()) {
    throw ConfigError("parameter names do not match the configured architecture");
  }
  for (const auto& n : expected.names()) {
    if (expected.value(n).shape() != params.value(n).shape()) {
      throw ConfigError("parameter '" + n + "' has shape " + to_string(params.value(n).shape()) + ", expected " +
                        to_string(expected.value(n).shape()));
    }
  }
  for (const auto& n : expected.state_names()) {
    if (expected.state(n).shape() != params.state(n).shape()) {
      throw ConfigError("state '" + n + "' has an unexpected shape");
    }
  }
  model.params_ = std::move(params);
  return model;
}

template <typename T>
Var<T> Model<T>::forward(ForwardContext<T>& ctx, const Tensor<T>& batch) const {
  const auto& s = batch.shape();
  const std::size_t nodes = config_.skeleton.topology.node_count;
  if (s.size() != 4 || s[0] == 0 || s[1] != 3 || s[2] != config_.frames || s[3] != nodes) {
    throw ShapeError("model input must be (B,3," + std::to_string(config_.frames) + "," + std::to_string(nodes) +
                     "), got " + to_string(s));
  }
  std::vector<std::optional<Var<T>>> adjacency(graphs_.levels.size());
  auto adj = [&](std::size_t level) {
    if (!adjacency[level]) adjacency[level] = ctx.constant(graphs_.levels[level].normalized.template cast<T>());
    return *adjacency[level];
  };

  Var<T> x = ism_.forward(ctx, batch, adj(0));
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const auto& st = plan_[i];
    const auto& m = modules_[i];
    if (m.fusion) {
      const bool last = i + 1 == plan_.size();
      if (last) {
        auto b = m.fusion->branches(ctx, x, adj(st.level_in), adj(st.level_out));
        auto pooled = m.fusion->fuse(ctx, global_average_pool(b.coarse), global_average_pool(b.fine));
        return head_.classify(ctx, pooled);
      }
      x = m.fusion->forward(ctx, x, adj(st.level_in), adj(st.level_out));
    } else {
      if (m.pool) x = m.pool->forward(ctx, x);
      x = m.gcn->forward(ctx, x, adj(st.level_out));
    }
  }
  return head_.forward(ctx, x);
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& batch) {
  Record<T> record;
  ForwardContext<T> ctx(record, params_, Mode::eval);
  return forward(ctx, batch).value();
}

template <typename T>
std::vector<std::size_t> Model<T>::node_trajectory() const {
  std::vector<std::size_t> nodes{config_.skeleton.topology.node_count};
  for (const auto& st : plan_) nodes.push_back(st.nodes_out);
  return nodes;
}

template class Model<float>;
template class Model<double>;

}  // namespace igpn

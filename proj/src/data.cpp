#include "igpn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace igpn {

using json = nlohmann::json;

namespace {

bool is_builtin(const std::string& name) {
  const auto names = builtin_skeleton_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

}  // namespace

SkeletonSpec Dataset::resolve_skeleton() const {
  if (skeleton) return *skeleton;
  if (is_builtin(topology)) return builtin_skeleton(topology);
  throw DataError("unknown topology '" + topology + "' and no embedded skeleton");
}

void Dataset::validate() const {
  if (samples.empty()) throw DataError("dataset has no samples");
  if (class_names.empty()) throw DataError("dataset declares no classes");
  const std::size_t nodes = resolve_skeleton().topology.node_count;
  std::set<std::string> ids;
  for (const auto& s : samples) {
    const auto& shape = s.frames.shape();
    if (shape.size() != 3 || shape[0] == 0 || shape[2] != 3) {
      throw DataError("sample '" + s.id + "' frames must be (T,N,3), got " + to_string(shape));
    }
    if (shape[1] != nodes) {
      throw DataError("sample '" + s.id + "' has " + std::to_string(shape[1]) + " joints, topology '" + topology +
                      "' has " + std::to_string(nodes));
    }
    if (s.label >= class_names.size()) {
      throw DataError("sample '" + s.id + "' label " + std::to_string(s.label) + " outside [0," +
                      std::to_string(class_names.size()) + ")");
    }
    if (!s.frames.all_finite()) throw DataError("sample '" + s.id + "' has non-finite coordinates");
    if (!ids.insert(s.id).second) throw DataError("duplicate sample id '" + s.id + "'");
  }
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& s : samples) {
    if (s.label < counts.size()) ++counts[s.label];
  }
  return counts;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw DataError("dataset " + path + " does not parse: " + e.what());
  }
  Dataset d;
  try {
    d.topology = doc.at("topology").get<std::string>();
    if (doc.contains("skeleton") && !doc["skeleton"].is_null()) d.skeleton = parse_skeleton(doc["skeleton"].dump());
    d.class_names = doc.at("classes").get<std::vector<std::string>>();
    if (doc.contains("split")) d.split = doc["split"].get<std::string>();
    const auto& samples = doc.at("samples");
    if (!samples.is_array() || samples.empty()) throw DataError("dataset " + path + " is empty");
    for (const auto& s : samples) {
      LabeledSequence seq;
      seq.id = s.at("id").get<std::string>();
      const auto label = s.at("label").get<long long>();
      if (label < 0) throw DataError("sample '" + seq.id + "' has negative label");
      seq.label = static_cast<std::size_t>(label);
      const auto& frames = s.at("frames");
      if (!frames.is_array() || frames.empty()) throw DataError("sample '" + seq.id + "' has no frames");
      const std::size_t t = frames.size(), n = frames[0].size();
      std::vector<double> values;
      values.reserve(t * n * 3);
      for (const auto& frame : frames) {
        if (frame.size() != n) throw DataError("sample '" + seq.id + "' has ragged joint counts across frames");
        for (const auto& joint : frame) {
          if (joint.size() != 3) throw DataError("sample '" + seq.id + "' joint is not a 3-vector");
          for (const auto& v : joint) values.push_back(v.get<double>());
        }
      }
      seq.frames = Tensor<double>(Shape{t, n, 3}, std::move(values));
      d.samples.push_back(std::move(seq));
    }
  } catch (const json::exception& e) {
    throw DataError("dataset " + path + " is malformed: " + e.what());
  } catch (const SkeletonError& e) {
    throw DataError("dataset " + path + ": " + e.what());
  }
  d.validate();
  return d;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  dataset.validate();
  json doc;
  doc["topology"] = dataset.topology;
  if (dataset.skeleton) doc["skeleton"] = json::parse(serialize_skeleton(*dataset.skeleton));
  doc["classes"] = dataset.class_names;
  doc["split"] = dataset.split;
  json samples = json::array();
  for (const auto& s : dataset.samples) {
    json frames = json::array();
    const std::size_t t = s.frame_count(), n = s.node_count();
    for (std::size_t f = 0; f < t; ++f) {
      json frame = json::array();
      for (std::size_t j = 0; j < n; ++j) {
        const double* p = s.frames.data().data() + (f * n + j) * 3;
        frame.push_back({p[0], p[1], p[2]});
      }
      frames.push_back(std::move(frame));
    }
    samples.push_back({{"id", s.id}, {"label", s.label}, {"frames", std::move(frames)}});
  }
  doc["samples"] = std::move(samples);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset " + path);
  out << doc.dump() << "\n";
  if (!out) throw IoError("failed writing dataset " + path);
}

namespace {

// 1-based joint -> (x, y, z), y up, subject facing -z.
const std::map<std::string, std::vector<std::array<double, 3>>>& known_poses() {
  static const std::map<std::string, std::vector<std::array<double, 3>>> poses{
      {"ntu25",
       {{0, 0, 0},          {0, 0.3, 0},        {0, 0.6, 0},        {0, 0.75, 0},       {-0.18, 0.5, 0},
        {-0.2, 0.25, 0},    {-0.22, 0.02, 0},   {-0.22, -0.05, 0},  {0.18, 0.5, 0},     {0.2, 0.25, 0},
        {0.22, 0.02, 0},    {0.22, -0.05, 0},   {-0.1, -0.05, 0},   {-0.1, -0.45, 0},   {-0.1, -0.85, 0},
        {-0.1, -0.9, -0.1}, {0.1, -0.05, 0},    {0.1, -0.45, 0},    {0.1, -0.85, 0},    {0.1, -0.9, -0.1},
        {0, 0.5, 0},        {-0.22, -0.12, 0},  {-0.18, -0.05, -0.03}, {0.22, -0.12, 0}, {0.18, -0.05, -0.03}}},
      {"uwa15",
       {{0, 0.75, 0},
        {0, 0.55, 0},
        {0, 0.1, 0},
        {-0.18, 0.5, 0},
        {-0.2, 0.25, 0},
        {-0.22, 0.0, 0},
        {0.18, 0.5, 0},
        {0.2, 0.25, 0},
        {0.22, 0.0, 0},
        {-0.1, -0.05, 0},
        {-0.1, -0.45, 0},
        {-0.1, -0.85, 0},
        {0.1, -0.05, 0},
        {0.1, -0.45, 0},
        {0.1, -0.85, 0}}},
  };
  return poses;
}

}  // namespace

Tensor<double> rest_pose(const SkeletonSpec& skeleton) {
  const auto& topo = skeleton.topology;
  const std::size_t n = topo.node_count;
  Tensor<double> pose(Shape{n, 3});
  const auto& poses = known_poses();
  if (auto it = poses.find(topo.name); it != poses.end() && it->second.size() == n) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < 3; ++c) pose[j * 3 + c] = it->second[j][c];
    }
    return pose;
  }
  // unknown layout: hang the tree from its root, one row per BFS depth
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (auto [a, b] : topo.edges) {
    nbrs[a].push_back(b);
    nbrs[b].push_back(a);
  }
  const std::size_t root = topo.has_parents() ? topo.root() : 0;
  std::vector<std::size_t> depth(n, n);
  std::vector<std::vector<std::size_t>> rows;
  std::queue<std::size_t> q;
  depth[root] = 0;
  q.push(root);
  while (!q.empty()) {
    const auto j = q.front();
    q.pop();
    if (rows.size() <= depth[j]) rows.resize(depth[j] + 1);
    rows[depth[j]].push_back(j);
    for (auto k : nbrs[j]) {
      if (depth[k] == n) {
        depth[k] = depth[j] + 1;
        q.push(k);
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (depth[j] == n) rows.push_back({j});
  }
  for (std::size_t d = 0; d < rows.size(); ++d) {
    const double half = (static_cast<double>(rows[d].size()) - 1.0) / 2.0;
    for (std::size_t i = 0; i < rows[d].size(); ++i) {
      const auto j = rows[d][i];
      pose[j * 3 + 0] = 0.15 * (static_cast<double>(i) - half);
      pose[j * 3 + 1] = -0.15 * static_cast<double>(d);
    }
  }
  return pose;
}

Dataset synth_generate(const SynthSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("synth_generate needs at least two classes");
  if (spec.frames == 0 || spec.per_class == 0) throw std::invalid_argument("synth_generate needs frames and samples");
  if (spec.noise < 0.0) throw std::invalid_argument("noise level must be nonnegative");
  validate_topology(spec.skeleton.topology);
  const std::size_t n = spec.skeleton.topology.node_count;
  const auto pose = rest_pose(spec.skeleton);

  // program 0 moves the whole body, program i > 0 one first-level region
  std::vector<std::vector<std::size_t>> programs;
  std::vector<std::size_t> all(n);
  for (std::size_t j = 0; j < n; ++j) all[j] = j;
  programs.push_back(all);
  if (!spec.skeleton.partition.stages.empty()) {
    for (const auto& r : spec.skeleton.partition.stages.front().regions) programs.push_back(r.members);
  } else {
    for (std::size_t j = 0; j < n; ++j) programs.push_back({j});
  }

  Dataset d;
  d.topology = spec.skeleton.topology.name;
  if (!is_builtin(d.topology)) d.skeleton = spec.skeleton;
  d.split = spec.split;
  for (std::size_t k = 0; k < spec.classes; ++k) d.class_names.push_back("class_" + std::to_string(k));

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  std::size_t index = 0;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    const std::size_t prog = k % programs.size();
    const std::size_t axis = k % 3;
    const double freq = 1.0 + static_cast<double>((k / programs.size() + k) % 3);
    const double phase = 0.9 * static_cast<double>(k);
    const double base_amp = prog == 0 ? 0.15 : 0.3;
    std::vector<bool> active(n, false);
    for (auto j : programs[prog]) active[j] = true;

    for (std::size_t s = 0; s < spec.per_class; ++s) {
      const double amp = base_amp * (1.0 + 0.2 * unit(rng));
      const double jitter = 0.3 * unit(rng);
      const double offset[3] = {0.05 * unit(rng), 0.05 * unit(rng), 0.05 * unit(rng)};
      Tensor<double> frames(Shape{spec.frames, n, 3});
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const double u = static_cast<double>(t) / static_cast<double>(spec.frames);
        const double wave = amp * std::sin(two_pi * freq * u + phase + jitter);
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < 3; ++c) {
            double v = pose[j * 3 + c] + offset[c];
            if (active[j] && c == axis) v += wave;
            if (spec.noise > 0.0) v += spec.noise * gauss(rng);
            frames[(t * n + j) * 3 + c] = v;
          }
        }
      }
      char id[48];
      std::snprintf(id, sizeof id, "%s_%05zu", spec.split.c_str(), index++);
      d.samples.push_back({id, k, std::move(frames)});
    }
  }
  return d;
}

LabeledSequence resample_frames(const LabeledSequence& seq, std::size_t frames) {
  const auto& s = seq.frames.shape();
  if (s.size() != 3 || s[0] == 0) throw ShapeError("resample_frames: sequence must be (T,N,3) with T >= 1");
  if (frames == 0) throw std::invalid_argument("resample_frames: target frame count must be positive");
  const std::size_t t_in = s[0], width = s[1] * s[2];
  if (t_in == frames) return seq;
  LabeledSequence out{seq.id, seq.label, Tensor<double>(Shape{frames, s[1], s[2]})};
  const double* src = seq.frames.data().data();
  double* dst = out.frames.data().data();
  for (std::size_t i = 0; i < frames; ++i) {
    // exact rational position i (T_in - 1) / (T_out - 1) keeps both endpoints
    std::size_t lo = 0;
    double frac = 0.0;
    if (frames > 1 && t_in > 1) {
      const std::size_t num = i * (t_in - 1), den = frames - 1;
      lo = num / den;
      frac = static_cast<double>(num % den) / static_cast<double>(den);
    }
    const std::size_t hi = std::min(lo + 1, t_in - 1);
    for (std::size_t e = 0; e < width; ++e) {
      const double a = src[lo * width + e], b = src[hi * width + e];
      dst[i * width + e] = frac == 0.0 ? a : a + (b - a) * frac;
    }
  }
  return out;
}

Dataset resample_dataset(const Dataset& dataset, std::size_t frames) {
  Dataset out = dataset;
  for (auto& s : out.samples) s = resample_frames(s, frames);
  return out;
}

std::string to_string(InputStream stream) {
  switch (stream) {
    case InputStream::joint: return "joint";
    case InputStream::bone: return "bone";
    case InputStream::motion: return "motion";
  }
  return "joint";
}

InputStream parse_input_stream(const std::string& text) {
  if (text == "joint") return InputStream::joint;
  if (text == "bone") return InputStream::bone;
  if (text == "motion") return InputStream::motion;
  throw std::invalid_argument("unknown input stream '" + text + "' (expected joint, bone or motion)");
}

Dataset apply_stream(const Dataset& dataset, InputStream stream) {
  if (stream == InputStream::joint) return dataset;
  Dataset out = dataset;
  const auto topo = dataset.resolve_skeleton().topology;
  if (stream == InputStream::bone && !topo.has_parents()) {
    throw DataError("bone stream needs a parent map on topology '" + topo.name + "'");
  }
  for (auto& s : out.samples) {
    const std::size_t t = s.frame_count(), n = s.node_count();
    const Tensor<double> src = s.frames;
    for (std::size_t f = 0; f < t; ++f) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t at = (f * n + j) * 3 + c;
          if (stream == InputStream::bone) {
            const auto& parent = topo.parents[j];
            s.frames[at] = parent ? src[at] - src[(f * n + *parent) * 3 + c] : 0.0;
          } else {
            s.frames[at] = f + 1 < t ? src[at + n * 3] - src[at] : 0.0;
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> assemble_batch(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("assemble_batch: no samples requested");
  const auto& first = dataset.samples.at(indices.front()).frames;
  const std::size_t t = first.extent(0), n = first.extent(1);
  Tensor<T> out(Shape{indices.size(), 3, t, n});
  T* dst = out.data().data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = dataset.samples.at(indices[b]);
    if (s.frames.shape() != first.shape()) {
      throw ShapeError("assemble_batch: sample '" + s.id + "' is " + to_string(s.frames.shape()) + ", batch is " +
                       to_string(first.shape()));
    }
    const double* src = s.frames.data().data();
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t f = 0; f < t; ++f) {
        for (std::size_t j = 0; j < n; ++j) {
          dst[((b * 3 + c) * t + f) * n + j] = static_cast<T>(src[(f * n + j) * 3 + c]);
        }
      }
    }
  }
  return out;
}

template Tensor<float> assemble_batch(const Dataset&, const std::vector<std::size_t>&);
template Tensor<double> assemble_batch(const Dataset&, const std::vector<std::size_t>&);

std::size_t argmax(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

void ScoreFile::validate() const {
  if (ids.size() != labels.size() || ids.size() != scores.size()) throw DataError("score file columns disagree");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) throw DataError("duplicate score id '" + ids[i] + "'");
    if (scores[i].size() != classes()) throw DataError("score row '" + ids[i] + "' has the wrong length");
    if (classes() == 0) throw DataError("score row '" + ids[i] + "' is empty");
  }
}

double ScoreFile::accuracy() const {
  validate();
  if (ids.empty()) throw DataError("accuracy of an empty score file");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) hits += argmax(scores[i]) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(ids.size());
}

ScoreFile read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score file " + path);
  ScoreFile out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw DataError(path + ":" + std::to_string(line_no) + ": expected id,label,scores...");
    if (cells[0] == "id") continue;
    try {
      out.ids.push_back(cells[0]);
      out.labels.push_back(std::stoul(cells[1]));
      std::vector<double> row;
      for (std::size_t i = 2; i < cells.size(); ++i) row.push_back(std::stod(cells[i]));
      out.scores.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": unparsable number");
    }
  }
  out.validate();
  return out;
}

void write_scores(const ScoreFile& scores, const std::string& path) {
  scores.validate();
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write score file " + path);
  std::fprintf(f, "id,label");
  for (std::size_t k = 0; k < scores.classes(); ++k) std::fprintf(f, ",score_%zu", k);
  std::fprintf(f, "\n");
  for (std::size_t i = 0; i < scores.ids.size(); ++i) {
    std::fprintf(f, "%s,%zu", scores.ids[i].c_str(), scores.labels[i]);
    for (double v : scores.scores[i]) std::fprintf(f, ",%.17g", v);
    std::fprintf(f, "\n");
  }
  if (std::fclose(f) != 0) throw IoError("failed writing score file " + path);
}

FusionResult fuse_scores(const std::vector<ScoreFile>& files, const std::vector<double>& weights) {
  if (files.empty()) throw std::invalid_argument("fuse_scores needs at least one score file");
  if (weights.size() != files.size()) {
    throw std::invalid_argument("fuse_scores: " + std::to_string(weights.size()) + " weights for " +
                                std::to_string(files.size()) + " files");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("fusion weights must be finite and nonnegative");
  }
  for (const auto& f : files) f.validate();
  const auto& base = files.front();
  FusionResult result;
  result.fused.ids = base.ids;
  result.fused.labels = base.labels;
  result.fused.scores.assign(base.ids.size(), std::vector<double>(base.classes(), 0.0));
  for (std::size_t fi = 0; fi < files.size(); ++fi) {
    const auto& f = files[fi];
    if (f.ids.size() != base.ids.size()) throw DataError("score files cover different sample sets");
    if (f.classes() != base.classes()) throw DataError("score files disagree on the class count");
    std::map<std::string, std::size_t> row;
    for (std::size_t i = 0; i < f.ids.size(); ++i) row[f.ids[i]] = i;
    for (std::size_t i = 0; i < base.ids.size(); ++i) {
      auto it = row.find(base.ids[i]);
      if (it == row.end()) throw DataError("sample '" + base.ids[i] + "' missing from score file " + std::to_string(fi));
      if (f.labels[it->second] != base.labels[i]) throw DataError("sample '" + base.ids[i] + "' has conflicting labels");
      for (std::size_t k = 0; k < base.classes(); ++k) {
        result.fused.scores[i][k] += weights[fi] * f.scores[it->second][k];
      }
    }
  }
  result.accuracy = result.fused.accuracy();
  return result;
}

}  // namespace igpn

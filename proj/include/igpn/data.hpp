#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "igpn/skeleton.hpp"
#include "igpn/tensor.hpp"

namespace igpn {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabeledSequence {
  std::string id;
  std::size_t label = 0;
  Tensor<double> frames;  ///< (T, N, 3), meters

  std::size_t frame_count() const { return frames.extent(0); }
  std::size_t node_count() const { return frames.extent(1); }
};

struct Dataset {
  std::string topology;                 ///< built-in name or the embedded skeleton's name
  std::optional<SkeletonSpec> skeleton;  ///< embedded when the topology is not built in
  std::vector<std::string> class_names;
  std::vector<LabeledSequence> samples;
  std::string split = "train";

  std::size_t classes() const { return class_names.size(); }
  /// Built-in or embedded skeleton; throws DataError for unknown names.
  SkeletonSpec resolve_skeleton() const;
  /// Throws DataError on ragged node counts, non-finite values or bad labels.
  void validate() const;
  std::vector<std::size_t> class_histogram() const;
};

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& dataset, const std::string& path);

struct SynthSpec {
  std::size_t classes = 8;
  std::size_t per_class = 16;
  std::size_t frames = 64;
  SkeletonSpec skeleton = builtin_skeleton("ntu25");
  double noise = 0.01;  ///< std-dev of additive coordinate noise, meters
  std::uint64_t seed = 0;
  std::string split = "train";
};

/// Class k oscillates one body region (or the whole body) along a class-specific
/// axis with class-specific frequency and phase. Per-sample variation: amplitude,
/// phase jitter, a small offset and the additive noise.
Dataset synth_generate(const SynthSpec& spec);

/// Neutral standing pose (N, 3) for a topology.
Tensor<double> rest_pose(const SkeletonSpec& skeleton);

/// Linear interpolation onto `frames` uniformly spaced time points; endpoints kept.
LabeledSequence resample_frames(const LabeledSequence& seq, std::size_t frames);
Dataset resample_dataset(const Dataset& dataset, std::size_t frames);

enum class InputStream { joint, bone, motion };

std::string to_string(InputStream stream);
InputStream parse_input_stream(const std::string& text);

/// Replaces coordinates by bone vectors or frame differences.
Dataset apply_stream(const Dataset& dataset, InputStream stream);

/// (B, 3, T, N) model input for the given samples; all must share T.
template <typename T>
Tensor<T> assemble_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// Per-sample class scores keyed by id.
struct ScoreFile {
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> scores;

  std::size_t classes() const { return scores.empty() ? 0 : scores.front().size(); }
  /// Fraction of samples whose arg max (lowest index on ties) equals the label.
  double accuracy() const;
  void validate() const;
};

std::size_t argmax(const std::vector<double>& scores);

ScoreFile read_scores(const std::string& path);
void write_scores(const ScoreFile& scores, const std::string& path);

struct FusionResult {
  ScoreFile fused;
  double accuracy = 0.0;
};

/// Weighted per-sample sum of score vectors, in the sample order of the first file.
FusionResult fuse_scores(const std::vector<ScoreFile>& files, const std::vector<double>& weights);

extern template Tensor<float> assemble_batch(const Dataset&, const std::vector<std::size_t>&);
extern template Tensor<double> assemble_batch(const Dataset&, const std::vector<std::size_t>&);

}  // namespace igpn

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "igpn/tensor.hpp"

// Joint ids are 0-based in memory and 1-based in files, matching the published
// pooling tables.

namespace igpn {

class SkeletonError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SkeletonTopology {
  std::string name;
  std::size_t node_count = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  /// Empty when absent; otherwise one entry per joint, nullopt for the root.
  std::vector<std::optional<std::size_t>> parents;

  bool has_parents() const { return !parents.empty(); }
  std::size_t root() const;
};

struct Region {
  std::vector<std::size_t> members;
  std::size_t new_id = 0;
};

struct PartitionStage {
  std::size_t input_nodes = 0;
  std::vector<Region> regions;

  std::size_t output_nodes() const { return regions.size(); }
};

struct PartitionScheme {
  std::vector<PartitionStage> stages;
};

struct SkeletonSpec {
  SkeletonTopology topology;
  PartitionScheme partition;
};

/// Binary N x M membership matrix; rows may hold several ones (shared joints).
struct AssignmentMatrix {
  Tensor<double> p;

  std::size_t rows() const { return p.extent(0); }
  std::size_t cols() const { return p.extent(1); }
};

/// Raw 0/1 links (zero diagonal) together with D^-1/2 (A + I) D^-1/2.
struct AdjacencyMatrix {
  Tensor<double> links;
  Tensor<double> normalized;

  std::size_t nodes() const { return links.extent(0); }
};

/// Adjacency and assignment matrices for every resolution of a partition scheme.
struct GraphHierarchy {
  std::vector<AdjacencyMatrix> levels;
  std::vector<AssignmentMatrix> assignments;  ///< assignments[i] maps level i to level i + 1
};

void validate_topology(const SkeletonTopology& topology);
void validate_partition(const PartitionScheme& scheme, std::size_t node_count);

std::vector<std::string> builtin_skeleton_names();
SkeletonSpec builtin_skeleton(std::string_view name);

SkeletonSpec parse_skeleton(std::string_view json_text);
std::string serialize_skeleton(const SkeletonSpec& spec);

/// A built-in name, or else a path to a skeleton JSON file.
SkeletonSpec load_topology(const std::string& name_or_path);

AdjacencyMatrix adjacency_from_links(Tensor<double> links);
AdjacencyMatrix normalized_adjacency(const SkeletonTopology& topology);
AssignmentMatrix build_assignment(const PartitionStage& stage);

/// Regions j != k are linked when they share a joint or a member of j links to a
/// member of k; the result is normalized like normalized_adjacency.
AdjacencyMatrix coarsen_adjacency(const AdjacencyMatrix& adjacency, const AssignmentMatrix& assignment);

GraphHierarchy build_hierarchy(const SkeletonSpec& spec);

}  // namespace igpn

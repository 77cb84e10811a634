#include "igpn/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace igpn {
namespace {

using json = nlohmann::json;

struct StageTable {
  std::vector<std::pair<std::vector<std::size_t>, std::size_t>> rows;  // 1-based
};

struct BuiltinTable {
  std::string name;
  std::size_t node_count;
  std::vector<std::pair<std::size_t, std::size_t>> edges;     // 1-based
  std::vector<std::pair<std::size_t, std::size_t>> parents;   // (child, parent), 1-based
  std::vector<StageTable> stages;
};

// 25-joint Kinect v2 layout. Joint 21 (spine shoulder) is the kinematic root.
const BuiltinTable& ntu25_table() {
  static const BuiltinTable table{
      "ntu25",
      25,
      {{1, 2}, {2, 21}, {3, 21}, {4, 3}, {5, 21}, {6, 5}, {7, 6}, {8, 7}, {9, 21}, {10, 9}, {11, 10}, {12, 11},
       {13, 1}, {14, 13}, {15, 14}, {16, 15}, {17, 1}, {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8}, {24, 25},
       {25, 12}},
      {{1, 2}, {2, 21}, {3, 21}, {4, 3}, {5, 21}, {6, 5}, {7, 6}, {8, 7}, {9, 21}, {10, 9}, {11, 10}, {12, 11},
       {13, 1}, {14, 13}, {15, 14}, {16, 15}, {17, 1}, {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8}, {24, 25},
       {25, 12}},
      {
          {{{{1, 2, 21}, 1},
            {{3, 4, 21}, 2},
            {{5, 6, 7}, 3},
            {{8, 22, 23}, 4},
            {{9, 10, 11}, 5},
            {{12, 24, 25}, 6},
            {{13, 14}, 7},
            {{15, 16}, 8},
            {{17, 18}, 9},
            {{19, 20}, 10}}},
          {{{{1, 2}, 1}, {{3, 4}, 2}, {{5, 6}, 3}, {{7, 8}, 4}, {{9, 10}, 5}}},
          {{{{1, 2, 3}, 1}, {{4, 5}, 2}}},
      }};
  return table;
}

// 15-joint layout: head/neck/torso chain, two 3-joint arms hanging off the neck
// and two 3-joint legs hanging off the torso. Joint 3 (torso) is the root.
const BuiltinTable& uwa15_table() {
  static const BuiltinTable table{
      "uwa15",
      15,
      {{1, 2}, {2, 3}, {2, 4}, {4, 5}, {5, 6}, {2, 7}, {7, 8}, {8, 9}, {3, 10}, {10, 11}, {11, 12}, {3, 13},
       {13, 14}, {14, 15}},
      {{1, 2}, {2, 3}, {4, 2}, {5, 4}, {6, 5}, {7, 2}, {8, 7}, {9, 8}, {10, 3}, {11, 10}, {12, 11}, {13, 3},
       {14, 13}, {15, 14}},
      {
          {{{{1, 2}, 1},
            {{2, 3}, 2},
            {{4, 5}, 3},
            {{5, 6}, 4},
            {{7, 8}, 5},
            {{8, 9}, 6},
            {{10, 11}, 7},
            {{11, 12}, 8},
            {{13, 14}, 9},
            {{14, 15}, 10}}},
          {{{{1, 2}, 1}, {{3, 4}, 2}, {{5, 6}, 3}, {{7, 8}, 4}, {{9, 10}, 5}}},
          {{{{1, 2, 3}, 1}, {{4, 5}, 2}}},
      }};
  return table;
}

std::size_t to_internal(std::size_t one_based, std::size_t limit, const char* what) {
  if (one_based < 1 || one_based > limit) {
    throw SkeletonError(std::string(what) + " id " + std::to_string(one_based) + " outside [1," +
                        std::to_string(limit) + "]");
  }
  return one_based - 1;
}

SkeletonSpec from_table(const BuiltinTable& t) {
  SkeletonSpec spec;
  spec.topology.name = t.name;
  spec.topology.node_count = t.node_count;
  for (auto [a, b] : t.edges) spec.topology.edges.emplace_back(a - 1, b - 1);
  spec.topology.parents.assign(t.node_count, std::nullopt);
  for (auto [child, parent] : t.parents) spec.topology.parents[child - 1] = parent - 1;
  std::size_t nodes = t.node_count;
  for (const auto& st : t.stages) {
    PartitionStage stage;
    stage.input_nodes = nodes;
    for (const auto& [members, new_id] : st.rows) {
      Region r;
      for (std::size_t m : members) r.members.push_back(m - 1);
      r.new_id = new_id - 1;
      stage.regions.push_back(std::move(r));
    }
    nodes = stage.output_nodes();
    spec.partition.stages.push_back(std::move(stage));
  }
  validate_topology(spec.topology);
  validate_partition(spec.partition, spec.topology.node_count);
  return spec;
}

}  // namespace

std::size_t SkeletonTopology::root() const {
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (!parents[i]) return i;
  }
  throw SkeletonError("topology '" + name + "' has no parent map");
}

void validate_topology(const SkeletonTopology& t) {
  if (t.node_count == 0) throw SkeletonError("topology needs at least one node");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto [a, b] : t.edges) {
    if (a >= t.node_count || b >= t.node_count) {
      throw SkeletonError("edge (" + std::to_string(a + 1) + "," + std::to_string(b + 1) + ") references a missing joint");
    }
    if (a == b) throw SkeletonError("self-edge on joint " + std::to_string(a + 1));
    if (!seen.insert(std::minmax(a, b)).second) {
      throw SkeletonError("duplicate edge (" + std::to_string(a + 1) + "," + std::to_string(b + 1) + ")");
    }
  }
  if (!t.has_parents()) return;
  if (t.parents.size() != t.node_count) throw SkeletonError("parent map must cover every joint");
  std::size_t roots = 0;
  for (std::size_t i = 0; i < t.node_count; ++i) {
    if (!t.parents[i]) {
      ++roots;
    } else if (*t.parents[i] >= t.node_count) {
      throw SkeletonError("parent of joint " + std::to_string(i + 1) + " is a missing joint");
    }
  }
  if (roots != 1) throw SkeletonError("parent map must have exactly one root, found " + std::to_string(roots));
  for (std::size_t i = 0; i < t.node_count; ++i) {
    std::size_t cur = i;
    for (std::size_t steps = 0; t.parents[cur]; ++steps) {
      if (steps > t.node_count) throw SkeletonError("parent map is cyclic at joint " + std::to_string(i + 1));
      cur = *t.parents[cur];
    }
  }
}

void validate_partition(const PartitionScheme& scheme, std::size_t node_count) {
  std::size_t nodes = node_count;
  for (std::size_t s = 0; s < scheme.stages.size(); ++s) {
    const auto& stage = scheme.stages[s];
    const std::string where = "partition stage " + std::to_string(s + 1);
    if (stage.input_nodes != nodes) {
      throw SkeletonError(where + " expects " + std::to_string(stage.input_nodes) + " input nodes, previous graph has " +
                          std::to_string(nodes));
    }
    if (stage.regions.empty()) throw SkeletonError(where + " has no regions");
    std::vector<bool> id_used(stage.regions.size(), false);
    std::vector<bool> covered(nodes, false);
    for (const auto& r : stage.regions) {
      if (r.members.empty()) throw SkeletonError(where + " has an empty region");
      if (r.new_id >= stage.regions.size() || id_used[r.new_id]) {
        throw SkeletonError(where + ": new ids must be unique and contiguous from 1");
      }
      id_used[r.new_id] = true;
      for (std::size_t m : r.members) {
        if (m >= nodes) throw SkeletonError(where + " references missing node " + std::to_string(m + 1));
        covered[m] = true;
      }
    }
    for (std::size_t i = 0; i < nodes; ++i) {
      if (!covered[i]) throw SkeletonError(where + ": node " + std::to_string(i + 1) + " belongs to no region");
    }
    nodes = stage.output_nodes();
  }
}

std::vector<std::string> builtin_skeleton_names() { return {"ntu25", "uwa15"}; }

SkeletonSpec builtin_skeleton(std::string_view name) {
  if (name == "ntu25") return from_table(ntu25_table());
  if (name == "uwa15") return from_table(uwa15_table());
  throw SkeletonError("unknown built-in topology '" + std::string(name) + "'");
}

SkeletonSpec parse_skeleton(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw SkeletonError(std::string("topology JSON does not parse: ") + e.what());
  }
  try {
    SkeletonSpec spec;
    auto& t = spec.topology;
    t.name = doc.at("name").get<std::string>();
    t.node_count = doc.at("node_count").get<std::size_t>();
    for (const auto& e : doc.at("edges")) {
      t.edges.emplace_back(to_internal(e.at(0).get<std::size_t>(), t.node_count, "edge"),
                           to_internal(e.at(1).get<std::size_t>(), t.node_count, "edge"));
    }
    if (doc.contains("parents") && !doc["parents"].is_null()) {
      t.parents.assign(t.node_count, std::nullopt);
      for (const auto& p : doc["parents"]) {
        const std::size_t child = to_internal(p.at(0).get<std::size_t>(), t.node_count, "parent map");
        if (t.parents[child]) throw SkeletonError("joint " + std::to_string(child + 1) + " has two parents");
        t.parents[child] = to_internal(p.at(1).get<std::size_t>(), t.node_count, "parent map");
      }
    }
    std::size_t nodes = t.node_count;
    if (doc.contains("stages")) {
      for (const auto& st : doc["stages"]) {
        PartitionStage stage;
        stage.input_nodes = nodes;
        for (const auto& row : st) {
          Region r;
          for (const auto& m : row.at("members")) r.members.push_back(to_internal(m.get<std::size_t>(), nodes, "member"));
          r.new_id = row.at("new_id").get<std::size_t>();
          if (r.new_id == 0) throw SkeletonError("region new_id must be >= 1");
          r.new_id -= 1;
          stage.regions.push_back(std::move(r));
        }
        nodes = stage.output_nodes();
        spec.partition.stages.push_back(std::move(stage));
      }
    }
    validate_topology(spec.topology);
    validate_partition(spec.partition, spec.topology.node_count);
    return spec;
  } catch (const json::exception& e) {
    throw SkeletonError(std::string("malformed topology document: ") + e.what());
  }
}

std::string serialize_skeleton(const SkeletonSpec& spec) {
  json doc;
  const auto& t = spec.topology;
  doc["name"] = t.name;
  doc["node_count"] = t.node_count;
  doc["edges"] = json::array();
  for (auto [a, b] : t.edges) doc["edges"].push_back({a + 1, b + 1});
  if (t.has_parents()) {
    doc["parents"] = json::array();
    for (std::size_t i = 0; i < t.node_count; ++i) {
      if (t.parents[i]) doc["parents"].push_back({i + 1, *t.parents[i] + 1});
    }
  }
  doc["stages"] = json::array();
  for (const auto& stage : spec.partition.stages) {
    json rows = json::array();
    for (const auto& r : stage.regions) {
      json members = json::array();
      for (std::size_t m : r.members) members.push_back(m + 1);
      rows.push_back({{"members", members}, {"new_id", r.new_id + 1}});
    }
    doc["stages"].push_back(rows);
  }
  return doc.dump(2);
}

SkeletonSpec load_topology(const std::string& name_or_path) {
  const auto names = builtin_skeleton_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) return builtin_skeleton(name_or_path);
  std::ifstream in(name_or_path);
  if (!in) throw SkeletonError("'" + name_or_path + "' is neither a built-in topology nor a readable file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_skeleton(buf.str());
}

AdjacencyMatrix adjacency_from_links(Tensor<double> links) {
  if (links.rank() != 2 || links.extent(0) != links.extent(1)) {
    throw ShapeError("adjacency links must be square, got " + to_string(links.shape()));
  }
  const std::size_t n = links.extent(0);
  Tensor<double> norm(Shape{n, n});
  std::vector<double> inv_sqrt_degree(n);
  for (std::size_t i = 0; i < n; ++i) {
    double degree = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) degree += links.at({i, j});
    }
    inv_sqrt_degree[i] = 1.0 / std::sqrt(degree);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = (i == j) ? 1.0 : links.at({i, j});
      norm.at({i, j}) = a * inv_sqrt_degree[i] * inv_sqrt_degree[j];
    }
  }
  return {std::move(links), std::move(norm)};
}

AdjacencyMatrix normalized_adjacency(const SkeletonTopology& topology) {
  validate_topology(topology);
  const std::size_t n = topology.node_count;
  Tensor<double> links(Shape{n, n});
  for (auto [a, b] : topology.edges) {
    links.at({a, b}) = 1.0;
    links.at({b, a}) = 1.0;
  }
  return adjacency_from_links(std::move(links));
}

AssignmentMatrix build_assignment(const PartitionStage& stage) {
  PartitionScheme single{{stage}};
  validate_partition(single, stage.input_nodes);
  Tensor<double> p(Shape{stage.input_nodes, stage.output_nodes()});
  for (const auto& r : stage.regions) {
    for (std::size_t m : r.members) p.at({m, r.new_id}) = 1.0;
  }
  return {std::move(p)};
}

AdjacencyMatrix coarsen_adjacency(const AdjacencyMatrix& adjacency, const AssignmentMatrix& assignment) {
  const std::size_t n = adjacency.nodes();
  if (assignment.rows() != n) {
    throw ShapeError("assignment has " + std::to_string(assignment.rows()) + " rows but adjacency has " +
                     std::to_string(n) + " nodes");
  }
  const std::size_t m = assignment.cols();
  const auto& p = assignment.p;
  const auto& a = adjacency.links;
  Tensor<double> links(Shape{m, m});
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = j + 1; k < m; ++k) {
      bool linked = false;
      for (std::size_t u = 0; u < n && !linked; ++u) {
        if (p.at({u, j}) == 0.0) continue;
        for (std::size_t v = 0; v < n; ++v) {
          if (p.at({v, k}) == 0.0) continue;
          if (u == v || a.at({u, v}) != 0.0) {
            linked = true;
            break;
          }
        }
      }
      if (linked) {
        links.at({j, k}) = 1.0;
        links.at({k, j}) = 1.0;
      }
    }
  }
  return adjacency_from_links(std::move(links));
}

GraphHierarchy build_hierarchy(const SkeletonSpec& spec) {
  validate_partition(spec.partition, spec.topology.node_count);
  GraphHierarchy h;
  h.levels.push_back(normalized_adjacency(spec.topology));
  for (const auto& stage : spec.partition.stages) {
    h.assignments.push_back(build_assignment(stage));
    h.levels.push_back(coarsen_adjacency(h.levels.back(), h.assignments.back()));
  }
  return h;
}

}  // namespace igpn

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "igpn/skeleton.hpp"

using namespace igpn;

namespace {

SkeletonTopology path(std::size_t n) {
  SkeletonTopology t;
  t.name = "path" + std::to_string(n);
  t.node_count = n;
  for (std::size_t i = 0; i + 1 < n; ++i) t.edges.emplace_back(i, i + 1);
  return t;
}

void expect_symmetric_positive_diagonal(const Tensor<double>& a) {
  const std::size_t n = a.extent(0);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_GT(a.at({i, i}), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_EQ(a.at({i, j}), a.at({j, i}));
      EXPECT_GE(a.at({i, j}), 0.0);
      EXPECT_LE(a.at({i, j}), 1.0);
    }
  }
}

}  // namespace

TEST(Topology, Ntu25) {
  const auto spec = builtin_skeleton("ntu25");
  EXPECT_EQ(spec.topology.node_count, 25u);
  EXPECT_EQ(spec.topology.edges.size(), 24u);
  EXPECT_EQ(spec.topology.root(), 20u);
}

TEST(Topology, Uwa15) {
  const auto spec = builtin_skeleton("uwa15");
  EXPECT_EQ(spec.topology.node_count, 15u);
  EXPECT_EQ(spec.topology.edges.size(), 14u);
}

TEST(Topology, ToyRoundTrip) {
  SkeletonSpec spec;
  spec.topology.name = "pair";
  spec.topology.node_count = 2;
  spec.topology.edges = {{0, 1}};
  const auto back = parse_skeleton(serialize_skeleton(spec));
  EXPECT_EQ(back.topology.name, "pair");
  EXPECT_EQ(back.topology.node_count, 2u);
  EXPECT_EQ(back.topology.edges, spec.topology.edges);
  EXPECT_FALSE(back.topology.has_parents());
}

TEST(Topology, BuiltinsRoundTrip) {
  for (const auto& name : builtin_skeleton_names()) {
    const auto spec = builtin_skeleton(name);
    const auto back = parse_skeleton(serialize_skeleton(spec));
    EXPECT_EQ(back.topology.edges, spec.topology.edges);
    EXPECT_EQ(back.topology.parents, spec.topology.parents);
    ASSERT_EQ(back.partition.stages.size(), spec.partition.stages.size());
    for (std::size_t s = 0; s < spec.partition.stages.size(); ++s) {
      EXPECT_EQ(build_assignment(back.partition.stages[s]).p, build_assignment(spec.partition.stages[s]).p);
    }
  }
}

TEST(Topology, Errors) {
  EXPECT_THROW(parse_skeleton(R"({"name":"d","node_count":3,"edges":[[1,2],[2,1]]})"), SkeletonError);
  EXPECT_THROW(parse_skeleton(R"({"name":"d","node_count":3,"edges":[[1,4]]})"), SkeletonError);
  EXPECT_THROW(parse_skeleton(R"({"name":"d","node_count":3,"edges":[[1,2]],"parents":[[1,2],[2,3],[3,1]]})"),
               SkeletonError);
  EXPECT_THROW(parse_skeleton(R"({"name":"d","node_count":2,"edges":[[1,1]]})"), SkeletonError);
  EXPECT_THROW(parse_skeleton("not json"), SkeletonError);
  EXPECT_THROW(builtin_skeleton("kinect99"), SkeletonError);
  EXPECT_THROW(load_topology("/nonexistent/skeleton.json"), SkeletonError);
}

TEST(Partition, Errors) {
  // joint 3 dropped
  EXPECT_THROW(parse_skeleton(R"({"name":"d","node_count":3,"edges":[[1,2],[2,3]],
                                 "stages":[[{"members":[1,2],"new_id":1}]]})"),
               SkeletonError);
  // new ids not contiguous
  EXPECT_THROW(parse_skeleton(R"({"name":"d","node_count":2,"edges":[[1,2]],
                                 "stages":[[{"members":[1],"new_id":1},{"members":[2],"new_id":3}]]})"),
               SkeletonError);
  PartitionStage empty_region{2, {{{0, 1}, 0}, {{}, 1}}};
  EXPECT_THROW(build_assignment(empty_region), SkeletonError);
}

TEST(Adjacency, SingleNode) {
  const auto a = normalized_adjacency(path(1));
  EXPECT_EQ(a.normalized, Tensor<double>(Shape{1, 1}, 1.0));
}

TEST(Adjacency, TwoNodePath) {
  const auto a = normalized_adjacency(path(2));
  for (double v : a.normalized.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Adjacency, ThreeNodePath) {
  const auto a = normalized_adjacency(path(3)).normalized;
  // degrees with self loops: 2, 3, 2
  const double d[3] = {2.0, 3.0, 2.0};
  const double raw[3][3] = {{1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a.at({i, j}), raw[i][j] / std::sqrt(d[i] * d[j]), 1e-15);
  }
}

TEST(Adjacency, BuiltinsSymmetric) {
  for (const auto& name : builtin_skeleton_names()) {
    const auto a = normalized_adjacency(builtin_skeleton(name).topology);
    expect_symmetric_positive_diagonal(a.normalized);
    for (std::size_t i = 0; i < a.nodes(); ++i) EXPECT_EQ(a.links.at({i, i}), 0.0);
  }
}

TEST(Assignment, Ntu25FirstStageOverlap) {
  const auto p = build_assignment(builtin_skeleton("ntu25").partition.stages[0]).p;
  EXPECT_EQ(p.shape(), (Shape{25, 10}));
  const std::size_t joint21 = 20;
  for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(p.at({joint21, j}), (j == 0 || j == 1) ? 1.0 : 0.0);
  for (std::size_t i = 0; i < 25; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 10; ++j) row += p.at({i, j});
    EXPECT_EQ(row, i == joint21 ? 2.0 : 1.0);
  }
}

TEST(Assignment, Ntu25ThirdStage) {
  const auto p = build_assignment(builtin_skeleton("ntu25").partition.stages[2]).p;
  const Tensor<double> expected(Shape{5, 2}, {1, 0, 1, 0, 1, 0, 0, 1, 0, 1});
  EXPECT_EQ(p, expected);
}

TEST(Assignment, IdentityScheme) {
  PartitionStage stage;
  stage.input_nodes = 4;
  for (std::size_t i = 0; i < 4; ++i) stage.regions.push_back({{i}, i});
  const auto p = build_assignment(stage).p;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(p.at({i, j}), i == j ? 1.0 : 0.0);
  }
}

TEST(Assignment, RowsAndColumnsNonEmpty) {
  for (const auto& name : builtin_skeleton_names()) {
    for (const auto& stage : builtin_skeleton(name).partition.stages) {
      const auto p = build_assignment(stage).p;
      for (std::size_t i = 0; i < p.extent(0); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < p.extent(1); ++j) s += p.at({i, j});
        EXPECT_GE(s, 1.0);
      }
      for (std::size_t j = 0; j < p.extent(1); ++j) {
        double s = 0;
        for (std::size_t i = 0; i < p.extent(0); ++i) s += p.at({i, j});
        EXPECT_GE(s, 1.0);
      }
      EXPECT_LT(p.extent(1), p.extent(0));
    }
  }
}

TEST(Coarsen, IdentityKeepsAdjacency) {
  const auto topo = builtin_skeleton("uwa15").topology;
  const auto a = normalized_adjacency(topo);
  PartitionStage stage;
  stage.input_nodes = 15;
  for (std::size_t i = 0; i < 15; ++i) stage.regions.push_back({{i}, i});
  const auto c = coarsen_adjacency(a, build_assignment(stage));
  EXPECT_EQ(c.links, a.links);
  EXPECT_EQ(c.normalized, a.normalized);
}

TEST(Coarsen, AllToOne) {
  const auto a = normalized_adjacency(path(5));
  PartitionStage stage{5, {{{0, 1, 2, 3, 4}, 0}}};
  const auto c = coarsen_adjacency(a, build_assignment(stage));
  EXPECT_EQ(c.normalized, Tensor<double>(Shape{1, 1}, 1.0));
}

TEST(Coarsen, Ntu25SharedJointLinksFirstRegions) {
  const auto spec = builtin_skeleton("ntu25");
  const auto a = normalized_adjacency(spec.topology);
  const auto p = build_assignment(spec.partition.stages[0]);
  const auto c = coarsen_adjacency(a, p);
  EXPECT_EQ(c.links.at({0, 1}), 1.0);

  // brute-force scan of the rule for every pair
  for (std::size_t j = 0; j < 10; ++j) {
    for (std::size_t k = 0; k < 10; ++k) {
      if (j == k) continue;
      bool expected = false;
      for (std::size_t u = 0; u < 25; ++u) {
        for (std::size_t v = 0; v < 25; ++v) {
          if (p.p.at({u, j}) == 1.0 && p.p.at({v, k}) == 1.0 && (u == v || a.links.at({u, v}) == 1.0)) expected = true;
        }
      }
      EXPECT_EQ(c.links.at({j, k}), expected ? 1.0 : 0.0) << j << "," << k;
    }
  }
}

TEST(Hierarchy, NodeTrajectories) {
  const std::map<std::string, std::vector<std::size_t>> expected{{"ntu25", {25, 10, 5, 2}}, {"uwa15", {15, 10, 5, 2}}};
  for (const auto& [name, nodes] : expected) {
    const auto h = build_hierarchy(builtin_skeleton(name));
    std::vector<std::size_t> got;
    for (const auto& level : h.levels) got.push_back(level.nodes());
    EXPECT_EQ(got, nodes) << name;
    for (const auto& level : h.levels) expect_symmetric_positive_diagonal(level.normalized);
  }
}

TEST(Coarsen, PermutationConsistency) {
  const auto spec = builtin_skeleton("ntu25");
  const auto base = coarsen_adjacency(normalized_adjacency(spec.topology), build_assignment(spec.partition.stages[0]));

  std::mt19937_64 rng(17);
  std::vector<std::size_t> pi(25), rho(10);
  std::iota(pi.begin(), pi.end(), 0);
  std::iota(rho.begin(), rho.end(), 0);
  std::shuffle(pi.begin(), pi.end(), rng);
  std::shuffle(rho.begin(), rho.end(), rng);

  SkeletonTopology topo = spec.topology;
  for (auto& [a, b] : topo.edges) {
    a = pi[a];
    b = pi[b];
  }
  topo.parents.clear();
  PartitionStage stage = spec.partition.stages[0];
  for (auto& r : stage.regions) {
    for (auto& m : r.members) m = pi[m];
    r.new_id = rho[r.new_id];
  }
  const auto permuted = coarsen_adjacency(normalized_adjacency(topo), build_assignment(stage));
  for (std::size_t j = 0; j < 10; ++j) {
    for (std::size_t k = 0; k < 10; ++k) {
      EXPECT_EQ(permuted.normalized.at({rho[j], rho[k]}), base.normalized.at({j, k}));
    }
  }
}

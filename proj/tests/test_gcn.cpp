#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "igpn/gcn.hpp"
#include "igpn/gradcheck.hpp"
#include "igpn/skeleton.hpp"
#include "test_util.hpp"

using namespace igpn;
using igpn::testing::max_abs_diff;
using igpn::testing::random_tensor;

namespace {

Tensor<double> graph_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& a) {
  Record<double> rec;
  return spatial_graph_conv(rec.leaf(x), rec.leaf(w), rec.leaf(a)).value();
}

Tensor<double> eye(std::size_t n) {
  Tensor<double> t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.at({i, i}) = 1.0;
  return t;
}

struct Norm {
  Tensor<double> mean{Shape{3}, 0.0};
  Tensor<double> var{Shape{3}, 1.0};
};

Tensor<double> bn(const Tensor<double>& x, const Tensor<double>& gamma, const Tensor<double>& beta, Mode mode,
                  Norm& state) {
  Record<double> rec;
  return batch_normalize(rec.leaf(x), rec.leaf(gamma), rec.leaf(beta), mode, state.mean, state.var).value();
}

}  // namespace

TEST(SpatialGraphConv, IdentityWeightAndAdjacency) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({1, 3, 2, 1}, rng);
  EXPECT_EQ(graph_conv(x, eye(3), Tensor<double>(Shape{1, 1}, 1.0)), x);
}

TEST(SpatialGraphConv, ConstantNodesScaledByRowSum) {
  Tensor<double> x(Shape{1, 2, 3, 4}, 1.5);
  Tensor<double> a(Shape{4, 4}, 0.2);  // every row and column sums to 0.8
  const auto y = graph_conv(x, eye(2), a);
  for (double v : y.data()) EXPECT_NEAR(v, 1.5 * 0.8, 1e-15);
}

TEST(SpatialGraphConv, MatchesDenseLoops) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor({1, 3, 2, 4}, rng);
  const auto w = random_tensor({5, 3}, rng);
  const auto a = random_tensor({4, 4}, rng);
  const auto y = graph_conv(x, w, a);
  Tensor<double> expected(Shape{1, 5, 2, 4});
  for (std::size_t o = 0; o < 5; ++o) {
    for (std::size_t t = 0; t < 2; ++t) {
      for (std::size_t j = 0; j < 4; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t i = 0; i < 4; ++i) acc += w.at({o, c}) * x.at({0, c, t, i}) * a.at({i, j});
        }
        expected.at({0, o, t, j}) = acc;
      }
    }
  }
  EXPECT_LE(max_abs_diff(y, expected), 1e-9);
}

TEST(SpatialGraphConv, Linear) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({2, 3, 4, 5}, rng);
  const auto z = random_tensor({2, 3, 4, 5}, rng);
  const auto w = random_tensor({4, 3}, rng);
  const auto adj = random_tensor({5, 5}, rng);
  const double alpha = 0.7, beta = -1.3;
  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = alpha * x[i] + beta * z[i];
  const auto fx = graph_conv(x, w, adj), fz = graph_conv(z, w, adj);
  Tensor<double> expected(fx.shape());
  for (std::size_t i = 0; i < fx.size(); ++i) expected[i] = alpha * fx[i] + beta * fz[i];
  EXPECT_LE(max_abs_diff(graph_conv(mix, w, adj), expected), 1e-9);
}

TEST(SpatialGraphConv, AdjacencySizeChecked) {
  Record<double> rec;
  EXPECT_THROW(spatial_graph_conv(rec.leaf(Tensor<double>(Shape{1, 2, 3, 4})), rec.leaf(eye(2)), rec.leaf(eye(5))),
               ShapeError);
}

TEST(TemporalConv, UnitKernelIsIdentity) {
  std::mt19937_64 rng(4);
  const auto x = random_tensor({2, 1, 5, 3}, rng);
  Record<double> rec;
  EXPECT_EQ(temporal_conv(rec.leaf(x), rec.leaf(Tensor<double>(Shape{1, 1, 1}, 1.0))).value(), x);
}

TEST(TemporalConv, ImpulseResponse) {
  Record<double> rec;
  auto y = temporal_conv(rec.leaf(Tensor<double>(Shape{1, 1, 4, 1}, {0, 1, 0, 0})),
                         rec.leaf(Tensor<double>(Shape{1, 1, 3}, {0.25, 0.5, 0.25})));
  EXPECT_EQ(y.value(), Tensor<double>(Shape{1, 1, 4, 1}, {0.25, 0.5, 0.25, 0}));
}

TEST(TemporalConv, StrideHalvesFramesRoundingUp) {
  Record<double> rec;
  auto y = temporal_conv(rec.leaf(Tensor<double>(Shape{1, 2, 7, 3})), rec.leaf(Tensor<double>(Shape{4, 2, 5})), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 3}));
}

TEST(TemporalConv, EvenKernelRejected) {
  Record<double> rec;
  EXPECT_THROW(temporal_conv(rec.leaf(Tensor<double>(Shape{1, 2, 7, 3})), rec.leaf(Tensor<double>(Shape{4, 2, 4}))),
               ShapeError);
}

TEST(TemporalConv, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Record<double> rec;
  auto x = rec.leaf(random_tensor({2, 3, 9, 4}, rng));
  auto w = rec.leaf(random_tensor({2, 3, 5}, rng));
  auto loss = sum_all(mul(temporal_conv(x, w), rec.constant(random_tensor({2, 2, 9, 4}, rng))));
  const std::vector<Var<double>> leaves{w};
  const auto g = evaluate_with_gradients(rec, loss, leaves)[w];
  auto f = [&](const Tensor<double>& value) { return rec.replay({{w.id, value}})[loss.id].item(); };
  EXPECT_LE(relative_error(g, finite_difference_gradient<double>(f, w.value(), 1e-6)), 1e-4);
}

TEST(BatchNorm, ConstantInputGivesZeros) {
  Norm state;
  const auto y = bn(Tensor<double>(Shape{2, 3, 4, 5}, 7.0), Tensor<double>(Shape{3}, 1.0), Tensor<double>(Shape{3}),
                    Mode::train, state);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  std::mt19937_64 rng(6);
  Norm state;
  const Tensor<double> beta(Shape{3}, {0.5, -1.0, 2.0});
  const auto y = bn(random_tensor({2, 3, 4, 5}, rng), Tensor<double>(Shape{3}), beta, Mode::train, state);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t n = 0; n < 5; ++n) EXPECT_EQ(y.at({b, c, t, n}), beta[c]);
      }
    }
  }
}

TEST(BatchNorm, TrainModeMoments) {
  std::mt19937_64 rng(7);
  Norm state;
  auto x = random_tensor({4, 3, 6, 5}, rng, 3.0);
  for (auto& v : x.data()) v += 2.0;
  const auto y = bn(x, Tensor<double>(Shape{3}, 1.0), Tensor<double>(Shape{3}), Mode::train, state);
  const double count = 4 * 6 * 5;
  for (std::size_t c = 0; c < 3; ++c) {
    double mu = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < 4; ++b) {
      for (std::size_t t = 0; t < 6; ++t) {
        for (std::size_t n = 0; n < 5; ++n) {
          const double v = y.at({b, c, t, n});
          mu += v;
          sq += v * v;
        }
      }
    }
    mu /= count;
    EXPECT_NEAR(mu, 0.0, 1e-6);
    EXPECT_NEAR(sq / count - mu * mu, 1.0, 1e-3);
  }
  // running moments moved towards the batch statistics
  for (std::size_t c = 0; c < 3; ++c) EXPECT_GT(state.mean[c], 0.0);
}

TEST(BatchNorm, EvalModeUsesRunningMoments) {
  std::mt19937_64 rng(8);
  Norm state;
  state.mean = Tensor<double>(Shape{3}, {1.0, 2.0, 3.0});
  state.var = Tensor<double>(Shape{3}, {4.0, 1.0, 0.25});
  const Norm before = state;
  const auto x = random_tensor({2, 3, 2, 2}, rng);
  const auto y = bn(x, Tensor<double>(Shape{3}, 1.0), Tensor<double>(Shape{3}), Mode::eval, state);
  EXPECT_EQ(y, bn(x, Tensor<double>(Shape{3}, 1.0), Tensor<double>(Shape{3}), Mode::eval, state));
  EXPECT_EQ(state.mean, before.mean);
  EXPECT_EQ(state.var, before.var);
  for (std::size_t c = 0; c < 3; ++c) {
    const double expected = (x.at({1, c, 1, 0}) - state.mean[c]) / std::sqrt(state.var[c] + kNormEpsilon);
    EXPECT_NEAR(y.at({1, c, 1, 0}), expected, 1e-12);
  }
}

TEST(BatchNorm, ZeroBatchRejected) {
  Norm state;
  EXPECT_THROW(bn(Tensor<double>(Shape{0, 3, 2, 2}), Tensor<double>(Shape{3}, 1.0), Tensor<double>(Shape{3}),
                  Mode::train, state),
               ShapeError);
}

TEST(GcnBlock, PreservesShapeWithResidual) {
  std::mt19937_64 rng(9);
  ParameterSet<double> params;
  GcnBlock<double> block("b", {4, 4, 5, 1});
  block.init(params, rng);
  EXPECT_TRUE(block.has_residual());
  Record<double> rec;
  ForwardContext<double> ctx(rec, params, Mode::train);
  auto y = block.forward(ctx, rec.leaf(random_tensor({2, 4, 6, 25}, rng)),
                         ctx.constant(normalized_adjacency(builtin_skeleton("ntu25").topology).normalized));
  EXPECT_EQ(y.shape(), (Shape{2, 4, 6, 25}));
  for (double v : y.value().data()) EXPECT_GE(v, 0.0);
}

TEST(GcnBlock, ChannelAndStrideChanges) {
  std::mt19937_64 rng(10);
  ParameterSet<float> params;
  GcnBlock<float> block("b", {3, 8, 3, 2});
  block.init(params, rng);
  EXPECT_FALSE(block.has_residual());
  Record<float> rec;
  ForwardContext<float> ctx(rec, params, Mode::train);
  auto y = block.forward(ctx, rec.leaf(random_tensor({1, 3, 9, 15}, rng).cast<float>()),
                         ctx.constant(normalized_adjacency(builtin_skeleton("uwa15").topology).normalized.cast<float>()));
  EXPECT_EQ(y.shape(), (Shape{1, 8, 5, 15}));
}

TEST(GcnBlock, InvalidConfig) {
  EXPECT_THROW(GcnBlock<double>("b", {4, 4, 4, 1}), std::invalid_argument);
  EXPECT_THROW(GcnBlock<double>("b", {0, 4, 5, 1}), std::invalid_argument);
}

TEST(GcnBlock, GradientSuiteCase) {
  const auto results = run_gradient_suite({}, {"gcn_block"});
  ASSERT_EQ(results.size(), 1u);
  EXPECT_TRUE(results[0].passed) << results[0].max_rel_error;
}

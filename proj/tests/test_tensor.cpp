#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "igpn/gradcheck.hpp"
#include "igpn/ops.hpp"
#include "igpn/record.hpp"

using namespace igpn;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

GradientSet<double> gradients(const Record<double>& rec, Var<double> y, const std::vector<Var<double>>& leaves) {
  return evaluate_with_gradients(rec, y, leaves);
}

}  // namespace

TEST(Tensor, ShapeAndBuffer) {
  Tensor<float> t(Shape{2, 3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.extent(2), 4u);
  EXPECT_EQ(t.at({1, 2, 3}), 1.5f);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_EQ(Tensor<double>::scalar(4.0).item(), 4.0);
  EXPECT_EQ(Tensor<double>::scalar(4.0).rank(), 0u);
}

TEST(Tensor, FiniteCheck) {
  Tensor<double> t(Shape{3});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
  Tensor<float> f(Shape{9});
  f[8] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(f.all_finite());
}

TEST(Gradients, SquareAtThree) {
  Record<double> rec;
  auto x = rec.leaf(Tensor<double>::scalar(3.0));
  auto y = mul(x, x);
  const auto g = gradients(rec, y, {x});
  EXPECT_DOUBLE_EQ(g[x].item(), 6.0);
}

TEST(Gradients, TanhAtZero) {
  Record<double> rec;
  auto x = rec.leaf(Tensor<double>::scalar(0.0));
  const auto g = gradients(rec, tanh(x), {x});
  EXPECT_DOUBLE_EQ(g[x].item(), 1.0);
}

TEST(Gradients, MatmulMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const auto a0 = random_tensor({4, 3}, rng);
  const auto b0 = random_tensor({3, 2}, rng);
  Record<double> rec;
  auto a = rec.leaf(a0);
  auto b = rec.leaf(b0);
  auto loss = sum_all(matmul(a, b));
  const auto g = gradients(rec, loss, {a, b});

  auto fa = [&](const Tensor<double>& x) {
    Record<double> r;
    return sum_all(matmul(r.leaf(x), r.leaf(b0))).value().item();
  };
  auto fb = [&](const Tensor<double>& x) {
    Record<double> r;
    return sum_all(matmul(r.leaf(a0), r.leaf(x))).value().item();
  };
  EXPECT_LE(relative_error(g[a], finite_difference_gradient<double>(fa, a0, 1e-5)), 1e-6);
  EXPECT_LE(relative_error(g[b], finite_difference_gradient<double>(fb, b0, 1e-5)), 1e-6);
}

TEST(Gradients, NonScalarOutputRejected) {
  Record<double> rec;
  auto x = rec.leaf(Tensor<double>(Shape{2}, 1.0));
  EXPECT_THROW(gradients(rec, scale(x, 2.0), {x}), ShapeError);
}

TEST(Gradients, UnreachableLeafIsZeroAndFlagged) {
  Record<double> rec;
  auto x = rec.leaf(Tensor<double>(Shape{2}, 1.0));
  auto unused = rec.leaf(Tensor<double>(Shape{3}, 5.0));
  const auto g = gradients(rec, sum_all(x), {x, unused});
  EXPECT_TRUE(g.is_unreachable(unused));
  EXPECT_FALSE(g.is_unreachable(x));
  EXPECT_EQ(g[unused], Tensor<double>(Shape{3}));
}

TEST(Gradients, NonFiniteValueRaises) {
  Record<double> rec;
  auto x = rec.leaf(Tensor<double>(Shape{2}, 1e300));
  EXPECT_THROW(mul(x, x), NumericError);
  Tensor<double> bad(Shape{1});
  bad[0] = std::nan("");
  EXPECT_THROW(rec.leaf(bad), NumericError);
}

TEST(FiniteDifference, SumGivesOnes) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({3, 2}, rng);
  auto f = [](const Tensor<double>& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return s;
  };
  const auto g = finite_difference_gradient<double>(f, x, 1e-5);
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDifference, SquareAtOne) {
  auto f = [](const Tensor<double>& t) { return t[0] * t[0]; };
  const auto g = finite_difference_gradient<double>(f, Tensor<double>::scalar(1.0), 1e-5);
  EXPECT_NEAR(g.item(), 2.0, 1e-9);
}

TEST(FiniteDifference, RejectsBadStep) {
  auto f = [](const Tensor<double>& t) { return t[0]; };
  EXPECT_THROW(finite_difference_gradient<double>(f, Tensor<double>::scalar(1.0), 0.0), std::invalid_argument);
}

TEST(Concat, ChannelBlocks) {
  Record<float> rec;
  auto a = rec.leaf(Tensor<float>(Shape{2, 32, 4, 5}, 1.0f));
  auto b = rec.leaf(Tensor<float>(Shape{2, 32, 4, 5}, 2.0f));
  auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 64, 4, 5}));
  EXPECT_EQ(c.value().at({1, 31, 3, 4}), 1.0f);
  EXPECT_EQ(c.value().at({1, 32, 0, 0}), 2.0f);
}

TEST(Concat, EmptyChannelOperand) {
  std::mt19937_64 rng(5);
  Record<double> rec;
  auto a = rec.leaf(random_tensor({2, 3, 4}, rng));
  auto b = rec.leaf(Tensor<double>(Shape{2, 0, 4}));
  const Tensor<double> joined = concat_channels(a, b).value();
  EXPECT_EQ(joined, a.value());
}

TEST(Concat, GradientIsOnes) {
  std::mt19937_64 rng(6);
  Record<double> rec;
  auto a = rec.leaf(random_tensor({2, 3, 4}, rng));
  auto b = rec.leaf(random_tensor({2, 5, 4}, rng));
  const auto g = gradients(rec, sum_all(concat_channels(a, b)), {a, b});
  EXPECT_EQ(g[a], Tensor<double>(Shape{2, 3, 4}, 1.0));
  EXPECT_EQ(g[b], Tensor<double>(Shape{2, 5, 4}, 1.0));
}

TEST(Concat, MismatchRejected) {
  Record<double> rec;
  auto a = rec.leaf(Tensor<double>(Shape{2, 3, 4}));
  auto b = rec.leaf(Tensor<double>(Shape{2, 3, 5}));
  EXPECT_THROW(concat_channels(a, b), ShapeError);
}

TEST(Record, ReplayIsBitwise) {
  std::mt19937_64 rng(9);
  Record<float> rec;
  auto x = rec.leaf(random_tensor({2, 3, 6, 4}, rng).cast<float>());
  auto w = rec.leaf(random_tensor({5, 3, 3}, rng).cast<float>());
  auto y = softmax(tanh(temporal_conv(x, w, 2)));
  const auto values = rec.replay();
  EXPECT_EQ(values[y.id], y.value());
}

TEST(Record, ReplayWithOverride) {
  Record<double> rec;
  auto x = rec.leaf(Tensor<double>::scalar(2.0));
  auto y = mul(x, x);
  const auto values = rec.replay({{x.id, Tensor<double>::scalar(5.0)}});
  EXPECT_EQ(values[y.id].item(), 25.0);
  EXPECT_EQ(y.value().item(), 4.0);
}

TEST(Record, ForwardIsDeterministic) {
  std::mt19937_64 rng(11);
  const auto x0 = random_tensor({3, 4, 5}, rng).cast<float>();
  const auto w0 = random_tensor({5, 2}, rng).cast<float>();
  auto run = [&] {
    Record<float> rec;
    return softmax(batched_matmul(rec.leaf(x0), rec.leaf(w0))).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Record, CountsMultiplyAccumulates) {
  Record<double> rec;
  auto a = rec.leaf(Tensor<double>(Shape{4, 3}));
  auto b = rec.leaf(Tensor<double>(Shape{3, 2}));
  auto c = matmul(a, b);
  EXPECT_EQ(rec.macs(), 24u);
  auto x = rec.leaf(Tensor<double>(Shape{2, 3, 8, 5}));
  auto w = rec.leaf(Tensor<double>(Shape{4, 3, 5}));
  temporal_conv(x, w, 2);
  EXPECT_EQ(rec.macs(), 24u + 2u * 3 * 4 * 5 * 4 * 5);
  add(c, c);
  EXPECT_EQ(rec.macs(), 24u + 2u * 3 * 4 * 5 * 4 * 5);
}

TEST(Ops, ShapeErrors) {
  Record<double> rec;
  auto a = rec.leaf(Tensor<double>(Shape{4, 3}));
  auto b = rec.leaf(Tensor<double>(Shape{4, 3}));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(reshape(a, {5, 2}), ShapeError);
  auto x = rec.leaf(Tensor<double>(Shape{1, 3, 4, 2}));
  EXPECT_THROW(temporal_conv(x, rec.leaf(Tensor<double>(Shape{2, 3, 4})), 1), ShapeError);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(2);
  Record<double> rec;
  auto s = softmax(rec.leaf(random_tensor({3, 7}, rng))).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < 7; ++k) total += s.at({r, k});
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Ops, CrossEntropyUniformLogits) {
  Record<double> rec;
  auto logits = rec.leaf(Tensor<double>(Shape{3, 8}, 0.7));
  const std::vector<std::size_t> labels{0, 3, 7};
  EXPECT_NEAR(cross_entropy(logits, std::span<const std::size_t>(labels)).value().item(), std::log(8.0), 1e-12);
  const std::vector<std::size_t> bad{0, 3, 8};
  EXPECT_THROW(cross_entropy(logits, std::span<const std::size_t>(bad)), std::out_of_range);
}

TEST(GradientSuite, EveryCaseWithinTolerance) {
  GradCheckOptions options;
  const auto results = run_gradient_suite(options);
  EXPECT_EQ(results.size(), gradient_suite_names().size());
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " max relative error " << r.max_rel_error;
    EXPECT_GE(r.seeds, 10u);
  }
}

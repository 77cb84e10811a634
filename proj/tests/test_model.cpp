#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "igpn/model.hpp"
#include "test_util.hpp"

using namespace igpn;
using igpn::testing::random_tensor;

namespace {

ModelConfig small(Variant v, const std::string& skeleton = "ntu25") {
  ModelConfig c;
  c.variant = v;
  c.skeleton = builtin_skeleton(skeleton);
  c.channels = {16, 32, 32};
  c.ism.embed_channels = 8;
  c.classes = 8;
  c.frames = 16;
  return c;
}

Tensor<float> batch(const ModelConfig& c, std::size_t b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor({b, 3, c.frames, c.skeleton.topology.node_count}, rng).cast<float>();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("igpn_test_" + name)).string();
}

std::uint64_t recorded_macs(const ModelConfig& c) {
  auto model = Model<float>::build(c, 1);
  Record<float> rec;
  ForwardContext<float> ctx(rec, model.params(), Mode::eval);
  model.forward(ctx, batch(c, 1, 2));
  return rec.macs();
}

}  // namespace

TEST(Model, HeavyNtu25Trajectory) {
  auto model = Model<float>::build(small(Variant::heavy), 0);
  EXPECT_EQ(model.node_trajectory(), (std::vector<std::size_t>{25, 10, 5, 2}));
}

TEST(Model, LightUwa15Trajectory) {
  auto model = Model<float>::build(small(Variant::light, "uwa15"), 0);
  EXPECT_EQ(model.node_trajectory(), (std::vector<std::size_t>{15, 10, 5, 2}));
}

TEST(Model, SeededBuildIsBitwiseReproducible) {
  const auto c = small(Variant::heavy);
  EXPECT_TRUE(Model<double>::build(c, 5).params() == Model<double>::build(c, 5).params());
  EXPECT_FALSE(Model<double>::build(c, 5).params() == Model<double>::build(c, 6).params());
}

TEST(Model, ForwardShape) {
  auto c = small(Variant::light);
  c.channels = {64, 128, 256};
  c.ism.embed_channels = 32;
  c.frames = 64;
  auto model = Model<float>::build(c, 0);
  EXPECT_EQ(model.predict(batch(c, 2, 1)).shape(), (Shape{2, 8}));
}

TEST(Model, DuplicatedSampleGivesIdenticalRows) {
  const auto c = small(Variant::heavy);
  auto model = Model<float>::build(c, 3);
  const auto one = batch(c, 1, 4);
  Tensor<float> two(Shape{2, 3, c.frames, 25});
  std::copy(one.data().begin(), one.data().end(), two.data().begin());
  std::copy(one.data().begin(), one.data().end(), two.data().begin() + static_cast<std::ptrdiff_t>(one.size()));
  const auto logits = model.predict(two);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(logits.at({0, k}), logits.at({1, k}));
}

TEST(Model, LightAndHeavyDiffer) {
  auto light = Model<float>::build(small(Variant::light), 9);
  auto heavy = Model<float>::build(small(Variant::heavy), 9);
  const auto x = batch(small(Variant::light), 2, 10);
  EXPECT_NE(light.predict(x), heavy.predict(x));
  EXPECT_GT(heavy.params().scalar_count(), light.params().scalar_count());
}

TEST(Model, EvalForwardIsDeterministic) {
  const auto c = small(Variant::heavy);
  auto model = Model<float>::build(c, 11);
  const auto x = batch(c, 3, 12);
  EXPECT_EQ(model.predict(x), model.predict(x));
}

TEST(Model, InputShapeChecked) {
  const auto c = small(Variant::light);
  auto model = Model<float>::build(c, 0);
  EXPECT_THROW(model.predict(Tensor<float>(Shape{1, 3, c.frames, 24})), ShapeError);
  EXPECT_THROW(model.predict(Tensor<float>(Shape{1, 3, c.frames + 1, 25})), ShapeError);
}

TEST(Model, NoPoolingKeepsFullGraph) {
  auto c = small(Variant::light);
  c.pool_locations.clear();
  auto model = Model<float>::build(c, 0);
  EXPECT_EQ(model.node_trajectory(), (std::vector<std::size_t>{25, 25, 25, 25}));
  EXPECT_EQ(model.predict(batch(c, 1, 1)).shape(), (Shape{1, 8}));
}

TEST(ModelConfig, Validation) {
  auto c = small(Variant::light);
  c.pool_locations = {1, 4};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(Variant::light);
  c.pool_locations = {2, 2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(Variant::light);
  c.temporal_kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(Variant::heavy);
  c.fusion_weight = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(Variant::light);
  c.channels = {18, 32, 32};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_variant("medium"), ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
  auto c = small(Variant::heavy, "uwa15");
  c.pool_locations = {1, 3};
  c.pooling.sigma = Normalizer::sigmoid;
  c.fusion_mode = FusionMode::concat;
  c.fusion_weight = 0.25;
  const auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.pool_locations, c.pool_locations);
  EXPECT_EQ(back.skeleton.topology.node_count, 15u);
  EXPECT_THROW(ModelConfig::from_json("{"), ConfigError);
}

TEST(Flops, TotalIsSumOfItemsAndStages) {
  const auto r = count_flops(small(Variant::heavy));
  std::uint64_t items = 0;
  for (const auto& i : r.items) items += i.macs;
  EXPECT_EQ(r.total(), items);
  std::uint64_t stages = 0;
  for (const auto& s : r.stage_names()) stages += r.stage_total(s);
  EXPECT_EQ(r.total(), stages);
}

TEST(Flops, MatchesRecordedMultiplyAccumulates) {
  for (auto v : {Variant::light, Variant::heavy}) {
    const auto c = small(v);
    EXPECT_EQ(count_flops(c).total(), recorded_macs(c)) << to_string(v);
  }
  auto c = small(Variant::light, "uwa15");
  c.pool_locations = {2};
  EXPECT_EQ(count_flops(c).total(), recorded_macs(c));
}

TEST(Flops, DoublingFramesDoublesEveryItem) {
  auto c = small(Variant::heavy);
  c.frames = 32;
  const auto a = count_flops(c);
  c.frames = 64;
  const auto b = count_flops(c);
  ASSERT_EQ(a.items.size(), b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    if (a.items[i].stage == "head") continue;  // acts on globally pooled features
    EXPECT_EQ(2 * a.items[i].macs, b.items[i].macs) << a.items[i].stage << " " << a.items[i].op;
  }
  for (const auto& s : a.stage_names()) {
    if (s != "head") EXPECT_EQ(2 * a.stage_total(s), b.stage_total(s)) << s;
  }
}

TEST(Flops, LinearInBatch) {
  const auto c = small(Variant::light);
  EXPECT_EQ(count_flops(c, 4).total(), 4 * count_flops(c, 1).total());
}

TEST(Flops, PoolingReducesCost) {
  ModelConfig light;
  light.classes = 60;
  ModelConfig control = light;
  control.pool_locations.clear();
  const auto l = count_flops(light).total();
  const auto n = count_flops(control).total();
  EXPECT_LT(l, n);
  EXPECT_LE(static_cast<double>(l), 0.45 * static_cast<double>(n));

  ModelConfig heavy = light;
  heavy.variant = Variant::heavy;
  EXPECT_GT(count_flops(heavy).total(), l);
}

TEST(Flops, RemovingAPoolingLocationNeverHelps) {
  for (auto v : {Variant::light, Variant::heavy}) {
    ModelConfig full;
    full.variant = v;
    const auto base = count_flops(full).total();
    for (std::size_t drop = 1; drop <= 3; ++drop) {
      auto c = full;
      c.pool_locations.erase(std::find(c.pool_locations.begin(), c.pool_locations.end(), drop));
      EXPECT_GE(count_flops(c).total(), base) << to_string(v) << " without " << drop;
    }
  }
}

TEST(Checkpoint, RoundTripPredictsIdentically) {
  const auto c = small(Variant::heavy);
  auto model = Model<float>::build(c, 21);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(model, path);
  auto loaded = load_checkpoint<float>(path);
  EXPECT_TRUE(loaded.params() == model.params());
  const auto x = batch(c, 2, 22);
  EXPECT_EQ(loaded.predict(x), model.predict(x));
  EXPECT_EQ(read_checkpoint_config(path).to_json(), c.to_json());
  EXPECT_EQ(checkpoint_scalar_bytes(path), 4u);
  EXPECT_THROW(load_checkpoint<double>(path), IoError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, DoublePrecision) {
  const auto c = small(Variant::light);
  auto model = Model<double>::build(c, 23);
  const auto path = temp_path("double.ckpt");
  save_checkpoint(model, path);
  EXPECT_EQ(checkpoint_scalar_bytes(path), 8u);
  EXPECT_TRUE(load_checkpoint<double>(path).params() == model.params());
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesRejected) {
  EXPECT_THROW(load_checkpoint<float>(temp_path("missing.ckpt")), IoError);
  const auto path = temp_path("garbage.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint<float>(path), IoError);

  auto model = Model<float>::build(small(Variant::light), 1);
  save_checkpoint(model, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  EXPECT_THROW(load_checkpoint<float>(path), IoError);
  std::filesystem::remove(path);
}

TEST(Model, FromParametersChecksNames) {
  const auto c = small(Variant::light);
  auto params = Model<float>::build(c, 1).params();
  EXPECT_NO_THROW(Model<float>::from_parameters(c, params));
  auto heavy = small(Variant::heavy);
  EXPECT_THROW(Model<float>::from_parameters(heavy, params), ConfigError);
}

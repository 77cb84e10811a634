#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "igpn/data.hpp"
#include "igpn/gradcheck.hpp"
#include "igpn/model.hpp"
#include "igpn/pooling.hpp"
#include "igpn/train.hpp"

using namespace igpn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// gradient suite ---------------------------------------------------------------

Outcome gradient_suite() {
  const auto start = Clock::now();
  GradCheckOptions opt;  // 10 seeds, tolerance 1e-4, 64-bit
  double worst = 0.0;
  std::string worst_name, failed;
  std::size_t cases = 0, min_seeds = opt.seeds;
  for (const auto& r : run_gradient_suite(opt)) {
    ++cases;
    min_seeds = std::min(min_seeds, r.seeds);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    if (!r.passed) failed += " " + r.name;
  }
  const double secs = seconds_since(start);
  const auto names = gradient_suite_names();
  bool composites = true;
  for (const char* c : {"correlation_tanh", "spatial_pool", "cross_fusion_block", "information_supplement",
                        "classifier_head", "cross_entropy"}) {
    composites = composites && std::find(names.begin(), names.end(), c) != names.end();
  }
  Outcome o;
  o.pass = failed.empty() && composites && min_seeds >= 10 && secs < 120.0;
  o.detail = fmt("%zu cases, >= %zu seeds each, worst %.2e (%s), %.1fs", cases, min_seeds, worst, worst_name.c_str(),
                 secs);
  if (!failed.empty()) o.detail += "; over tolerance:" + failed;
  return o;
}

// pooling oracle ----------------------------------------------------------------

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Tensor<double> pool_loops(const Tensor<double>& x, const Tensor<double>& r, const Tensor<double>& p) {
  const std::size_t B = x.extent(0), C = x.extent(1), T = x.extent(2), N = x.extent(3), M = p.extent(1);
  Tensor<double> out(Shape{B, C, T, M});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < M; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < N; ++i) acc += x.at({b, c, t, i}) * (1.0 + r.at({b, t, i})) * p.at({i, j});
          out.at({b, c, t, j}) = acc;
        }
      }
    }
  }
  return out;
}

double pool_error(const Tensor<double>& x, const Tensor<double>& r, const Tensor<double>& p) {
  Record<double> rec;
  const auto got = spatial_pool(rec.leaf(x), rec.leaf(r), rec.leaf(p)).value();
  const auto want = pool_loops(x, r, p);
  double err = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got[i] - want[i]));
  return err;
}

Outcome pooling_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    Tensor<double> p(Shape{n, m});
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    for (std::size_t j = 0; j < m; ++j) p.at({j, j}) = 1.0;
    for (std::size_t i = m; i < n; ++i) p.at({i, pick(rng)}) = 1.0;
    std::bernoulli_distribution overlap(0.25);
    for (std::size_t i = 0; i < n; ++i) {
      if (overlap(rng)) p.at({i, pick(rng)}) = 1.0;
    }
    auto r = random_tensor({2, 3, n}, rng);
    for (auto& v : r.data()) v = std::tanh(2.0 * v);
    worst = std::max(worst, pool_error(random_tensor({2, 3, 3, n}, rng), r, p));
  }
  const auto p = build_assignment(builtin_skeleton("ntu25").partition.stages[0]).p;
  double memberships = 0.0;
  for (std::size_t j = 0; j < p.extent(1); ++j) memberships += p.at({20, j});
  auto r = random_tensor({2, 4, 25}, rng);
  for (auto& v : r.data()) v = std::tanh(v);
  const double ntu = pool_error(random_tensor({2, 5, 4, 25}, rng), r, p);
  Outcome o;
  o.pass = worst <= 1e-9 && ntu <= 1e-9 && memberships > 1.0;
  o.detail = fmt("200 random N<=6 max err %.1e, ntu25 stage 1 err %.1e, joint 21 in %.0f regions", worst, ntu,
                 memberships);
  return o;
}

// structure --------------------------------------------------------------------

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "->" : "") + std::to_string(v[i]);
  return s;
}

Outcome structure_rules() {
  bool ok = true;
  std::string detail;
  const std::vector<std::pair<std::string, std::vector<std::size_t>>> expected{{"ntu25", {25, 10, 5, 2}},
                                                                                {"uwa15", {15, 10, 5, 2}}};
  for (const auto& [name, trajectory] : expected) {
    for (auto v : {Variant::light, Variant::heavy}) {
      ModelConfig c;
      c.variant = v;
      c.skeleton = builtin_skeleton(name);
      c.channels = {16, 32, 32};
      c.ism.embed_channels = 8;
      c.classes = 4;
      c.frames = 16;
      const auto got = Model<float>::build(c, 0).node_trajectory();
      ok = ok && got == trajectory;
      if (v == Variant::light) detail += (detail.empty() ? "" : ", ") + name + " " + join(got);
    }
    const auto h = build_hierarchy(builtin_skeleton(name));
    for (const auto& level : h.levels) {
      const auto& a = level.normalized;
      for (std::size_t i = 0; i < level.nodes(); ++i) {
        ok = ok && a.at({i, i}) > 0.0;
        for (std::size_t j = 0; j < level.nodes(); ++j) ok = ok && a.at({i, j}) == a.at({j, i});
      }
    }
  }
  detail += ok ? "; adjacencies symmetric, positive diagonal" : "; mismatch";
  return {ok, detail};
}

// FLOPs -------------------------------------------------------------------------

Outcome flops_trend() {
  bool ok = true;
  double worst = 0.0;
  std::size_t configs = 0;
  std::string headline;
  for (const char* skeleton : {"ntu25", "uwa15"}) {
    for (std::size_t frames : {32, 64, 128}) {
      for (std::size_t classes : {8, 60}) {
        ModelConfig light;
        light.skeleton = builtin_skeleton(skeleton);
        light.frames = frames;
        light.classes = classes;
        auto control = light;
        control.pool_locations.clear();
        auto heavy = light;
        heavy.variant = Variant::heavy;
        const double l = static_cast<double>(count_flops(light).total());
        const double n = static_cast<double>(count_flops(control).total());
        const double h = static_cast<double>(count_flops(heavy).total());
        worst = std::max(worst, l / n);
        ok = ok && l <= 0.45 * n && h > l;
        ++configs;
        if (std::string(skeleton) == "ntu25" && frames == 64 && classes == 60) {
          headline = fmt("ntu25 T=64: light %.3f G, control %.3f G, heavy %.3f G", l / 1e9, n / 1e9, h / 1e9);
        }
      }
    }
  }
  return {ok, fmt("%zu configs, worst light/control %.3f, heavy > light everywhere: %s; ", configs, worst,
                  ok ? "yes" : "no") +
                  headline};
}

// schedule ----------------------------------------------------------------------

Outcome schedule() {
  TrainConfig t;  // defaults: warmup 5, base 0.1, decay at 35 and 55
  const std::vector<std::pair<std::size_t, double>> points{{0, 0.02}, {4, 0.1}, {34, 0.1}, {35, 0.01}, {55, 0.001}};
  bool ok = true;
  std::string detail;
  for (const auto& [epoch, want] : points) {
    const double got = lr_at(epoch, t);
    ok = ok && std::abs(got - want) <= 1e-12 * want;
    detail += fmt("%s%zu:%g", detail.empty() ? "" : " ", epoch, got);
  }
  return {ok, detail};
}

// training ----------------------------------------------------------------------

struct DeskData {
  Dataset train, test;
};

DeskData desk_data() {
  SynthSpec s;
  s.classes = 8;
  s.per_class = 16;
  s.frames = 64;
  s.seed = 11;
  DeskData d{synth_generate(s), {}};
  s.per_class = 8;
  s.seed = 12;
  s.split = "test";
  d.test = synth_generate(s);
  return d;
}

ModelConfig desk_model() {
  ModelConfig c;
  c.classes = 8;
  c.channels = {32, 64, 64};
  c.ism.embed_channels = 16;
  return c;
}

TrainConfig desk_schedule(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.base_lr = 0.0125;
  t.decay_steps = {epochs * 6 / 10, epochs * 85 / 100};
  t.seed = 3;
  return t;
}

struct RunResult {
  ParameterSet<float> params;
  std::vector<EpochMetrics> metrics;
  ScoreFile train_scores, test_scores;
  double seconds = 0.0;
};

RunResult train_run(const ModelConfig& c, const TrainConfig& t, const DeskData& d) {
  const auto start = Clock::now();
  auto model = Model<float>::build(c, 5);
  RunResult r;
  r.metrics = train_loop(model, d.train, &d.test, t);
  r.train_scores = evaluate(model, d.train);
  r.test_scores = evaluate(model, d.test);
  r.seconds = seconds_since(start);
  r.params = model.params();
  return r;
}

bool same_metrics(const std::vector<EpochMetrics>& a, const std::vector<EpochMetrics>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].train_loss != b[i].train_loss || a[i].train_acc != b[i].train_acc || a[i].eval_acc != b[i].eval_acc) {
      return false;
    }
  }
  return true;
}

Outcome learnability(const DeskData& d) {
  const auto c = desk_model();
  const auto t = desk_schedule(40);
  const auto first = train_run(c, t, d);
  const auto second = train_run(c, t, d);
  const double train_acc = first.train_scores.accuracy(), test_acc = first.test_scores.accuracy();
  const bool bitwise = first.params == second.params && same_metrics(first.metrics, second.metrics) &&
                       first.test_scores.scores == second.test_scores.scores;
  Outcome o;
  o.pass = train_acc >= 0.95 && test_acc >= 0.80 && first.seconds < 600.0 && bitwise;
  o.detail = fmt("light, %zu epochs: train %.3f, test %.3f, %.0fs per run, rerun bitwise identical: %s", t.epochs,
                 train_acc, test_acc, first.seconds, bitwise ? "yes" : "no");
  return o;
}

Outcome ablations(const DeskData& d) {
  const auto t = desk_schedule(80);
  auto no_residual = desk_model();
  no_residual.pooling.residual = false;
  auto no_ism = desk_model();
  no_ism.ism.enabled = false;
  const auto a = train_run(no_residual, t, d);
  const auto b = train_run(no_ism, t, d);
  Outcome o;
  o.pass = a.train_scores.accuracy() >= 0.90 && b.train_scores.accuracy() >= 0.90;
  o.detail = fmt("%zu epochs: no pooling residual train %.3f (test %.3f), no ISM train %.3f (test %.3f)", t.epochs,
                 a.train_scores.accuracy(), a.test_scores.accuracy(), b.train_scores.accuracy(),
                 b.test_scores.accuracy());
  return o;
}

// fusion ------------------------------------------------------------------------

ScoreFile stream_scores(const DeskData& d, InputStream stream) {
  const auto train = apply_stream(d.train, stream);
  const auto test = apply_stream(d.test, stream);
  ModelConfig c;
  c.classes = 8;
  c.channels = {16, 32, 32};
  c.ism.embed_channels = 8;
  TrainConfig t;
  t.epochs = 8;
  t.warmup_epochs = 2;
  t.base_lr = 0.0125;
  t.decay_steps = {6};
  t.seed = 3;
  auto model = Model<float>::build(c, 5);
  train_loop(model, train, nullptr, t);
  return evaluate(model, test);
}

Outcome fusion(const DeskData& d) {
  const auto dir = fs::temp_directory_path() / "igpn_acceptance_fusion";
  fs::create_directories(dir);
  const auto joint = stream_scores(d, InputStream::joint);
  const auto motion = stream_scores(d, InputStream::motion);
  write_scores(joint, (dir / "joint.csv").string());
  write_scores(motion, (dir / "motion.csv").string());
  const auto j = read_scores((dir / "joint.csv").string());
  const auto m = read_scores((dir / "motion.csv").string());

  const bool single = fuse_scores({j}, {1.0}).accuracy == j.accuracy();
  const auto base = fuse_scores({j, m}, {1.0, 1.0});
  bool invariant = true;
  for (const auto& w : std::vector<std::vector<double>>{{3.0, 3.0}, {0.01, 0.01}, {2.5, 2.5}}) {
    const auto scaled = fuse_scores({j, m}, w);
    invariant = invariant && scaled.accuracy == base.accuracy;
    for (std::size_t i = 0; i < base.fused.scores.size(); ++i) {
      invariant = invariant && argmax(scaled.fused.scores[i]) == argmax(base.fused.scores[i]);
    }
  }
  const auto skewed = fuse_scores({j, m}, {1.0, 2.0});
  const auto skewed_scaled = fuse_scores({j, m}, {4.0, 8.0});
  invariant = invariant && skewed.accuracy == skewed_scaled.accuracy;

  const auto fused_path = (dir / "fused.csv").string();
  write_scores(base.fused, fused_path);
  const auto back = read_scores(fused_path);
  const bool written = back.ids == j.ids && back.scores.size() == d.test.samples.size();
  fs::remove_all(dir);

  Outcome o;
  o.pass = single && invariant && written;
  o.detail = fmt("single-file weight 1 %s, rescaling invariant %s; joint %.3f + motion %.3f -> fused %.3f on %zu samples",
                 single ? "exact" : "differs", invariant ? "yes" : "no", j.accuracy(), m.accuracy(), base.accuracy,
                 back.ids.size());
  return o;
}

}  // namespace

int main() {
  tune_allocator();
  int failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  };
  report("gradient suite", gradient_suite);
  report("pooling oracle", pooling_oracle);
  report("structure rules", structure_rules);
  report("flops trend", flops_trend);
  report("schedule", schedule);
  const auto data = desk_data();
  report("learnability", [&] { return learnability(data); });
  report("ablations", [&] { return ablations(data); });
  report("fusion", [&] { return fusion(data); });
  return failures == 0 ? 0 : 1;
}

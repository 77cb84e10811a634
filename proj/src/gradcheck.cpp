#include "igpn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "igpn/blocks.hpp"
#include "igpn/gcn.hpp"
#include "igpn/ops.hpp"
#include "igpn/params.hpp"
#include "igpn/pooling.hpp"
#include "igpn/skeleton.hpp"

namespace igpn {

double relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  if (analytic.shape() != numeric.shape()) {
    throw ShapeError("relative_error shape mismatch " + to_string(analytic.shape()) + " vs " +
                     to_string(numeric.shape()));
  }
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

namespace {

using Rng = std::mt19937_64;
using V = Var<double>;

struct Built {
  V output;
  std::vector<V> wrt;
};

// Params are owned by the harness so running moments outlive the build.
using Builder = std::function<Built(Record<double>&, ParameterSet<double>&, Rng&)>;

struct Case {
  std::string name;
  Builder build;
};

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Keeps relu inputs away from the kink.
Tensor<double> off_zero(Shape shape, Rng& rng) {
  auto t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data()) v += v < 0 ? -0.1 : 0.1;
  return t;
}

V leaf(Record<double>& rec, Shape shape, Rng& rng) { return rec.leaf(random_tensor(std::move(shape), rng)); }

// Small tree: 0-1-2, 1-3, 0-4-5, pooled into three overlapping regions.
SkeletonSpec tiny_skeleton() {
  SkeletonSpec spec;
  spec.topology.name = "tiny6";
  spec.topology.node_count = 6;
  spec.topology.edges = {{0, 1}, {1, 2}, {1, 3}, {0, 4}, {4, 5}};
  spec.topology.parents = {std::nullopt, 0, 1, 1, 0, 4};
  PartitionStage stage;
  stage.input_nodes = 6;
  stage.regions = {{{0, 1, 4}, 0}, {{1, 2, 3}, 1}, {{4, 5}, 2}};
  spec.partition.stages = {stage};
  return spec;
}

struct TinyGraph {
  AdjacencyMatrix fine;
  AssignmentMatrix assignment;
  AdjacencyMatrix coarse;
};

const TinyGraph& tiny_graph() {
  static const TinyGraph g = [] {
    const auto spec = tiny_skeleton();
    TinyGraph out;
    out.fine = normalized_adjacency(spec.topology);
    out.assignment = build_assignment(spec.partition.stages[0]);
    out.coarse = coarsen_adjacency(out.fine, out.assignment);
    return out;
  }();
  return g;
}

Built with_params(const ForwardContext<double>& ctx, V output, std::vector<V> extra = {}) {
  Built b{output, std::move(extra)};
  for (const auto& [name, v] : ctx.leaves()) b.wrt.push_back(v);
  return b;
}

std::vector<std::size_t> random_labels(std::size_t batch, std::size_t classes, Rng& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, classes - 1);
  std::vector<std::size_t> labels(batch);
  for (auto& l : labels) l = dist(rng);
  return labels;
}

Case unary(std::string name, V (*op)(V), bool kink = false) {
  return {std::move(name), [op, kink](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
            auto x = kink ? rec.leaf(off_zero({3, 4}, rng)) : leaf(rec, {3, 4}, rng);
            return Built{op(x), {x}};
          }};
}

Case binary(std::string name, V (*op)(V, V)) {
  return {std::move(name), [op](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
            auto a = leaf(rec, {2, 3, 4}, rng);
            auto b = leaf(rec, {2, 3, 4}, rng);
            return Built{op(a, b), {a, b}};
          }};
}

Case correlation_case(std::string name, Normalizer sigma) {
  return {std::move(name), [sigma](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
            auto x = leaf(rec, {2, 4, 3, 5}, rng);
            auto phi = leaf(rec, {2, 4}, rng);
            auto psi = leaf(rec, {2, 4}, rng);
            return Built{correlation(x, phi, psi, sigma), {x, phi, psi}};
          }};
}

Case spatial_pool_case(std::string name, bool residual) {
  return {std::move(name), [residual](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
            const auto& g = tiny_graph();
            auto x = leaf(rec, {2, 3, 4, 6}, rng);
            auto field = leaf(rec, {2, 4, 6}, rng);
            auto p = rec.constant(g.assignment.p);
            return Built{spatial_pool(x, field, p, residual), {x, field}};
          }};
}

Case cross_fusion_case(std::string name, FusionMode mode, bool residual) {
  return {std::move(name), [mode, residual](Record<double>& rec, ParameterSet<double>& params, Rng& rng) {
            const auto& g = tiny_graph();
            CrossFusionConfig cfg;
            cfg.in_channels = 4;
            cfg.out_channels = 8;
            cfg.temporal_kernel = 3;
            cfg.pooling.reduction = 2;
            cfg.pooling.residual = residual;
            cfg.weight = 0.3;
            cfg.mode = mode;
            CrossFusionBlock<double> block("cfb", cfg, g.assignment);
            block.init(params, rng);
            ForwardContext<double> ctx(rec, params, Mode::train);
            auto x = leaf(rec, {2, 4, 5, 6}, rng);
            auto y = block.forward(ctx, x, ctx.constant(g.fine.normalized), ctx.constant(g.coarse.normalized));
            return with_params(ctx, y, {x});
          }};
}

std::vector<Case> suite() {
  std::vector<Case> cases;
  cases.push_back({"matmul", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto a = leaf(rec, {4, 3}, rng);
                     auto b = leaf(rec, {3, 5}, rng);
                     return Built{matmul(a, b), {a, b}};
                   }});
  cases.push_back({"batched_matmul", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto a = leaf(rec, {3, 4, 2}, rng);
                     auto b = leaf(rec, {3, 2, 5}, rng);
                     return Built{batched_matmul(a, b), {a, b}};
                   }});
  cases.push_back({"batched_matmul_shared", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto a = leaf(rec, {4, 2}, rng);
                     auto b = leaf(rec, {3, 2, 5}, rng);
                     auto c = leaf(rec, {5, 3}, rng);
                     return Built{batched_matmul(batched_matmul(a, b), c), {a, b, c}};
                   }});
  cases.push_back(binary("add", &add<double>));
  cases.push_back(binary("sub", &sub<double>));
  cases.push_back(binary("mul", &mul<double>));
  cases.push_back({"scale", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {3, 4}, rng);
                     return Built{scale(x, -1.7), {x}};
                   }});
  cases.push_back(unary("tanh", &tanh<double>));
  cases.push_back(unary("sigmoid", &sigmoid<double>));
  cases.push_back(unary("relu", &relu<double>, true));
  cases.push_back(unary("softmax", &softmax<double>));
  cases.push_back({"sum", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {2, 3, 4}, rng);
                     return Built{sum(x, {0, 2}), {x}};
                   }});
  cases.push_back({"mean", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {2, 3, 4}, rng);
                     return Built{mean(x, {1}), {x}};
                   }});
  for (std::size_t stride : {1, 2}) {
    cases.push_back({"temporal_conv_s" + std::to_string(stride),
                     [stride](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                       auto x = leaf(rec, {2, 3, 7, 4}, rng);
                       auto w = leaf(rec, {4, 3, 5}, rng);
                       return Built{temporal_conv(x, w, stride), {x, w}};
                     }});
  }
  cases.push_back({"frame_pair_mean", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {2, 3, 5, 4}, rng);
                     return Built{frame_pair_mean(x), {x}};
                   }});
  cases.push_back({"concat_channels", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto a = leaf(rec, {2, 3, 4}, rng);
                     auto b = leaf(rec, {2, 2, 4}, rng);
                     return Built{concat_channels(a, b), {a, b}};
                   }});
  cases.push_back({"reshape", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {2, 3, 4}, rng);
                     return Built{reshape(x, {6, 4}), {x}};
                   }});
  cases.push_back({"permute", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {2, 3, 4}, rng);
                     return Built{permute(x, {2, 0, 1}), {x}};
                   }});
  cases.push_back({"expand", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {2, 1, 4}, rng);
                     return Built{expand(x, 1, 3), {x}};
                   }});
  cases.push_back({"channel_affine", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {2, 3, 4, 2}, rng);
                     auto g = leaf(rec, {3}, rng);
                     auto b = leaf(rec, {3}, rng);
                     return Built{channel_affine(x, g, b), {x, g, b}};
                   }});
  cases.push_back({"channel_bias", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {2, 3, 4}, rng);
                     auto b = leaf(rec, {3}, rng);
                     return Built{channel_bias(x, b), {x, b}};
                   }});
  cases.push_back({"channel_standardize", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto x = leaf(rec, {3, 2, 4, 3}, rng);
                     return Built{channel_standardize(x, 1e-5), {x}};
                   }});
  cases.push_back({"cross_entropy_op", [](Record<double>& rec, ParameterSet<double>&, Rng& rng) {
                     auto logits = rec.leaf(random_tensor({4, 5}, rng, -2.0, 2.0));
                     const auto labels = random_labels(4, 5, rng);
                     return Built{cross_entropy(logits, std::span<const std::size_t>(labels)), {logits}};
                   }});

  // composites
  cases.push_back(correlation_case("correlation_tanh", Normalizer::tanh));
  cases.push_back(correlation_case("correlation_sigmoid", Normalizer::sigmoid));
  cases.push_back(correlation_case("correlation_softmax", Normalizer::softmax));
  cases.push_back(spatial_pool_case("spatial_pool", true));
  cases.push_back(spatial_pool_case("spatial_pool_no_residual", false));
  cases.push_back({"structure_pooling", [](Record<double>& rec, ParameterSet<double>& params, Rng& rng) {
                     const auto& g = tiny_graph();
                     PoolingConfig cfg;
                     cfg.reduction = 2;
                     StructurePooling<double> pool("pool", 4, cfg, g.assignment);
                     pool.init(params, rng);
                     ForwardContext<double> ctx(rec, params, Mode::train);
                     auto x = leaf(rec, {2, 4, 5, 6}, rng);
                     return with_params(ctx, pool.forward(ctx, x), {x});
                   }});
  cases.push_back({"gcn_block", [](Record<double>& rec, ParameterSet<double>& params, Rng& rng) {
                     const auto& g = tiny_graph();
                     GcnBlock<double> block("gcn", {4, 4, 3, 1});
                     block.init(params, rng);
                     ForwardContext<double> ctx(rec, params, Mode::train);
                     auto x = leaf(rec, {2, 4, 5, 6}, rng);
                     return with_params(ctx, block.forward(ctx, x, ctx.constant(g.fine.normalized)), {x});
                   }});
  cases.push_back(cross_fusion_case("cross_fusion_block", FusionMode::sum, true));
  cases.push_back(cross_fusion_case("cross_fusion_block_concat", FusionMode::concat, true));
  cases.push_back(cross_fusion_case("cross_fusion_block_no_residual", FusionMode::sum, false));
  cases.push_back({"information_supplement", [](Record<double>& rec, ParameterSet<double>& params, Rng& rng) {
                     const auto spec = tiny_skeleton();
                     IsmConfig cfg;
                     cfg.embed_channels = 3;
                     InformationSupplement<double> ism("ism", cfg, spec.topology);
                     ism.init(params, rng);
                     ForwardContext<double> ctx(rec, params, Mode::train);
                     const auto positions = random_tensor({2, 3, 4, 6}, rng);
                     auto y = ism.forward(ctx, positions, ctx.constant(tiny_graph().fine.normalized));
                     return with_params(ctx, y);
                   }});
  cases.push_back({"classifier_head", [](Record<double>& rec, ParameterSet<double>& params, Rng& rng) {
                     ClassifierHead<double> head("head", 4, 3);
                     head.init(params, rng);
                     ForwardContext<double> ctx(rec, params, Mode::train);
                     auto x = leaf(rec, {2, 4, 3, 5}, rng);
                     return with_params(ctx, head.forward(ctx, x), {x});
                   }});
  cases.push_back({"cross_entropy", [](Record<double>& rec, ParameterSet<double>& params, Rng& rng) {
                     ClassifierHead<double> head("head", 4, 5);
                     head.init(params, rng);
                     ForwardContext<double> ctx(rec, params, Mode::train);
                     auto x = leaf(rec, {3, 4, 2, 6}, rng);
                     const auto labels = random_labels(3, 5, rng);
                     auto loss = cross_entropy(head.forward(ctx, x), std::span<const std::size_t>(labels));
                     return with_params(ctx, loss, {x});
                   }});
  return cases;
}

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : name) h = (h ^ ch) * 1099511628211ull;
  return h;
}

GradCheckResult check_case(const Case& c, const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = c.name;
  for (std::size_t s = 0; s < options.seeds; ++s) {
    Rng rng(options.base_seed * 1000003u + s * 7919u + name_hash(c.name));
    Record<double> rec;
    ParameterSet<double> params;
    Built built = c.build(rec, params, rng);

    // project onto a random direction so every output element contributes
    V loss = built.output;
    if (!built.output.shape().empty()) {
      auto dir = rec.constant(random_tensor(built.output.shape(), rng));
      loss = sum_all(mul(built.output, dir));
    }
    const auto grads = evaluate_with_gradients(rec, loss, std::span<const V>(built.wrt));

    for (const V& x : built.wrt) {
      const Tensor<double> base = x.value();
      std::vector<std::size_t> coords(base.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
      if (coords.size() > options.max_coordinates) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(options.max_coordinates);
      }
      const Tensor<double>& full = grads[x];
      Tensor<double> analytic(Shape{coords.size()}), numeric(Shape{coords.size()});
      for (std::size_t q = 0; q < coords.size(); ++q) {
        const std::size_t i = coords[q];
        auto eval_at = [&](double delta) {
          Tensor<double> moved = base;
          moved[i] += delta;
          return rec.replay({{x.id, std::move(moved)}})[loss.id].item();
        };
        numeric[q] = (eval_at(options.eps) - eval_at(-options.eps)) / (2.0 * options.eps);
        analytic[q] = full[i];
      }
      result.coordinates += coords.size();
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric));
    }
    ++result.seeds;
  }
  result.passed = result.seeds >= options.seeds && result.max_rel_error <= options.tolerance;
  return result;
}

}  // namespace

std::vector<std::string> gradient_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : suite()) names.push_back(c.name);
  return names;
}

std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options, const std::vector<std::string>& only,
                                                const std::function<void(const GradCheckResult&)>& on_result) {
  std::vector<GradCheckResult> results;
  for (const auto& c : suite()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    results.push_back(check_case(c, options));
    if (on_result) on_result(results.back());
  }
  return results;
}

}  // namespace igpn

#include "igpn/model.hpp"

#include <algorithm>

namespace igpn {

std::uint64_t FlopsReport::total() const {
  std::uint64_t sum = 0;
  for (const auto& item : items) sum += item.macs;
  return sum;
}

std::uint64_t FlopsReport::stage_total(const std::string& stage) const {
  std::uint64_t sum = 0;
  for (const auto& item : items) {
    if (item.stage == stage) sum += item.macs;
  }
  return sum;
}

std::vector<std::string> FlopsReport::stage_names() const {
  std::vector<std::string> names;
  for (const auto& item : items) {
    if (std::find(names.begin(), names.end(), item.stage) == names.end()) names.push_back(item.stage);
  }
  return names;
}

namespace {

using u64 = std::uint64_t;

// Each count mirrors the matmul / batched matmul / temporal conv calls made by
// the corresponding forward code.
u64 graph_conv_macs(u64 b, u64 cin, u64 cout, u64 t, u64 n) { return b * cout * cin * t * n + b * cout * t * n * n; }

u64 gcn_block_macs(u64 b, u64 cin, u64 cout, u64 k, u64 t, u64 n) {
  return graph_conv_macs(b, cin, cout, t, n) + b * cout * cout * k * t * n;
}

u64 pooling_macs(u64 b, u64 c, u64 r, u64 t, u64 n, u64 m) {
  const u64 proj = c / r;
  return 2 * b * proj * c * t * n + b * t * n * n * proj + b * c * t * n * m;
}

}  // namespace

FlopsReport count_flops(const ModelConfig& config, std::size_t batch) {
  config.validate();
  FlopsReport report;
  const u64 b = batch;
  const u64 k = config.temporal_kernel;
  const u64 r = config.pooling.reduction;
  const auto plan = plan_stages(config);
  const u64 t0 = config.frames, n0 = config.skeleton.topology.node_count;

  const u64 width = config.ism.enabled ? config.ism.embed_channels : config.ism.output_channels();
  const std::vector<std::string> streams =
      config.ism.enabled ? std::vector<std::string>{"vec", "pos"} : std::vector<std::string>{"pos"};
  for (const auto& stream : streams) {
    u64 in = 3;
    for (std::size_t l = 0; l < config.ism.layers; ++l) {
      report.items.push_back({"ism", stream + ".embed" + std::to_string(l), graph_conv_macs(b, in, width, t0, n0)});
      in = width;
    }
  }

  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& st = plan[i];
    const std::string stage = "stage" + std::to_string(i + 1);
    const u64 cin = st.in_channels, cout = st.out_channels;
    const u64 t = st.frames_in, n = st.nodes_in, tp = st.frames_out, m = st.nodes_out;
    if (config.variant == Variant::heavy) {
      report.items.push_back({stage, "coarse.pool", pooling_macs(b, cin, r, t, n, m)});
      report.items.push_back({stage, "coarse.gcn", gcn_block_macs(b, cin, cout, k, tp, m)});
      report.items.push_back({stage, "fine.gcn", gcn_block_macs(b, cin, cout, k, t, n)});
      report.items.push_back({stage, "fine.pool", pooling_macs(b, cout, r, t, n, m)});
      if (config.fusion_mode == FusionMode::concat) {
        const bool last = i + 1 == plan.size();
        report.items.push_back({stage, "fuse", last ? b * 2 * cout * cout : b * cout * 2 * cout * tp * m});
      }
    } else {
      report.items.push_back({stage, "pool", pooling_macs(b, cin, r, t, n, m)});
      report.items.push_back({stage, "gcn", gcn_block_macs(b, cin, cout, k, tp, m)});
    }
  }
  report.items.push_back({"head", "classifier", b * config.channels.back() * config.classes});
  return report;
}

}  // namespace igpn

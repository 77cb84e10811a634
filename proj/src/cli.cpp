#include "igpn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "igpn/data.hpp"
#include "igpn/errors.hpp"
#include "igpn/gradcheck.hpp"
#include "igpn/model.hpp"
#include "igpn/train.hpp"

namespace igpn::cli {

namespace fs = std::filesystem;

namespace {

struct ModelFlags {
  std::string variant = "light";
  std::vector<std::size_t> channels{64, 128, 256};
  std::vector<std::size_t> pool_locations{1, 2, 3};
  bool no_pooling = false;
  std::size_t reduction = 4;
  std::string sigma = "tanh";
  bool no_residual = false;
  bool no_latent_norm = false;
  double fusion_weight = 0.5;
  std::string fusion_mode = "sum";
  std::size_t temporal_kernel = 5;
  bool no_ism = false;
  std::size_t embed = 32;
  std::size_t ism_layers = 2;
};

void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--variant", f.variant, "light or heavy")->capture_default_str()->check(CLI::IsMember({"light", "heavy"}));
  app->add_option("--channels", f.channels, "output channels of the three stages")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  app->add_option("--pool-locations", f.pool_locations, "1-based stages that pool")->delimiter(',')->capture_default_str();
  app->add_flag("--no-pooling", f.no_pooling, "disable every pooling stage (control model)");
  app->add_option("--reduction", f.reduction, "projection reduction r of phi/psi")->capture_default_str();
  app->add_option("--sigma", f.sigma, "correlation normalizer")
      ->capture_default_str()
      ->check(CLI::IsMember({"tanh", "sigmoid", "softmax"}));
  app->add_flag("--no-residual", f.no_residual, "pool with x R P instead of x (1 + R) P");
  app->add_flag("--no-latent-norm", f.no_latent_norm, "feed raw features to phi/psi");
  app->add_option("--fusion-weight", f.fusion_weight, "share of the coarse branch in heavy stages")->capture_default_str();
  app->add_option("--fusion-mode", f.fusion_mode, "sum or concat")->capture_default_str()->check(CLI::IsMember({"sum", "concat"}));
  app->add_option("--temporal-kernel", f.temporal_kernel, "odd temporal kernel size")->capture_default_str();
  app->add_flag("--no-ism", f.no_ism, "position stream only");
  app->add_option("--embed", f.embed, "embedding channels per input stream")->capture_default_str();
  app->add_option("--ism-layers", f.ism_layers, "graph convolutions per input stream")->capture_default_str();
}

ModelConfig model_config(const ModelFlags& f, SkeletonSpec skeleton, std::size_t classes, std::size_t frames) {
  if (f.channels.size() != 3) throw ConfigError("--channels takes exactly three values");
  ModelConfig c;
  c.variant = parse_variant(f.variant);
  c.skeleton = std::move(skeleton);
  std::copy(f.channels.begin(), f.channels.end(), c.channels.begin());
  c.pool_locations = f.no_pooling ? std::vector<std::size_t>{} : f.pool_locations;
  c.pooling.reduction = f.reduction;
  c.pooling.sigma = parse_normalizer(f.sigma);
  c.pooling.residual = !f.no_residual;
  c.pooling.latent_norm = !f.no_latent_norm;
  c.fusion_weight = f.fusion_weight;
  c.fusion_mode = parse_fusion_mode(f.fusion_mode);
  c.temporal_kernel = f.temporal_kernel;
  c.classes = classes;
  c.frames = frames;
  c.ism.enabled = !f.no_ism;
  c.ism.embed_channels = f.embed;
  c.ism.layers = f.ism_layers;
  c.validate();
  return c;
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) throw IoError("cannot write " + path);
}

// Resolved flags of one subcommand, defaults included; usable again as --config.
void echo_config(const CLI::App* sub, const std::string& path) {
  write_text(path, "[" + sub->get_name() + "]\n" + sub->config_to_str(true, false));
}

std::string file_echo(const std::string& out) { return out + ".config.toml"; }

Dataset load_stream(const std::string& path, const std::string& stream, std::size_t frames) {
  auto ds = load_dataset(path);
  if (frames != 0 && !ds.samples.empty() && ds.samples.front().frame_count() != frames) ds = resample_dataset(ds, frames);
  return apply_stream(ds, parse_input_stream(stream));
}

std::size_t dataset_frames(const Dataset& ds) {
  if (ds.samples.empty()) throw DataError("dataset has no samples");
  const std::size_t t = ds.samples.front().frame_count();
  for (const auto& s : ds.samples) {
    if (s.frame_count() != t) throw DataError("samples differ in frame count; pass --frames to resample");
  }
  return t;
}

// synth ---------------------------------------------------------------------

struct SynthFlags {
  std::size_t classes = 8;
  std::size_t per_class = 16;
  std::size_t frames = 64;
  std::string topology = "ntu25";
  double noise = 0.01;
  std::uint64_t seed = 0;
  std::string split = "train";
  std::string out;
};

int cmd_synth(const CLI::App* sub, const SynthFlags& f) {
  SynthSpec spec;
  spec.classes = f.classes;
  spec.per_class = f.per_class;
  spec.frames = f.frames;
  spec.skeleton = load_topology(f.topology);
  spec.noise = f.noise;
  spec.seed = f.seed;
  spec.split = f.split;
  const auto ds = synth_generate(spec);
  ensure_parent(f.out);
  save_dataset(ds, f.out);
  echo_config(sub, file_echo(f.out));
  std::printf("wrote %zu samples (%zu classes, %zu frames, %s) to %s\n", ds.samples.size(), ds.classes(), f.frames,
              ds.topology.c_str(), f.out.c_str());
  return kExitOk;
}

// train ---------------------------------------------------------------------

struct TrainFlags {
  std::string data;
  std::string eval;
  std::string stream = "joint";
  std::size_t frames = 0;
  std::string precision = "f32";
  TrainConfig train;
  std::size_t eval_batch = 16;
  std::string out;
};

template <typename T>
int train_as(const CLI::App* sub, const ModelFlags& mf, const TrainFlags& f) {
  const auto train = load_stream(f.data, f.stream, f.frames);
  std::optional<Dataset> eval;
  if (!f.eval.empty()) eval = load_stream(f.eval, f.stream, f.frames);
  const auto config = model_config(mf, train.resolve_skeleton(), train.classes(), dataset_frames(train));
  f.train.validate();

  ensure_dir(f.out);
  echo_config(sub, (fs::path(f.out) / "config.toml").string());
  write_text((fs::path(f.out) / "model.json").string(), config.to_json() + "\n");

  auto model = Model<T>::build(config, f.train.seed);
  std::printf("training %s, %zu parameters, %zu samples\n", to_string(config.variant).c_str(),
              model.params().scalar_count(), train.samples.size());
  const auto start = std::chrono::steady_clock::now();
  const auto metrics = train_loop(model, train, eval ? &*eval : nullptr, f.train, [&](const EpochMetrics& m) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("epoch %3zu  lr %.6g  loss %.5f  train_acc %.4f", m.epoch, m.lr, m.train_loss, m.train_acc);
    if (!std::isnan(m.eval_acc)) std::printf("  eval_acc %.4f", m.eval_acc);
    std::printf("  (%.1fs)\n", secs);
    std::fflush(stdout);
  });
  write_metrics(metrics, (fs::path(f.out) / "metrics.csv").string());
  save_checkpoint(model, (fs::path(f.out) / "model.ckpt").string());
  if (eval) {
    const auto scores = evaluate(model, *eval, f.eval_batch);
    write_scores(scores, (fs::path(f.out) / "scores.csv").string());
    std::printf("eval accuracy %.4f\n", scores.accuracy());
  }
  return kExitOk;
}

// eval / dump-attention -------------------------------------------------------

struct EvalFlags {
  std::string model;
  std::string data;
  std::string stream = "joint";
  std::size_t batch = 16;
  std::string out;
};

template <typename T>
int eval_as(const CLI::App* sub, const EvalFlags& f) {
  auto model = load_checkpoint<T>(f.model);
  const auto ds = load_stream(f.data, f.stream, model.config().frames);
  const auto scores = evaluate(model, ds, f.batch);
  ensure_parent(f.out);
  write_scores(scores, f.out);
  echo_config(sub, file_echo(f.out));
  std::printf("accuracy %.4f on %zu samples\n", scores.accuracy(), scores.ids.size());
  return kExitOk;
}

struct DumpFlags {
  std::string model;
  std::string data;
  std::string stream = "joint";
  std::vector<std::string> ids;
  std::size_t limit = 0;
  std::size_t batch = 16;
  std::string out;
};

template <typename T>
int dump_as(const CLI::App* sub, const DumpFlags& f) {
  auto model = load_checkpoint<T>(f.model);
  const auto ds = load_stream(f.data, f.stream, model.config().frames);
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (!f.ids.empty() && std::find(f.ids.begin(), f.ids.end(), ds.samples[i].id) == f.ids.end()) continue;
    chosen.push_back(i);
    if (f.limit && chosen.size() == f.limit) break;
  }
  if (chosen.empty()) throw DataError("no samples selected for dump-attention");

  ensure_parent(f.out);
  std::FILE* out = std::fopen(f.out.c_str(), "w");
  if (!out) throw IoError("cannot write " + f.out);
  std::fprintf(out, "id,stage,branch,frame,node,value\n");
  std::size_t rows = 0;
  for (std::size_t start = 0; start < chosen.size(); start += f.batch) {
    const std::vector<std::size_t> idx(chosen.begin() + start, chosen.begin() + std::min(chosen.size(), start + f.batch));
    Record<T> record;
    ForwardContext<T> ctx(record, model.params(), Mode::eval);
    ctx.set_field_observer([&](const std::string& site, const Tensor<T>& field) {
      // site is stageK.pool or stageK.{coarse,fine}.pool
      const auto dot = site.find('.');
      const std::string stage = site.substr(0, dot);
      std::string branch = site.substr(dot + 1);
      if (const auto d = branch.find('.'); d != std::string::npos) branch = branch.substr(0, d);
      const std::size_t frames = field.extent(1), nodes = field.extent(2);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t n = 0; n < nodes; ++n) {
            std::fprintf(out, "%s,%s,%s,%zu,%zu,%.9g\n", ds.samples[idx[b]].id.c_str(), stage.c_str(), branch.c_str(), t,
                         n, static_cast<double>(field[(b * frames + t) * nodes + n]));
            ++rows;
          }
        }
      }
    });
    model.forward(ctx, assemble_batch<T>(ds, idx));
  }
  const bool ok = std::fclose(out) == 0;
  if (!ok) throw IoError("failed writing " + f.out);
  echo_config(sub, file_echo(f.out));
  std::printf("wrote %zu correlation values for %zu samples to %s\n", rows, chosen.size(), f.out.c_str());
  return kExitOk;
}

template <typename Fn>
int by_precision(const std::string& checkpoint, Fn&& fn) {
  const auto bytes = checkpoint_scalar_bytes(checkpoint);
  if (bytes == sizeof(float)) return fn(float{});
  if (bytes == sizeof(double)) return fn(double{});
  throw IoError("checkpoint " + checkpoint + " has unsupported scalar width " + std::to_string(bytes));
}

// flops -----------------------------------------------------------------------

struct FlopsFlags {
  std::string topology = "ntu25";
  std::size_t frames = 64;
  std::size_t classes = 60;
  std::size_t batch = 1;
  std::string out;
};

void print_report(const FlopsReport& report) {
  std::printf("%-8s %-14s %16s\n", "stage", "op", "macs");
  for (const auto& item : report.items) {
    std::printf("%-8s %-14s %16llu\n", item.stage.c_str(), item.op.c_str(), static_cast<unsigned long long>(item.macs));
  }
}

int cmd_flops(const CLI::App* sub, const ModelFlags& mf, const FlopsFlags& f) {
  const auto config = model_config(mf, load_topology(f.topology), f.classes, f.frames);
  const auto report = count_flops(config, f.batch);
  print_report(report);
  const double total = static_cast<double>(report.total());
  std::printf("total %llu MACs (%.4f G)\n", static_cast<unsigned long long>(report.total()), total / 1e9);
  if (!config.pool_locations.empty()) {
    auto control = config;
    control.pool_locations.clear();
    const double base = static_cast<double>(count_flops(control, f.batch).total());
    std::printf("no-pooling control %.0f MACs (%.4f G)\n", base, base / 1e9);
    std::printf("ratio %.4f (reduction %.1f%%)\n", total / base, 100.0 * (1.0 - total / base));
  }
  if (!f.out.empty()) {
    std::ostringstream csv;
    csv << "stage,op,macs\n";
    for (const auto& item : report.items) csv << item.stage << ',' << item.op << ',' << item.macs << '\n';
    csv << "total,," << report.total() << '\n';
    write_text(f.out, csv.str());
    echo_config(sub, file_echo(f.out));
  }
  return kExitOk;
}

// gradcheck ---------------------------------------------------------------------

struct GradFlags {
  std::string precision = "f64";
  GradCheckOptions options;
  std::vector<std::string> only;
  std::string out;
};

int cmd_gradcheck(const CLI::App* sub, const GradFlags& f) {
  if (f.precision != "f64") throw ConfigError("gradient checks run in 64-bit precision only (--precision f64)");
  const auto known = gradient_suite_names();
  for (const auto& name : f.only) {
    if (std::find(known.begin(), known.end(), name) == known.end()) throw ConfigError("unknown gradient case '" + name + "'");
  }
  std::ostringstream csv;
  csv << "case,seeds,coordinates,max_rel_error,passed\n";
  std::size_t failed = 0;
  run_gradient_suite(f.options, f.only, [&](const GradCheckResult& r) {
    std::printf("%-32s seeds %2zu  max rel err %.3e  %s\n", r.name.c_str(), r.seeds, r.max_rel_error, r.passed ? "ok" : "FAILED");
    std::fflush(stdout);
    char err[32];
    std::snprintf(err, sizeof err, "%.6e", r.max_rel_error);
    csv << r.name << ',' << r.seeds << ',' << r.coordinates << ',' << err << ',' << (r.passed ? 1 : 0) << '\n';
    if (!r.passed) ++failed;
  });
  if (!f.out.empty()) {
    write_text(f.out, csv.str());
    echo_config(sub, file_echo(f.out));
  }
  if (failed) {
    std::fprintf(stderr, "igpn: %zu gradient case(s) exceed tolerance %.1e\n", failed, f.options.tolerance);
    return kExitNumeric;
  }
  std::printf("all gradient cases within %.1e\n", f.options.tolerance);
  return kExitOk;
}

// fuse ------------------------------------------------------------------------

struct FuseFlags {
  std::vector<std::string> scores;
  std::vector<double> weights;
  std::string out;
};

int cmd_fuse(const CLI::App* sub, const FuseFlags& f) {
  std::vector<ScoreFile> files;
  for (const auto& path : f.scores) files.push_back(read_scores(path));
  auto weights = f.weights;
  if (weights.empty()) weights.assign(files.size(), 1.0);
  const auto result = fuse_scores(files, weights);
  ensure_parent(f.out);
  write_scores(result.fused, f.out);
  echo_config(sub, file_echo(f.out));
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::printf("%s  weight %g  accuracy %.4f\n", f.scores[i].c_str(), weights[i], files[i].accuracy());
  }
  std::printf("fused accuracy %.4f\n", result.accuracy);
  return kExitOk;
}

// export-topology ---------------------------------------------------------------

struct TopologyFlags {
  std::string topology = "ntu25";
  std::string out;
};

int cmd_export_topology(const CLI::App* sub, const TopologyFlags& f) {
  const auto spec = load_topology(f.topology);
  write_text(f.out, serialize_skeleton(spec) + "\n");
  echo_config(sub, file_echo(f.out));
  const auto graphs = build_hierarchy(spec);
  std::printf("%s: nodes", spec.topology.name.c_str());
  for (const auto& level : graphs.levels) std::printf(" %zu", level.nodes());
  std::printf(", wrote %s\n", f.out.c_str());
  return kExitOk;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"IGPN: skeleton action recognition with region-aware graph pooling", "igpn"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // one file can hold settings for several subcommands, each under [name]
  app.set_config("--config", "", "TOML file with a [subcommand] section; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();

  SynthFlags synth;
  auto* s_synth = app.add_subcommand("synth", "generate a labelled synthetic skeleton dataset");
  s_synth->add_option("--classes", synth.classes, "number of classes")->capture_default_str();
  s_synth->add_option("--per-class", synth.per_class, "samples per class")->capture_default_str();
  s_synth->add_option("--frames", synth.frames, "frames per sample")->capture_default_str();
  s_synth->add_option("--topology", synth.topology, "built-in skeleton name or skeleton JSON path")->capture_default_str();
  s_synth->add_option("--noise", synth.noise, "coordinate noise std-dev (m)")->capture_default_str();
  s_synth->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  s_synth->add_option("--split", synth.split, "split tag stored in the file and the ids")->capture_default_str();
  s_synth->add_option("--out", synth.out, "dataset JSON to write")->required();

  ModelFlags train_model;
  TrainFlags train;
  train.train.decay_steps = {35, 55};
  auto* s_train = app.add_subcommand("train", "train a model; writes model.ckpt, metrics.csv and config.toml to --out");
  s_train->add_option("--data", train.data, "training dataset JSON")->required();
  s_train->add_option("--eval", train.eval, "evaluation dataset JSON, scored every epoch");
  s_train->add_option("--stream", train.stream, "input stream")->capture_default_str()->check(CLI::IsMember({"joint", "bone", "motion"}));
  s_train->add_option("--frames", train.frames, "resample sequences to this many frames (0 keeps them)")->capture_default_str();
  s_train->add_option("--precision", train.precision, "f32 or f64")->capture_default_str()->check(CLI::IsMember({"f32", "f64"}));
  add_model_flags(s_train, train_model);
  s_train->add_option("--epochs", train.train.epochs, "training epochs")->capture_default_str();
  s_train->add_option("--warmup", train.train.warmup_epochs, "linear warmup epochs")->capture_default_str();
  s_train->add_option("--lr", train.train.base_lr, "base learning rate")->capture_default_str();
  s_train->add_option("--decay-steps", train.train.decay_steps, "epochs at which lr is multiplied by the decay factor")
      ->delimiter(',')
      ->capture_default_str();
  s_train->add_option("--decay-factor", train.train.decay_factor, "step decay factor")->capture_default_str();
  s_train->add_option("--momentum", train.train.momentum, "Nesterov momentum")->capture_default_str();
  s_train->add_option("--weight-decay", train.train.weight_decay, "L2 on weights (norm parameters exempt)")->capture_default_str();
  s_train->add_option("--batch", train.train.batch_size, "mini-batch size")->capture_default_str();
  s_train->add_option("--rotate", train.train.rotate_bound, "random rotation bound per axis (rad), 0 disables")->capture_default_str();
  s_train->add_option("--seed", train.train.seed, "initialization, shuffling and augmentation seed")->capture_default_str();
  s_train->add_option("--out", train.out, "output directory")->required();

  EvalFlags eval;
  auto* s_eval = app.add_subcommand("eval", "score a dataset with a checkpoint; writes a score CSV");
  s_eval->add_option("--model", eval.model, "checkpoint")->required();
  s_eval->add_option("--data", eval.data, "dataset JSON")->required();
  s_eval->add_option("--stream", eval.stream, "input stream the model was trained on")->capture_default_str()->check(CLI::IsMember({"joint", "bone", "motion"}));
  s_eval->add_option("--batch", eval.batch, "batch size")->capture_default_str();
  s_eval->add_option("--out", eval.out, "score CSV to write")->required();

  ModelFlags flops_model;
  FlopsFlags flops;
  auto* s_flops = app.add_subcommand("flops", "count multiply-accumulates per stage");
  add_model_flags(s_flops, flops_model);
  s_flops->add_option("--topology", flops.topology, "built-in skeleton name or skeleton JSON path")->capture_default_str();
  s_flops->add_option("--frames", flops.frames, "input frames")->capture_default_str();
  s_flops->add_option("--classes", flops.classes, "number of classes")->capture_default_str();
  s_flops->add_option("--batch", flops.batch, "batch size")->capture_default_str();
  s_flops->add_option("--out", flops.out, "optional CSV report");

  GradFlags grad;
  auto* s_grad = app.add_subcommand("gradcheck", "compare reverse accumulation with finite differences");
  s_grad->add_option("--precision", grad.precision, "scalar precision; only f64 is supported")->capture_default_str();
  s_grad->add_option("--seeds", grad.options.seeds, "random instances per case")->capture_default_str();
  s_grad->add_option("--tolerance", grad.options.tolerance, "maximum relative error")->capture_default_str();
  s_grad->add_option("--eps", grad.options.eps, "central difference step")->capture_default_str();
  s_grad->add_option("--seed", grad.options.base_seed, "base seed")->capture_default_str();
  s_grad->add_option("--only", grad.only, "restrict to these cases")->delimiter(',');
  s_grad->add_option("--out", grad.out, "optional CSV report");

  FuseFlags fuse;
  auto* s_fuse = app.add_subcommand("fuse", "weighted sum of per-stream score files");
  s_fuse->add_option("--scores", fuse.scores, "score CSVs, same sample ids")->required()->delimiter(',');
  s_fuse->add_option("--weights", fuse.weights, "one weight per score file (default all 1)")->delimiter(',');
  s_fuse->add_option("--out", fuse.out, "fused score CSV")->required();

  TopologyFlags topo;
  auto* s_topo = app.add_subcommand("export-topology", "write a skeleton with its pooling rules as JSON");
  s_topo->add_option("--topology", topo.topology, "built-in skeleton name or skeleton JSON path")->capture_default_str();
  s_topo->add_option("--out", topo.out, "JSON file to write")->required();

  DumpFlags dump;
  auto* s_dump = app.add_subcommand("dump-attention", "write per-stage correlation fields R as CSV");
  s_dump->add_option("--model", dump.model, "checkpoint")->required();
  s_dump->add_option("--data", dump.data, "dataset JSON")->required();
  s_dump->add_option("--stream", dump.stream, "input stream the model was trained on")->capture_default_str()->check(CLI::IsMember({"joint", "bone", "motion"}));
  s_dump->add_option("--ids", dump.ids, "sample ids to dump (default all)")->delimiter(',');
  s_dump->add_option("--limit", dump.limit, "dump at most this many samples (0 = no limit)")->capture_default_str();
  s_dump->add_option("--batch", dump.batch, "batch size")->capture_default_str();
  s_dump->add_option("--out", dump.out, "CSV with id,stage,branch,frame,node,value")->required();

  // CLI11 expects reversed arguments
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    std::cerr << "igpn: i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CLI::ParseError& e) {
    std::cerr << "igpn: error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (s_synth->parsed()) return cmd_synth(s_synth, synth);
  if (s_train->parsed()) {
    return train.precision == "f64" ? train_as<double>(s_train, train_model, train)
                                    : train_as<float>(s_train, train_model, train);
  }
  if (s_eval->parsed()) return by_precision(eval.model, [&](auto t) { return eval_as<decltype(t)>(s_eval, eval); });
  if (s_flops->parsed()) return cmd_flops(s_flops, flops_model, flops);
  if (s_grad->parsed()) return cmd_gradcheck(s_grad, grad);
  if (s_fuse->parsed()) return cmd_fuse(s_fuse, fuse);
  if (s_topo->parsed()) return cmd_export_topology(s_topo, topo);
  if (s_dump->parsed()) return by_precision(dump.model, [&](auto t) { return dump_as<decltype(t)>(s_dump, dump); });
  return kExitUsage;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const NumericError& e) {
    std::cerr << "igpn: numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "igpn: i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    std::cerr << "igpn: data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "igpn: i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "igpn: invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "igpn: error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace igpn::cli

// textdeform: command-line front end for data generation, training,
// inference, evaluation and ablations.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "textdeform/ablation.hpp"
#include "textdeform/config.hpp"
#include "textdeform/errors.hpp"
#include "textdeform/fields.hpp"
#include "textdeform/inference.hpp"
#include "textdeform/synthdata.hpp"
#include "textdeform/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace textdeform;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct CommonOptions {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  std::optional<double> th_d;
  std::optional<double> th_s;
  std::optional<int> n_control;
  std::optional<std::string> encoder;
  std::optional<std::string> prior_mask;
  std::optional<int> stride;
  bool verbose = false;
};

void add_common(CLI::App* app, CommonOptions& o, bool needs_out = true) {
  app->add_option("--config", o.config, "JSON config file");
  auto* out = app->add_option("--out", o.out, "Output directory");
  if (needs_out) out->required();
  app->add_option("--set", o.overrides, "Override as section.key=value (repeatable)");
  app->add_option("--seed", o.seed, "Seed for every random stream");
  app->add_option("--iters", o.iters, "Deformation iterations");
  app->add_option("--th-d", o.th_d, "Distance-field threshold for proposals");
  app->add_option("--th-s", o.th_s, "Proposal confidence threshold");
  app->add_option("--n-control", o.n_control, "Control points per contour");
  app->add_option("--encoder", o.encoder, "fc, rnn, circular, gcn or adaptive");
  app->add_option("--prior-mask", o.prior_mask, "Prior channels fed to deformation, e.g. cls+dis+dir");
  app->add_option("--stride", o.stride, "Feature output stride (1, 2 or 4)");
  app->add_flag("-v,--verbose", o.verbose, "Debug logging");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  for (const auto& s : o.overrides) apply_override(cfg, s);
  if (o.seed) {
    cfg.train.seed = *o.seed;
    cfg.synth.seed = *o.seed;
  }
  if (o.iters) cfg.iterations = *o.iters;
  if (o.th_d) cfg.proposals.th_d = *o.th_d;
  if (o.th_s) cfg.proposals.th_s = *o.th_s;
  if (o.n_control) cfg.proposals.n_control = *o.n_control;
  if (o.encoder) cfg.model.deform.encoder = parse_encoder(*o.encoder);
  if (o.prior_mask) cfg.model.deform.prior_mask = parse_prior_mask(*o.prior_mask);
  if (o.stride) cfg.model.backbone.output_stride = *o.stride;
  cfg.sync();
  cfg.validate();
  return cfg;
}

void snapshot(const RunConfig& cfg, const fs::path& out, const std::string& command) {
  json j = cfg;
  j["command"] = command;
  write_text_atomic(out / "config.resolved.json", j.dump(2) + "\n");
}

// Applies inference-time flags to a model whose architecture came from a checkpoint.
RunConfig with_checkpoint_model(RunConfig cfg, const CommonOptions& o, const Model<float>& model) {
  cfg.model = model.config();
  if (o.prior_mask) cfg.model.deform.prior_mask = parse_prior_mask(*o.prior_mask);
  cfg.sync();
  return cfg;
}

int cmd_synth(const CommonOptions& o, int train, int val) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  fs::create_directories(out);
  write_synthetic_dataset(cfg.synth, train, val, out);
  snapshot(cfg, out, "synth");
  spdlog::info("wrote {} train and {} val samples to {}", train, val, out.string());
  return kOk;
}

int cmd_gtgen(const CommonOptions& o, const std::string& annotation) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  fs::create_directories(out);
  const AnnotatedSample s = load_annotation(annotation);
  const GroundTruthBundle gt = compute_ground_truth(s);
  const int h = s.image.height(), w = s.image.width();
  std::string blob;
  blob.reserve(static_cast<std::size_t>(h) * w * 5 * sizeof(float));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v[5] = {gt.cls.at(y, x), gt.dist.at(y, x), gt.dir.at(y, x, 0), gt.dir.at(y, x, 1),
                          gt.segment_size.at(y, x)};
      blob.append(reinterpret_cast<const char*>(v), sizeof v);
    }
  const std::string stem = fs::path(annotation).stem().string();
  write_text_atomic(out / (stem + ".gt.bin"), blob);
  json side = {{"data", stem + ".gt.bin"},
               {"dtype", "float32"},
               {"layout", "HWC"},
               {"height", h},
               {"width", w},
               {"channels", {"cls", "dist", "dir_x", "dir_y", "segment_size"}},
               {"scale", gt.scale},
               {"dropped", gt.dropped}};
  write_text_atomic(out / (stem + ".gt.json"), side.dump(1));
  snapshot(cfg, out, "gtgen");
  return kOk;
}

int cmd_train(const CommonOptions& o, const std::string& data, const std::string& resume, int checkpoint_every) {
  const RunConfig cfg = resolve(o);
  const fs::path out = o.out;
  fs::create_directories(out);
  snapshot(cfg, out, "train");
  const auto train = load_split(data, "train");
  const auto val = load_split(data, "val");
  if (train.empty()) throw DataError("no training samples in " + data);
  Model<float> model(cfg.model, cfg.train.seed);
  TrainerOptions topts = cfg.trainer_options();
  topts.diagnostics_dir = out / "diagnostics";
  Trainer trainer(model, topts);
  if (!resume.empty()) {
    trainer.load_checkpoint(resume);
    spdlog::info("resumed from {} at epoch {}", resume, trainer.next_epoch());
  }
  const auto result = run_training(trainer, train, val, out, checkpoint_every);
  if (!result.history.empty() && result.history.back().validated) {
    const auto& m = result.history.back().val;
    std::printf("final val P %.4f R %.4f F %.4f\n", m.precision, m.recall, m.f_measure);
  }
  return kOk;
}

std::vector<fs::path> collect_images(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.path().extension() == ".png") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

int cmd_infer(const CommonOptions& o, const std::string& checkpoint, const std::vector<std::string>& inputs,
              bool overlays) {
  const Model<float> model = load_model(checkpoint);
  const RunConfig cfg = with_checkpoint_model(resolve(o), o, model);
  const fs::path out = o.out;
  fs::create_directories(out);
  snapshot(cfg, out, "infer");
  int failures = 0;
  const InferenceConfig icfg = cfg.inference();
  Model<float> run_model(cfg.model, 0);
  copy_parameters(model, run_model, {""});
  for (const auto& path : collect_images(inputs)) {
    try {
      const GridMap image = load_png(path);
      const ImageDetections d = detect(run_model, image, icfg);
      const std::string stem = path.stem().string();
      write_text_atomic(out / (stem + ".det.json"), detections_json(fs::absolute(path).string(), d));
      if (overlays) {
        for (int k = 0; k < icfg.iterations; ++k)
          write_overlay(image, d, out / "overlays" / (stem + "_iter" + std::to_string(k + 1) + ".png"), k);
      }
    } catch (const DataError& e) {
      spdlog::error("{}: {}", path.string(), e.what());
      ++failures;
    }
  }
  return failures ? kData : kOk;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& data, const std::string& split) {
  const Model<float> model = load_model(checkpoint);
  const RunConfig cfg = with_checkpoint_model(resolve(o), o, model);
  const fs::path out = o.out;
  fs::create_directories(out);
  snapshot(cfg, out, "eval");
  Model<float> run_model(cfg.model, 0);
  copy_parameters(model, run_model, {""});
  const auto samples = load_split(data, split);
  if (samples.empty()) throw DataError("no '" + split + "' samples in " + data);
  const EvaluationReport r = evaluate_model(run_model, samples, cfg.inference(), cfg.eval);
  json j = {{"split", split},
            {"images", samples.size()},
            {"precision", r.final_metrics.precision},
            {"recall", r.final_metrics.recall},
            {"f_measure", r.final_metrics.f_measure},
            {"true_positives", r.final_metrics.counts.true_positives},
            {"detections", r.final_metrics.counts.detections},
            {"ground_truths", r.final_metrics.counts.ground_truths},
            {"mean_iou_per_iteration", r.mean_iou}};
  json per = json::array();
  for (const auto& m : r.per_iteration)
    per.push_back({{"precision", m.precision}, {"recall", m.recall}, {"f_measure", m.f_measure}});
  j["per_iteration"] = per;
  write_text_atomic(out / "metrics.json", j.dump(2) + "\n");
  std::printf("P %.4f R %.4f F %.4f\n", r.final_metrics.precision, r.final_metrics.recall, r.final_metrics.f_measure);
  return kOk;
}

int cmd_ablate(const CommonOptions& o, const std::string& checkpoint, const std::string& data,
               const std::vector<std::string>& axes, int deform_epochs, int full_epochs) {
  const Model<float> model = load_model(checkpoint);
  RunConfig cfg = resolve(o);
  cfg.model = model.config();
  cfg.sync();
  const fs::path out = o.out;
  fs::create_directories(out);
  snapshot(cfg, out, "ablate");
  AblationOptions opts;
  if (!axes.empty()) opts.axes = axes;
  opts.deform_epochs = deform_epochs;
  opts.full_epochs = full_epochs;
  const auto results = run_ablation(model, cfg, load_split(data, "train"), load_split(data, "val"), opts, out);
  write_text_atomic(out / "ablation.csv", ablation_csv(results));
  write_text_atomic(out / "ablation.md", ablation_markdown(results));
  std::cout << ablation_markdown(results);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arbitrary-shape text detection with adaptive boundary deformation"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  int n_train = 500, n_val = 100;
  add_common(synth, common);
  synth->add_option("--train", n_train, "Training samples");
  synth->add_option("--val", n_val, "Validation samples");

  auto* gtgen = app.add_subcommand("gtgen", "Write ground-truth fields for an annotation");
  std::string annotation;
  add_common(gtgen, common);
  gtgen->add_option("--annotation", annotation, "Annotation JSON")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  std::string data, resume;
  int checkpoint_every = 0;
  add_common(train, common);
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--resume", resume, "Checkpoint prefix to resume from");
  train->add_option("--checkpoint-every", checkpoint_every, "Keep a checkpoint every k epochs");

  auto* infer = app.add_subcommand("infer", "Detect text in images");
  std::string checkpoint;
  std::vector<std::string> inputs;
  bool overlays = false;
  add_common(infer, common);
  infer->add_option("--checkpoint", checkpoint, "Checkpoint prefix")->required();
  infer->add_option("images", inputs, "PNG files or directories")->required();
  infer->add_flag("--overlays", overlays, "Write per-iteration overlay PNGs");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  std::string split = "val";
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint prefix")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--split", split, "Split name");

  auto* ablate = app.add_subcommand("ablate", "Run ablation sweeps");
  std::vector<std::string> axes;
  int deform_epochs = 10, full_epochs = 10;
  add_common(ablate, common);
  ablate->add_option("--checkpoint", checkpoint, "Base checkpoint prefix")->required();
  ablate->add_option("--data", data, "Dataset directory")->required();
  ablate->add_option("--axes", axes, "encoder, prior, iterations, control_points, stride")->delimiter(',');
  ablate->add_option("--deform-epochs", deform_epochs, "Epochs per deformation-only cell");
  ablate->add_option("--full-epochs", full_epochs, "Epochs per fully retrained cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  spdlog::set_level(common.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*synth) return cmd_synth(common, n_train, n_val);
    if (*gtgen) return cmd_gtgen(common, annotation);
    if (*train) return cmd_train(common, data, resume, checkpoint_every);
    if (*infer) return cmd_infer(common, checkpoint, inputs, overlays);
    if (*eval) return cmd_eval(common, checkpoint, data, split);
    if (*ablate) return cmd_ablate(common, checkpoint, data, axes, deform_epochs, full_epochs);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kData;
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kOther;
  }
  return kOther;
}

#include "textdeform/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <optional>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "textdeform/errors.hpp"
#include "textdeform/inference.hpp"
#include "textdeform/trainer.hpp"

namespace fs = std::filesystem;

namespace textdeform {

std::vector<AblationCell> ablation_cells(const RunConfig& base, const std::vector<std::string>& axes) {
  std::vector<AblationCell> cells;
  auto cell = [&](const std::string& axis, const std::string& label, CellTraining training) {
    AblationCell c{axis, label, base.model, base.proposals, base.iterations, training};
    return c;
  };
  for (const auto& axis : axes) {
    if (axis == "encoder") {
      for (auto v : {EncoderVariant::fc, EncoderVariant::rnn, EncoderVariant::circular_conv, EncoderVariant::gcn,
                     EncoderVariant::adaptive}) {
        AblationCell c = cell(axis, to_string(v), CellTraining::deform_only);
        c.model.deform.encoder = v;
        cells.push_back(c);
      }
    } else if (axis == "prior") {
      for (unsigned mask : {unsigned(kPriorCls), unsigned(kPriorCls | kPriorDist), unsigned(kPriorAll)}) {
        AblationCell c = cell(axis, prior_mask_string(mask), CellTraining::deform_only);
        c.model.deform.prior_mask = mask;
        cells.push_back(c);
      }
    } else if (axis == "iterations") {
      for (int k = 1; k <= 3; ++k) {
        AblationCell c = cell(axis, "iter" + std::to_string(k), CellTraining::none);
        c.iterations = k;
        c.model.deform.iterations = k;
        cells.push_back(c);
      }
    } else if (axis == "control_points") {
      for (int n = 12; n <= 32; n += 4) {
        AblationCell c = cell(axis, "N" + std::to_string(n), CellTraining::deform_only);
        c.proposals.n_control = n;
        cells.push_back(c);
      }
    } else if (axis == "stride") {
      for (int s : {1, 2, 4}) {
        AblationCell c = cell(axis, "1/" + std::to_string(s), CellTraining::full);
        c.model.backbone.output_stride = s;
        cells.push_back(c);
      }
    } else {
      throw ConfigError("unknown ablation axis '" + axis + "'");
    }
  }
  return cells;
}

namespace {

// Cells with identical training setups share one result.
std::string cell_key(const AblationCell& c) {
  std::ostringstream s;
  s << static_cast<int>(c.training) << '|' << c.model.architecture_hash() << '|' << c.model.deform.prior_mask << '|'
    << c.proposals.n_control << '|' << c.iterations;
  return s.str();
}

}  // namespace

std::vector<AblationResult> run_ablation(const Model<float>& base_model, const RunConfig& cfg,
                                         const std::vector<AnnotatedSample>& train,
                                         const std::vector<AnnotatedSample>& val, const AblationOptions& opts,
                                         const fs::path& out_dir) {
  std::vector<AblationResult> results;
  std::map<std::string, AblationResult> done;
  std::map<int, FrozenFeatures> frozen_by_n;
  for (const AblationCell& cell : ablation_cells(cfg, opts.axes)) {
    const std::string key = cell_key(cell);
    if (auto it = done.find(key); it != done.end()) {
      AblationResult r = it->second;
      r.cell = cell;
      r.note = "shared with an identical cell";
      results.push_back(std::move(r));
      continue;
    }
    AblationResult r;
    r.cell = cell;
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = out_dir / (cell.axis + "_" + cell.label);
    try {
      RunConfig rc = cfg;
      rc.model = cell.model;
      rc.proposals = cell.proposals;
      rc.iterations = cell.iterations;
      InferenceConfig icfg = rc.inference();
      std::optional<Model<float>> model;
      if (cell.training == CellTraining::none) {
        model.emplace(cell.model, 0);
        copy_parameters(base_model, *model, {""});
      } else if (cell.training == CellTraining::deform_only) {
        rc.train.epochs = opts.deform_epochs;
        rc.train.freeze_shared = true;
        rc.train.augment = false;
        rc.sync();
        model.emplace(cell.model, cfg.train.seed + 17);
        copy_parameters(base_model, *model, {"backbone.", "head."});
        auto fit = frozen_by_n.find(cell.proposals.n_control);
        if (fit == frozen_by_n.end()) {
          frozen_by_n.clear();  // one cache at a time keeps memory bounded
          fit = frozen_by_n
                    .emplace(cell.proposals.n_control,
                             precompute_frozen(*model, train, cell.proposals, rc.train.max_train_proposals))
                    .first;
        }
        TrainerOptions topts = rc.trainer_options();
        topts.train.val_every = 0;
        topts.diagnostics_dir = dir;
        Trainer trainer(*model, topts);
        run_training(trainer, train, {}, dir, 0, &fit->second);
      } else {
        rc.train.epochs = opts.full_epochs;
        rc.sync();
        model.emplace(cell.model, cfg.train.seed);
        TrainerOptions topts = rc.trainer_options();
        topts.train.val_every = 0;
        topts.diagnostics_dir = dir;
        Trainer trainer(*model, topts);
        run_training(trainer, train, {}, dir);
      }
      const EvaluationReport rep = evaluate_model(*model, val, icfg, cfg.eval);
      r.present = true;
      r.metrics = rep.final_metrics;
      r.mean_iou = rep.mean_iou;
    } catch (const std::exception& e) {
      spdlog::error("ablation cell {}/{} failed: {}", cell.axis, cell.label, e.what());
      r.note = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("ablation {}/{}: F {:.4f} ({:.0f}s)", cell.axis, cell.label, r.metrics.f_measure, r.seconds);
    if (r.present) done.emplace(key, r);
    results.push_back(std::move(r));
  }
  return results;
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::ostringstream s;
  s.precision(6);
  s << "axis,cell,present,precision,recall,f_measure,mean_iou_final,seconds,note\n";
  for (const auto& r : results) {
    s << r.cell.axis << ',' << r.cell.label << ',' << (r.present ? 1 : 0) << ',';
    if (r.present) {
      s << r.metrics.precision << ',' << r.metrics.recall << ',' << r.metrics.f_measure << ','
        << (r.mean_iou.empty() ? 0.0 : r.mean_iou.back());
    } else {
      s << ",,,";
    }
    std::string note = r.note;
    for (char& c : note)
      if (c == ',' || c == '\n') c = ';';
    s << ',' << r.seconds << ',' << note << '\n';
  }
  return s.str();
}

std::string ablation_markdown(const std::vector<AblationResult>& results) {
  std::vector<std::string> axes;
  for (const auto& r : results)
    if (std::find(axes.begin(), axes.end(), r.cell.axis) == axes.end()) axes.push_back(r.cell.axis);
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(4);
  for (const auto& axis : axes) {
    std::vector<const AblationResult*> row;
    for (const auto& r : results)
      if (r.cell.axis == axis) row.push_back(&r);
    s << "### " << axis << "\n\n| metric |";
    for (auto* r : row) s << ' ' << r->cell.label << " |";
    s << "\n|---|";
    for (std::size_t i = 0; i < row.size(); ++i) s << "---|";
    s << '\n';
    auto line = [&](const char* name, auto get) {
      s << "| " << name << " |";
      for (auto* r : row) {
        if (r->present) {
          s << ' ' << get(*r) << " |";
        } else {
          s << " absent |";
        }
      }
      s << '\n';
    };
    line("Recall", [](const AblationResult& r) { return r.metrics.recall; });
    line("Precision", [](const AblationResult& r) { return r.metrics.precision; });
    line("F-measure", [](const AblationResult& r) { return r.metrics.f_measure; });
    line("Mean IoU", [](const AblationResult& r) { return r.mean_iou.empty() ? 0.0 : r.mean_iou.back(); });
    s << '\n';
  }
  return s.str();
}

}  // namespace textdeform

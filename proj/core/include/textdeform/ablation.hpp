#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "textdeform/config.hpp"
#include "textdeform/evaluation.hpp"
#include "textdeform/network.hpp"

namespace textdeform {

enum class CellTraining {
  none,         // evaluate the base model as is
  deform_only,  // reuse frozen backbone and head, retrain the deformation model
  full,         // retrain everything from scratch
};

struct AblationCell {
  std::string axis;
  std::string label;
  ModelConfig model;
  ProposalConfig proposals;
  int iterations = 3;
  CellTraining training = CellTraining::none;
};

struct AblationResult {
  AblationCell cell;
  bool present = false;
  DetectionMetrics metrics;
  std::vector<double> mean_iou;
  double seconds = 0.0;
  std::string note;
};

struct AblationOptions {
  /// Any of "encoder", "prior", "iterations", "control_points", "stride".
  std::vector<std::string> axes = {"encoder", "iterations", "control_points", "prior", "stride"};
  int deform_epochs = 10;
  int full_epochs = 10;
};

std::vector<AblationCell> ablation_cells(const RunConfig& base, const std::vector<std::string>& axes);

/// Trains or evaluates every cell. Failures leave the cell absent and the
/// run continues.
std::vector<AblationResult> run_ablation(const Model<float>& base_model, const RunConfig& cfg,
                                         const std::vector<AnnotatedSample>& train,
                                         const std::vector<AnnotatedSample>& val, const AblationOptions& opts,
                                         const std::filesystem::path& out_dir);

std::string ablation_csv(const std::vector<AblationResult>& results);
/// One markdown table per axis, cells as columns.
std::string ablation_markdown(const std::vector<AblationResult>& results);

}  // namespace textdeform

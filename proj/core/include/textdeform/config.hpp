#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textdeform/evaluation.hpp"
#include "textdeform/inference.hpp"
#include "textdeform/losses.hpp"
#include "textdeform/network.hpp"
#include "textdeform/proposals.hpp"
#include "textdeform/synthdata.hpp"
#include "textdeform/trainer.hpp"

namespace textdeform {

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);
void to_json(nlohmann::json& j, const AugmentParams& c);
void from_json(const nlohmann::json& j, AugmentParams& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const ProposalConfig& c);
void from_json(const nlohmann::json& j, ProposalConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// Every tunable of a run, grouped the way the config file is laid out.
struct RunConfig {
  SynthConfig synth;
  AugmentParams augment;
  ModelConfig model;
  ProposalConfig proposals;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
  int iterations = 3;

  void validate() const;
  /// Keeps the derived fields consistent: loss.eps = train.epochs and
  /// deform.iterations = iterations.
  void sync();
  InferenceConfig inference() const;
  TrainerOptions trainer_options() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Reads a JSON config; missing keys keep their defaults, unknown keys are errors.
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies "section.key=value" (value parsed as JSON, else taken as a string).
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace textdeform

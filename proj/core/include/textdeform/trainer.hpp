#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "textdeform/evaluation.hpp"
#include "textdeform/fields.hpp"
#include "textdeform/inference.hpp"
#include "textdeform/losses.hpp"
#include "textdeform/network.hpp"
#include "textdeform/proposals.hpp"
#include "textdeform/synthdata.hpp"

namespace textdeform {

struct TrainConfig {
  double lr = 1e-3;
  int batch = 8;
  int epochs = 60;
  double lr_decay = 0.9;
  int lr_decay_every = 50;
  std::uint64_t seed = 0;
  int warmup_epochs = -1;  // negative: 10% of epochs
  int crop_size = 128;
  bool augment = true;
  /// Trains only the deformation model; backbone and head stay fixed.
  bool freeze_shared = false;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  int val_every = 1;
  int max_train_proposals = 8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int resolved_warmup() const;
  void validate() const;
};

/// lr * decay^floor(epoch / decay_every).
double learning_rate(const TrainConfig& cfg, int epoch);

/// Ground truth of one training image at feature resolution.
struct SampleTargets {
  GridMap image;
  int stride = 1;
  GroundTruthBundle gt;                      // fields of the non-ignore instances
  std::vector<std::uint8_t> valid;           // pixels supervised by the pixel losses
  std::vector<std::optional<ControlPolygon>> gt_control;  // per instance, image coordinates
  std::vector<bool> usable;                  // instance contributes to the matching loss
};

SampleTargets make_targets(const AnnotatedSample& s, int stride, int n_control);

/// One deformation problem: a start contour (image coordinates) and the GT
/// instance it is supervised against.
struct DeformJob {
  ControlPolygon start;
  int target = -1;
  bool from_gt = false;
};

/// Proposals from the GT maps (GT region eroded by the distance threshold).
std::vector<DeformJob> gt_jobs(const SampleTargets& t, const ProposalConfig& cfg);
/// Predicted proposals assigned to the GT instance owning most of their
/// pixels, plus GT proposals for instances no prediction landed on.
std::vector<DeformJob> predicted_jobs(const FieldMaps& fields, const SampleTargets& t, const ProposalConfig& cfg,
                                      int max_jobs);

/// GT prior map (cls, dist, dir x, dir y) as a (4, H', W') tensor.
template <class T>
ad::Tensor<T> gt_prior_tensor(const SampleTargets& t);

template <class T>
struct LossTerms {
  ad::Var<T> cls, dist, dir, match;  // match invalid when there are no jobs
  ad::Var<T> total;
  LossParts values;
  double deform_weight = 0.0;
};

/// Composite objective for one image. `pixel_losses` false skips the cls,
/// dist and dir terms (frozen shared layers).
template <class T>
LossTerms<T> composite_loss(const Model<T>& model, Context<T>& ctx, const SharedOutputs<T>& shared,
                            const SampleTargets& targets, const std::vector<DeformJob>& jobs,
                            const ad::Var<T>& deform_priors, double epoch, const LossConfig& cfg,
                            bool pixel_losses = true);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double deform_weight = 0.0;
  LossParts loss;
  double total = 0.0;
  int samples = 0;
  int predicted_jobs = 0;
  int fallback_jobs = 0;
  bool warmup = false;
  bool validated = false;
  DetectionMetrics val;
  std::vector<double> val_iou;
  double seconds = 0.0;
};

/// Shared-layer outputs per training image, reused while those layers are frozen.
struct FrozenFeatures {
  std::vector<ad::Tensor<float>> features;
  std::vector<ad::Tensor<float>> priors;
  std::vector<SampleTargets> targets;
  std::vector<std::vector<DeformJob>> jobs;
};

FrozenFeatures precompute_frozen(const Model<float>& model, const std::vector<AnnotatedSample>& train,
                                 const ProposalConfig& pcfg, int max_jobs);

struct TrainerOptions {
  TrainConfig train;
  LossConfig loss;
  ProposalConfig proposals;
  AugmentParams augment;
  InferenceConfig inference;
  EvalConfig eval;
  std::filesystem::path diagnostics_dir = ".";
};

class Trainer {
 public:
  Trainer(Model<float>& model, TrainerOptions opts);

  /// Runs one epoch over `train` and validates on `val` when due.
  EpochRecord train_epoch(const std::vector<AnnotatedSample>& train, const std::vector<AnnotatedSample>& val,
                          const FrozenFeatures* frozen = nullptr);

  int next_epoch() const { return epoch_; }
  const TrainerOptions& options() const { return opts_; }
  Model<float>& model() { return model_; }

  void save_checkpoint(const std::filesystem::path& prefix) const;
  void load_checkpoint(const std::filesystem::path& prefix);

 private:
  void adam_step(int accumulated, double lr);
  void dump_nonfinite(const AnnotatedSample& s, const LossParts& parts, int epoch, int index) const;

  Model<float>& model_;
  TrainerOptions opts_;
  int epoch_ = 0;
  long adam_steps_ = 0;
  std::vector<ad::Tensor<float>> adam_m_, adam_v_;
};

/// Checkpoint files are <prefix>.json (manifest) and <prefix>.bin (data).
struct CheckpointInfo {
  ModelConfig model;
  int epoch = -1;
  std::uint64_t config_hash = 0;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& prefix);
/// Model constructed from the manifest's configuration with stored weights.
Model<float> load_model(const std::filesystem::path& prefix);

std::string epoch_csv_header(int iterations);
std::string epoch_csv_row(const EpochRecord& r, int iterations);

struct TrainRunResult {
  std::vector<EpochRecord> history;
  std::filesystem::path last_checkpoint;
};

/// Trains for the configured epochs, writing metrics.csv and checkpoints
/// (last and every `checkpoint_every` epochs) under out_dir.
TrainRunResult run_training(Trainer& trainer, const std::vector<AnnotatedSample>& train,
                            const std::vector<AnnotatedSample>& val, const std::filesystem::path& out_dir,
                            int checkpoint_every = 0, const FrozenFeatures* frozen = nullptr,
                            const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace textdeform

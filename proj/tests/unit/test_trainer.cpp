#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "textdeform/config.hpp"
#include "textdeform/trainer.hpp"

using namespace textdeform;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("textdeform_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.backbone.base_channels = 4;
  c.backbone.shared_dim = 8;
  c.backbone.fusion_levels = 3;
  c.head.hidden = 6;
  c.deform.rnn_hidden = 6;
  c.deform.gcn_width = 8;
  c.deform.gcn_layers = 2;
  c.deform.proj_width = 8;
  c.deform.decoder_widths = {16};
  return c;
}

TrainerOptions tiny_options() {
  TrainerOptions o;
  o.train.epochs = 4;
  o.train.batch = 2;
  o.train.crop_size = 64;
  o.train.val_every = 0;
  o.augment.output_size = 64;
  o.loss.eps = 4;
  return o;
}

std::vector<AnnotatedSample> tiny_data(int n) {
  SynthConfig cfg;
  cfg.image_size = 64;
  cfg.max_instances = 2;
  cfg.seed = 4;
  return generate(cfg, n);
}

AnnotatedSample two_boxes(bool second_ignored) {
  AnnotatedSample s{"t", GridMap(32, 32, 3, 0.5f), {}};
  s.instances.push_back({Polygon({{2, 2}, {14, 2}, {14, 10}, {2, 10}}), 0, false});
  s.instances.push_back({Polygon({{18, 18}, {30, 18}, {30, 28}, {18, 28}}), 1, second_ignored});
  return s;
}

}  // namespace

TEST(Schedule, StepDecayEveryFiftyEpochs) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 49), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 50), 0.9e-3);
  EXPECT_NEAR(learning_rate(cfg, 120), 0.81e-3, 1e-15);
}

TEST(Schedule, WarmupIsTenPercentRoundedUp) {
  TrainConfig cfg;
  cfg.epochs = 60;
  EXPECT_EQ(cfg.resolved_warmup(), 6);
  cfg.epochs = 5;
  EXPECT_EQ(cfg.resolved_warmup(), 1);
  cfg.warmup_epochs = 0;
  EXPECT_EQ(cfg.resolved_warmup(), 0);
  cfg.batch = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Targets, StrideScalesFieldsAndKeepsImageContours) {
  const auto t = make_targets(two_boxes(false), 2, 20);
  EXPECT_EQ(t.gt.cls.height(), 16);
  EXPECT_EQ(t.gt.cls.width(), 16);
  ASSERT_EQ(t.gt_control.size(), 2u);
  ASSERT_TRUE(t.gt_control[0].has_value());
  EXPECT_EQ(t.gt_control[0]->size(), 20);
  EXPECT_EQ((*t.gt_control[0])[0], (Point{2, 2}));
  EXPECT_THROW(make_targets(two_boxes(false), 3, 20), ShapeError);
}

TEST(Targets, IgnoreRegionsAreUnsupervised) {
  const auto t = make_targets(two_boxes(true), 1, 20);
  EXPECT_EQ(t.gt_control.size(), 1u);
  EXPECT_EQ(t.valid[22 * 32 + 22], 0);
  EXPECT_EQ(t.valid[5 * 32 + 5], 1);
  EXPECT_EQ(t.gt.cls.at(22, 22), 0.0f);
  const auto jobs = gt_jobs(t, {});
  ASSERT_EQ(jobs.size(), 1u);
  EXPECT_EQ(jobs[0].target, 0);
  EXPECT_TRUE(jobs[0].from_gt);
}

TEST(Targets, PredictedJobsFallBackToGt) {
  const auto t = make_targets(two_boxes(false), 1, 20);
  const FieldMaps empty{GridMap(32, 32, 1), GridMap(32, 32, 1), GridMap(32, 32, 2)};
  const auto jobs = predicted_jobs(empty, t, {}, 8);
  ASSERT_EQ(jobs.size(), 2u);
  for (const auto& j : jobs) EXPECT_TRUE(j.from_gt);
  const FieldMaps perfect{t.gt.cls, t.gt.dist, t.gt.dir};
  const auto pj = predicted_jobs(perfect, t, {}, 8);
  ASSERT_EQ(pj.size(), 2u);
  for (const auto& j : pj) EXPECT_FALSE(j.from_gt);
}

TEST(Checkpoint, RoundTripRestoresWeightsAndEpoch) {
  const auto dir = temp_dir("ckpt");
  const auto data = tiny_data(4);
  Model<float> model(tiny_model(), 1);
  Trainer trainer(model, tiny_options());
  trainer.train_epoch(data, {});
  trainer.save_checkpoint(dir / "m");
  EXPECT_TRUE(fs::exists(dir / "m.bin"));
  EXPECT_TRUE(fs::exists(dir / "m.json"));

  Model<float> other(tiny_model(), 2);
  Trainer restored(other, tiny_options());
  restored.load_checkpoint(dir / "m");
  EXPECT_EQ(restored.next_epoch(), 1);
  for (const auto& p : model.params().all()) EXPECT_EQ(p.value.data, other.params().at(p.name).value.data) << p.name;

  const Model<float> loaded = load_model(dir / "m");
  EXPECT_EQ(loaded.config().architecture_hash(), tiny_model().architecture_hash());
  EXPECT_EQ(read_checkpoint_info(dir / "m").epoch, 0);
  fs::remove_all(dir);
}

TEST(Checkpoint, TruncatedDataIsDataError) {
  const auto dir = temp_dir("trunc");
  Model<float> model(tiny_model(), 1);
  Trainer trainer(model, tiny_options());
  trainer.save_checkpoint(dir / "m");
  fs::resize_file(dir / "m.bin", fs::file_size(dir / "m.bin") / 2);
  Model<float> other(tiny_model(), 1);
  Trainer t2(other, tiny_options());
  EXPECT_THROW(t2.load_checkpoint(dir / "m"), DataError);
  EXPECT_THROW(load_model(dir / "m"), DataError);
  EXPECT_THROW(t2.load_checkpoint(dir / "absent"), DataError);
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptedByteIsDataError) {
  const auto dir = temp_dir("corrupt");
  Model<float> model(tiny_model(), 1);
  Trainer trainer(model, tiny_options());
  trainer.save_checkpoint(dir / "m");
  {
    std::fstream f(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(10);
    f.put('\x7f');
  }
  Model<float> other(tiny_model(), 1);
  Trainer t2(other, tiny_options());
  EXPECT_THROW(t2.load_checkpoint(dir / "m"), DataError);
  fs::remove_all(dir);
}

TEST(Checkpoint, ArchitectureMismatchIsConfigError) {
  const auto dir = temp_dir("hash");
  Model<float> model(tiny_model(), 1);
  Trainer trainer(model, tiny_options());
  trainer.save_checkpoint(dir / "m");
  auto cfg = tiny_model();
  cfg.deform.encoder = EncoderVariant::gcn;
  Model<float> other(cfg, 1);
  Trainer t2(other, tiny_options());
  EXPECT_THROW(t2.load_checkpoint(dir / "m"), ConfigError);
  fs::remove_all(dir);
}

TEST(Training, EpochRecordIsFinite) {
  const auto data = tiny_data(4);
  Model<float> model(tiny_model(), 3);
  Trainer trainer(model, tiny_options());
  const auto rec = trainer.train_epoch(data, {});
  EXPECT_EQ(rec.epoch, 0);
  EXPECT_TRUE(rec.warmup);
  EXPECT_EQ(rec.samples, 4);
  EXPECT_TRUE(std::isfinite(rec.total));
  EXPECT_GT(rec.loss.cls, 0.0);
  EXPECT_GT(rec.loss.match, 0.0);
  EXPECT_EQ(trainer.next_epoch(), 1);
  EXPECT_THROW(trainer.train_epoch({}, {}), DataError);
}

TEST(Training, CsvRowHasHeaderColumns) {
  EpochRecord r;
  const auto header = epoch_csv_header(3);
  const auto row = epoch_csv_row(r, 3);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
}

TEST(Config, OverridesAndUnknownKeys) {
  RunConfig cfg;
  apply_override(cfg, "train.epochs=12");
  apply_override(cfg, "model.deform.encoder=gcn");
  cfg.sync();
  EXPECT_EQ(cfg.train.epochs, 12);
  EXPECT_EQ(cfg.loss.eps, 12);
  EXPECT_EQ(cfg.model.deform.encoder, EncoderVariant::gcn);
  EXPECT_THROW(apply_override(cfg, "train.nonsense=1"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "no_equals_sign"), ConfigError);

  const auto dir = temp_dir("cfg");
  write_text_atomic(dir / "a.json", R"({"train": {"lr": 0.01}})");
  EXPECT_DOUBLE_EQ(load_run_config(dir / "a.json").train.lr, 0.01);
  write_text_atomic(dir / "b.json", R"({"trian": {}})");
  EXPECT_THROW(load_run_config(dir / "b.json"), ConfigError);
  write_text_atomic(dir / "c.json", R"({"train": {"lr": -1}})");
  EXPECT_THROW(load_run_config(dir / "c.json").validate(), ConfigError);
  fs::remove_all(dir);
}

TEST(Config, JsonRoundTrip) {
  RunConfig cfg;
  cfg.model.deform.prior_mask = kPriorCls | kPriorDir;
  cfg.proposals.th_d = 0.25;
  cfg.train.seed = 99;
  nlohmann::json j = cfg;
  const RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(back.model.deform.prior_mask, cfg.model.deform.prior_mask);
  EXPECT_EQ(back.proposals.th_d, 0.25);
  EXPECT_EQ(back.train.seed, 99u);
  EXPECT_EQ(back.model.architecture_hash(), cfg.model.architecture_hash());
}

#include "textdeform/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "textdeform/config.hpp"
#include "textdeform/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace textdeform {

using ad::Ops;
using ad::Tensor;
using ad::Var;

int TrainConfig::resolved_warmup() const {
  if (warmup_epochs >= 0) return warmup_epochs;
  return static_cast<int>(std::ceil(0.1 * epochs));
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("train.lr_decay must lie in (0, 1]");
  if (lr_decay_every < 1) throw ConfigError("train.lr_decay_every must be >= 1");
  if (crop_size < 32) throw ConfigError("train.crop_size must be >= 32");
  if (grad_clip < 0) throw ConfigError("train.grad_clip must be >= 0");
  if (val_every < 0) throw ConfigError("train.val_every must be >= 0");
  if (max_train_proposals < 1) throw ConfigError("train.max_train_proposals must be >= 1");
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.lr_decay, epoch / cfg.lr_decay_every);
}

SampleTargets make_targets(const AnnotatedSample& s, int stride, int n_control) {
  SampleTargets t;
  t.image = s.image;
  t.stride = stride;
  const int h = s.image.height() / stride;
  const int w = s.image.width() / stride;
  if (h * stride != s.image.height() || w * stride != s.image.width())
    throw ShapeError("image size must be divisible by the output stride");

  // Fields live at feature resolution: map pixel j sits at image coordinate j * stride.
  std::vector<TextInstance> scaled;
  std::vector<int> index_of;
  t.valid.assign(static_cast<std::size_t>(h) * w, 1);
  for (std::size_t i = 0; i < s.instances.size(); ++i) {
    const auto& inst = s.instances[i];
    std::vector<Point> pts;
    for (const Point& p : inst.boundary.points()) pts.push_back(p * (1.0 / stride));
    Polygon poly(std::move(pts));
    if (inst.ignore) {
      const auto m = rasterize(poly, h, w);
      for (std::size_t k = 0; k < m.size(); ++k)
        if (m[k]) t.valid[k] = 0;
      continue;
    }
    scaled.push_back({std::move(poly), inst.id, false});
    index_of.push_back(static_cast<int>(i));
  }
  t.gt = compute_ground_truth(scaled, h, w);
  t.gt_control.resize(scaled.size());
  t.usable.assign(scaled.size(), false);
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    if (t.gt.dropped[i]) continue;
    t.gt_control[i] = resample_uniform(s.instances[index_of[i]].boundary, n_control);
    t.usable[i] = true;
  }
  return t;
}

namespace {

int majority_owner(const std::vector<int>& pixels, const std::vector<int>& owner, int instances) {
  std::vector<int> votes(instances + 1, 0);
  for (int k : pixels) ++votes[owner[k] + 1];
  const auto it = std::max_element(votes.begin(), votes.end());
  const int best = static_cast<int>(it - votes.begin()) - 1;
  return 2 * *it > static_cast<int>(pixels.size()) ? best : -1;
}

ControlPolygon scaled(ControlPolygon c, int stride) {
  if (stride != 1)
    for (Point& p : c.points()) p = p * static_cast<double>(stride);
  return c;
}

}  // namespace

std::vector<DeformJob> gt_jobs(const SampleTargets& t, const ProposalConfig& cfg) {
  const FieldMaps fields{t.gt.cls, t.gt.dist, t.gt.dir};
  const int n = static_cast<int>(t.usable.size());
  std::vector<DeformJob> jobs;
  std::vector<bool> covered(n, false);
  for (auto& c : extract_candidates(fields, cfg)) {
    const int o = majority_owner(c.pixels, t.gt.owner, n);
    if (o < 0 || !t.usable[o] || covered[o]) continue;
    covered[o] = true;
    jobs.push_back({scaled(std::move(c.contour), t.stride), o, true});
  }
  std::sort(jobs.begin(), jobs.end(), [](const DeformJob& a, const DeformJob& b) { return a.target < b.target; });
  return jobs;
}

std::vector<DeformJob> predicted_jobs(const FieldMaps& fields, const SampleTargets& t, const ProposalConfig& cfg,
                                      int max_jobs) {
  const int n = static_cast<int>(t.usable.size());
  std::vector<DeformJob> jobs;
  std::vector<bool> covered(n, false);
  auto props = filter_by_confidence(extract_candidates(fields, cfg), cfg);
  std::stable_sort(props.begin(), props.end(),
                   [](const BoundaryProposal& a, const BoundaryProposal& b) { return a.confidence > b.confidence; });
  for (auto& p : props) {
    if (static_cast<int>(jobs.size()) >= max_jobs) break;
    const int o = majority_owner(p.pixels, t.gt.owner, n);
    if (o < 0 || !t.usable[o]) continue;
    covered[o] = true;
    jobs.push_back({scaled(std::move(p.contour), t.stride), o, false});
  }
  for (auto& j : gt_jobs(t, cfg)) {
    if (static_cast<int>(jobs.size()) >= max_jobs) break;
    if (!covered[j.target]) jobs.push_back(std::move(j));
  }
  return jobs;
}

template <class T>
Tensor<T> gt_prior_tensor(const SampleTargets& t) {
  const int h = t.gt.cls.height(), w = t.gt.cls.width();
  Tensor<T> out({4, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t k = 0; k < hw; ++k) {
    out[k] = static_cast<T>(t.gt.cls.values()[k]);
    out[hw + k] = static_cast<T>(t.gt.dist.values()[k]);
    out[2 * hw + k] = static_cast<T>(t.gt.dir.values()[2 * k]);
    out[3 * hw + k] = static_cast<T>(t.gt.dir.values()[2 * k + 1]);
  }
  return out;
}

template <class T>
LossTerms<T> composite_loss(const Model<T>& model, Context<T>& ctx, const SharedOutputs<T>& shared,
                            const SampleTargets& targets, const std::vector<DeformJob>& jobs,
                            const Var<T>& deform_priors, double epoch, const LossConfig& cfg, bool pixel_losses) {
  LossTerms<T> out;
  Var<T> total = ctx.constant(Tensor<T>({1}, T(0)));
  if (pixel_losses) {
    const Var<T> logits = Ops<T>::slice(shared.prior_logits, 0, 0, 1);
    const auto gt_cls = targets.gt.cls.values();
    // Hard negatives are ranked by the per-pixel cross-entropy of the current logits.
    std::vector<double> bce(gt_cls.size());
    for (std::size_t k = 0; k < bce.size(); ++k) {
      const double z = logits.value()[k];
      bce[k] = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - gt_cls[k] * z;
    }
    const auto mask = ohem_select(bce, gt_cls, cfg.ohem_neg_ratio, cfg.ohem_empty_negatives, targets.valid);
    out.cls = ad_loss::cls_from_logits(logits, gt_cls, mask);
    // The distance regression sees the unclamped output so a pixel pushed
    // below 0 still gets pulled back toward its target.
    out.dist = ad_loss::dist_mse(Ops<T>::slice(shared.prior_logits, 0, 1, 1), targets.gt.dist.values(), mask);
    out.dir = ad_loss::direction(Ops<T>::slice(shared.priors, 0, 2, 2), targets.gt.dir, targets.gt.segment_size,
                                 targets.gt.cls);
    total = Ops<T>::add(Ops<T>::add(out.cls, Ops<T>::scale(out.dist, static_cast<T>(cfg.alpha))), out.dir);
    out.values.cls = out.cls.value()[0];
    out.values.dist = out.dist.value()[0];
    out.values.dir = out.dir.value()[0];
  }
  out.deform_weight = deform_weight(epoch, cfg);
  const int iterations = model.config().deform.iterations;
  if (!jobs.empty()) {
    Var<T> sum;
    for (const DeformJob& job : jobs) {
      const ControlPolygon& gt = *targets.gt_control.at(job.target);
      Tensor<T> init({job.start.size(), 2});
      for (int i = 0; i < job.start.size(); ++i) {
        init[2 * i] = static_cast<T>(job.start[i].x);
        init[2 * i + 1] = static_cast<T>(job.start[i].y);
      }
      const auto steps = model.deform(ctx, shared.features, deform_priors, ctx.constant(std::move(init)), iterations);
      for (const auto& s : steps) {
        Var<T> m = ad_loss::matching(s, gt, cfg.smooth_l1_beta);
        sum = sum.valid() ? Ops<T>::add(sum, m) : m;
      }
    }
    out.match = Ops<T>::scale(sum, static_cast<T>(1.0 / (static_cast<double>(jobs.size()) * iterations)));
    out.values.match = out.match.value()[0];
    total = Ops<T>::add(total, Ops<T>::scale(out.match, static_cast<T>(out.deform_weight)));
  }
  out.total = total;
  return out;
}

FrozenFeatures precompute_frozen(const Model<float>& model, const std::vector<AnnotatedSample>& train,
                                 const ProposalConfig& pcfg, int max_jobs) {
  FrozenFeatures f;
  const int stride = model.config().backbone.output_stride;
  for (const auto& s : train) {
    ad::Tape<float> tape;
    tape.set_grad_enabled(false);
    Context<float> ctx(tape, const_cast<Model<float>&>(model).params());
    const auto shared = model.forward_shared(ctx, tape.constant(to_tensor<float>(s.image)));
    SampleTargets t = make_targets(s, stride, pcfg.n_control);
    const GridMap all = to_grid(shared.priors.value());
    const FieldMaps fields{all.slice_channels(0, 1), all.slice_channels(1, 1), all.slice_channels(2, 2)};
    f.jobs.push_back(predicted_jobs(fields, t, pcfg, max_jobs));
    f.features.push_back(shared.features.value());
    f.priors.push_back(shared.priors.value());
    t.image = GridMap();
    f.targets.push_back(std::move(t));
  }
  return f;
}

Trainer::Trainer(Model<float>& model, TrainerOptions opts) : model_(model), opts_(std::move(opts)) {
  opts_.train.validate();
  opts_.loss.eps = opts_.train.epochs;
  opts_.loss.validate();
  opts_.proposals.validate();
  for (auto& p : model_.params().all()) {
    adam_m_.emplace_back(p.value.shape);
    adam_v_.emplace_back(p.value.shape);
    const bool shared = p.name.rfind("backbone.", 0) == 0 || p.name.rfind("head.", 0) == 0;
    p.trainable = !(opts_.train.freeze_shared && shared);
  }
  model_.params().zero_grad();
}

void Trainer::adam_step(int accumulated, double lr) {
  auto& params = model_.params().all();
  const double inv = 1.0 / accumulated;
  double scale = inv;
  if (opts_.train.grad_clip > 0) {
    double sq = 0.0;
    for (const auto& p : params)
      if (p.trainable)
        for (float g : p.grad.data) sq += (g * inv) * (g * inv);
    const double n = std::sqrt(sq);
    if (n > opts_.train.grad_clip) scale *= opts_.train.grad_clip / n;
  }
  ++adam_steps_;
  const double b1 = opts_.train.adam_beta1, b2 = opts_.train.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_steps_));
  std::size_t idx = 0;
  for (auto& p : params) {
    auto& m = adam_m_[idx];
    auto& v = adam_v_[idx];
    ++idx;
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad.data[k] * scale;
      m.data[k] = static_cast<float>(b1 * m.data[k] + (1 - b1) * g);
      v.data[k] = static_cast<float>(b2 * v.data[k] + (1 - b2) * g * g);
      const double mh = m.data[k] / c1, vh = v.data[k] / c2;
      p.value.data[k] = static_cast<float>(p.value.data[k] - lr * mh / (std::sqrt(vh) + opts_.train.adam_eps));
    }
  }
  model_.params().zero_grad();
}

void Trainer::dump_nonfinite(const AnnotatedSample& s, const LossParts& parts, int epoch, int index) const {
  try {
    const fs::path dir = opts_.diagnostics_dir;
    fs::create_directories(dir);
    const std::string stem = "nonfinite_e" + std::to_string(epoch) + "_i" + std::to_string(index);
    save_png(s.image, dir / (stem + ".png"));
    save_annotation(s, stem + ".png", dir / (stem + ".json"));
    json j = {{"epoch", epoch}, {"sample", index}, {"name", s.name},
              {"loss", {{"cls", parts.cls}, {"dist", parts.dist}, {"dir", parts.dir}, {"match", parts.match}}}};
    write_text_atomic(dir / (stem + "_loss.json"), j.dump(1));
  } catch (const std::exception& e) {
    spdlog::error("could not write diagnostic dump: {}", e.what());
  }
}

EpochRecord Trainer::train_epoch(const std::vector<AnnotatedSample>& train, const std::vector<AnnotatedSample>& val,
                                 const FrozenFeatures* frozen) {
  if (train.empty()) throw DataError("training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& tc = opts_.train;
  const int epoch = epoch_;
  const double lr = learning_rate(tc, epoch);
  const bool warm = !tc.freeze_shared && epoch < tc.resolved_warmup();
  const int stride = model_.config().backbone.output_stride;
  if (frozen && (!tc.freeze_shared || frozen->features.size() != train.size()))
    throw ConfigError("frozen features need train.freeze_shared and one entry per sample");

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto shuffle_rng = derived_rng(tc.seed, 100, static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  EpochRecord rec;
  rec.epoch = epoch;
  rec.lr = lr;
  rec.warmup = warm;
  rec.deform_weight = deform_weight(epoch, opts_.loss);
  double total = 0.0;
  int accumulated = 0;
  for (std::size_t step = 0; step < order.size(); ++step) {
    const int idx = order[step];
    ad::Tape<float> tape;
    Context<float> ctx(tape, model_.params());
    SharedOutputs<float> shared;
    std::optional<SampleTargets> local;
    const SampleTargets* targets = nullptr;
    std::vector<DeformJob> jobs;
    std::optional<AnnotatedSample> augmented;
    const AnnotatedSample* sample = &train[idx];

    if (frozen) {
      shared.features = tape.constant(frozen->features[idx]);
      shared.priors = tape.constant(frozen->priors[idx]);
      targets = &frozen->targets[idx];
      jobs = frozen->jobs[idx];
    } else {
      if (tc.augment) {
        const std::uint64_t mix = (static_cast<std::uint64_t>(epoch) << 32) ^ static_cast<std::uint64_t>(idx);
        augmented = augment(train[idx], tc.seed * 0x9E3779B97F4A7C15ull + mix, opts_.augment);
        sample = &*augmented;
      }
      local = make_targets(*sample, stride, opts_.proposals.n_control);
      targets = &*local;
      shared = model_.forward_shared(ctx, tape.constant(to_tensor<float>(sample->image)));
      if (warm) {
        jobs = gt_jobs(*targets, opts_.proposals);
        if (static_cast<int>(jobs.size()) > tc.max_train_proposals) jobs.resize(tc.max_train_proposals);
      } else {
        const GridMap all = to_grid(shared.priors.value());
        const FieldMaps fields{all.slice_channels(0, 1), all.slice_channels(1, 1), all.slice_channels(2, 2)};
        jobs = predicted_jobs(fields, *targets, opts_.proposals, tc.max_train_proposals);
      }
    }
    for (const auto& j : jobs) (j.from_gt ? rec.fallback_jobs : rec.predicted_jobs) += 1;

    const Var<float> priors = warm ? tape.constant(gt_prior_tensor<float>(*targets)) : shared.priors;
    LossTerms<float> terms = composite_loss(model_, ctx, shared, *targets, jobs, priors, epoch, opts_.loss,
                                            !tc.freeze_shared);
    const double value = terms.total.value()[0];
    if (!std::isfinite(value)) {
      dump_nonfinite(*sample, terms.values, epoch, idx);
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + std::to_string(idx) +
                         " (" + sample->name + "); diagnostics in " + opts_.diagnostics_dir.string());
    }
    tape.backward(terms.total);
    tape.flush_parameter_grads();
    ++accumulated;

    rec.loss.cls += terms.values.cls;
    rec.loss.dist += terms.values.dist;
    rec.loss.dir += terms.values.dir;
    rec.loss.match += terms.values.match;
    total += value;
    if (accumulated == tc.batch || step + 1 == order.size()) {
      adam_step(accumulated, lr);
      accumulated = 0;
    }
  }
  const double n = static_cast<double>(order.size());
  rec.samples = static_cast<int>(order.size());
  rec.loss = {rec.loss.cls / n, rec.loss.dist / n, rec.loss.dir / n, rec.loss.match / n};
  rec.total = total / n;
  ++epoch_;

  const bool last = epoch_ == tc.epochs;
  if (!val.empty() && tc.val_every > 0 && (epoch_ % tc.val_every == 0 || last)) {
    const EvaluationReport r = evaluate_model(model_, val, opts_.inference, opts_.eval);
    rec.validated = true;
    rec.val = r.final_metrics;
    rec.val_iou = r.mean_iou;
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

namespace {

constexpr int kCheckpointFormat = 1;

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

fs::path with_ext(const fs::path& prefix, const char* ext) { return fs::path(prefix.string() + ext); }

json read_manifest_json(const fs::path& prefix) {
  std::ifstream in(with_ext(prefix, ".json"));
  if (!in) throw DataError("cannot open checkpoint manifest " + with_ext(prefix, ".json").string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
}

std::vector<char> read_blob(const fs::path& prefix, const json& manifest) {
  const fs::path bin = with_ext(prefix, ".bin");
  std::ifstream in(bin, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open checkpoint data " + bin.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  const auto expected = manifest.at("bytes").get<std::size_t>();
  if (size != expected)
    throw DataError("checkpoint data " + bin.string() + " has " + std::to_string(size) + " bytes, manifest says " +
                    std::to_string(expected) + " (truncated or mismatched)");
  std::vector<char> blob(size);
  in.seekg(0);
  in.read(blob.data(), static_cast<std::streamsize>(size));
  if (!in) throw DataError("short read from " + bin.string());
  if (hex(fnv1a(blob.data(), blob.size())) != manifest.at("checksum").get<std::string>())
    throw DataError("checkpoint data checksum mismatch in " + bin.string());
  return blob;
}

void load_tensors(const json& manifest, const std::vector<char>& blob, ad::ParameterSet<float>& params,
                  std::vector<Tensor<float>>* adam_m, std::vector<Tensor<float>>* adam_v) {
  std::size_t idx = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    auto* p = params.find(name);
    if (!p) throw DataError("checkpoint has unknown parameter " + name);
    if (p->value.shape != shape) throw DataError("checkpoint shape mismatch for " + name);
    const std::size_t count = p->value.size();
    const std::size_t off = entry.at("offset").get<std::size_t>();
    auto copy = [&](std::size_t at, std::vector<float>& dst) {
      if (at + count * sizeof(float) > blob.size()) throw DataError("checkpoint entry out of range");
      std::memcpy(dst.data(), blob.data() + at, count * sizeof(float));
    };
    copy(off, p->value.data);
    if (adam_m && entry.contains("adam_m")) copy(entry.at("adam_m").get<std::size_t>(), (*adam_m)[idx].data);
    if (adam_v && entry.contains("adam_v")) copy(entry.at("adam_v").get<std::size_t>(), (*adam_v)[idx].data);
    ++idx;
  }
  if (idx != params.all().size()) throw DataError("checkpoint is missing parameters");
}

}  // namespace

void Trainer::save_checkpoint(const fs::path& prefix) const {
  std::string blob;
  json tensors = json::array();
  std::size_t idx = 0;
  auto append = [&](const Tensor<float>& t) {
    const std::size_t off = blob.size();
    blob.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(float));
    return off;
  };
  for (const auto& p : model_.params().all()) {
    json e = {{"name", p.name}, {"shape", p.value.shape}};
    e["offset"] = append(p.value);
    e["adam_m"] = append(adam_m_[idx]);
    e["adam_v"] = append(adam_v_[idx]);
    tensors.push_back(std::move(e));
    ++idx;
  }
  json m;
  m["format"] = kCheckpointFormat;
  m["config_hash"] = hex(model_.config().architecture_hash());
  m["model"] = model_.config();
  m["epoch"] = epoch_ - 1;
  m["adam_steps"] = adam_steps_;
  m["train"] = opts_.train;
  m["bytes"] = blob.size();
  m["checksum"] = hex(fnv1a(blob.data(), blob.size()));
  m["tensors"] = std::move(tensors);
  write_text_atomic(with_ext(prefix, ".bin"), blob);
  write_text_atomic(with_ext(prefix, ".json"), m.dump(1));
}

void Trainer::load_checkpoint(const fs::path& prefix) {
  const json m = read_manifest_json(prefix);
  try {
    if (m.at("format").get<int>() != kCheckpointFormat) throw DataError("unsupported checkpoint format");
    if (m.at("config_hash").get<std::string>() != hex(model_.config().architecture_hash()))
      throw ConfigError("checkpoint architecture hash does not match the model configuration");
    const auto blob = read_blob(prefix, m);
    load_tensors(m, blob, model_.params(), &adam_m_, &adam_v_);
    epoch_ = m.at("epoch").get<int>() + 1;
    adam_steps_ = m.at("adam_steps").get<long>();
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint manifest: " + std::string(e.what()));
  }
  model_.params().zero_grad();
}

CheckpointInfo read_checkpoint_info(const fs::path& prefix) {
  const json m = read_manifest_json(prefix);
  try {
    CheckpointInfo info;
    info.model = m.at("model").get<ModelConfig>();
    info.epoch = m.at("epoch").get<int>();
    info.config_hash = std::stoull(m.at("config_hash").get<std::string>(), nullptr, 16);
    return info;
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint manifest: " + std::string(e.what()));
  }
}

Model<float> load_model(const fs::path& prefix) {
  const CheckpointInfo info = read_checkpoint_info(prefix);
  Model<float> model(info.model, 0);
  if (info.config_hash != model.config().architecture_hash())
    throw DataError("checkpoint hash does not match its own model configuration");
  const json m = read_manifest_json(prefix);
  load_tensors(m, read_blob(prefix, m), model.params(), nullptr, nullptr);
  return model;
}

std::string epoch_csv_header(int iterations) {
  std::string h = "epoch,lr,deform_weight,warmup,loss_total,loss_cls,loss_dist,loss_dir,loss_match,"
                  "predicted_jobs,fallback_jobs,val_precision,val_recall,val_f";
  for (int k = 1; k <= iterations; ++k) h += ",val_iou_iter" + std::to_string(k);
  return h + ",seconds\n";
}

std::string epoch_csv_row(const EpochRecord& r, int iterations) {
  std::ostringstream s;
  s.precision(10);
  s << r.epoch << ',' << r.lr << ',' << r.deform_weight << ',' << (r.warmup ? 1 : 0) << ',' << r.total << ','
    << r.loss.cls << ',' << r.loss.dist << ',' << r.loss.dir << ',' << r.loss.match << ',' << r.predicted_jobs << ','
    << r.fallback_jobs << ',';
  if (r.validated) {
    s << r.val.precision << ',' << r.val.recall << ',' << r.val.f_measure;
  } else {
    s << ",,";
  }
  for (int k = 0; k < iterations; ++k) {
    s << ',';
    if (r.validated && k < static_cast<int>(r.val_iou.size())) s << r.val_iou[k];
  }
  s << ',' << r.seconds << '\n';
  return s.str();
}

TrainRunResult run_training(Trainer& trainer, const std::vector<AnnotatedSample>& train,
                            const std::vector<AnnotatedSample>& val, const fs::path& out_dir, int checkpoint_every,
                            const FrozenFeatures* frozen, const std::function<void(const EpochRecord&)>& on_epoch) {
  fs::create_directories(out_dir);
  const int iterations = trainer.model().config().deform.iterations;
  const fs::path csv = out_dir / "metrics.csv";
  if (trainer.next_epoch() == 0 || !fs::exists(csv)) write_text_atomic(csv, epoch_csv_header(iterations));
  TrainRunResult result;
  while (trainer.next_epoch() < trainer.options().train.epochs) {
    EpochRecord r = trainer.train_epoch(train, val, frozen);
    {
      std::ofstream out(csv, std::ios::app);
      out << epoch_csv_row(r, iterations);
    }
    spdlog::info("epoch {} loss {:.4f} (cls {:.4f} dist {:.4f} dir {:.4f} match {:.3f}){} {:.1f}s", r.epoch, r.total,
                 r.loss.cls, r.loss.dist, r.loss.dir, r.loss.match,
                 r.validated ? fmt::format(" val F {:.4f}", r.val.f_measure) : std::string(), r.seconds);
    result.last_checkpoint = out_dir / "last";
    trainer.save_checkpoint(result.last_checkpoint);
    if (checkpoint_every > 0 && (r.epoch + 1) % checkpoint_every == 0)
      trainer.save_checkpoint(out_dir / ("epoch_" + std::to_string(r.epoch)));
    if (on_epoch) on_epoch(r);
    result.history.push_back(std::move(r));
  }
  return result;
}

template Tensor<float> gt_prior_tensor(const SampleTargets&);
template Tensor<double> gt_prior_tensor(const SampleTargets&);
template LossTerms<float> composite_loss(const Model<float>&, Context<float>&, const SharedOutputs<float>&,
                                         const SampleTargets&, const std::vector<DeformJob>&, const Var<float>&,
                                         double, const LossConfig&, bool);
template LossTerms<double> composite_loss(const Model<double>&, Context<double>&, const SharedOutputs<double>&,
                                          const SampleTargets&, const std::vector<DeformJob>&, const Var<double>&,
                                          double, const LossConfig&, bool);

}  // namespace textdeform

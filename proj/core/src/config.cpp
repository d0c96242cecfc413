#include "textdeform/config.hpp"

#include <fstream>
#include <set>

#include "textdeform/errors.hpp"

using nlohmann::json;

namespace textdeform {

namespace {

// Reads known keys from an object and rejects anything else.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + section_ + "." + key + "'");
  }

  template <class V>
  Reader& operator()(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      j_.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + section_ + "." + key + "': " + e.what());
    }
    return *this;
  }

  template <class V, class Parse>
  Reader& parsed(const char* key, V& out, Parse parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    if (!j_.at(key).is_string()) throw ConfigError("'" + section_ + "." + key + "' must be a string");
    out = parse(j_.at(key).get<std::string>());
    return *this;
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

void to_json(json& j, const SynthConfig& c) {
  std::vector<std::string> fams;
  for (auto f : c.families) fams.push_back(to_string(f));
  j = {{"image_size", c.image_size},       {"min_instances", c.min_instances},
       {"max_instances", c.max_instances}, {"families", fams},
       {"min_gap", c.min_gap},             {"min_height_frac", c.min_height_frac},
       {"max_height_frac", c.max_height_frac}, {"noise_sigma", c.noise_sigma},
       {"max_retries", c.max_retries},     {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
  std::vector<std::string> fams;
  for (auto f : c.families) fams.push_back(to_string(f));
  Reader(j, "synth")("image_size", c.image_size)("min_instances", c.min_instances)("max_instances", c.max_instances)(
      "families", fams)("min_gap", c.min_gap)("min_height_frac", c.min_height_frac)(
      "max_height_frac", c.max_height_frac)("noise_sigma", c.noise_sigma)("max_retries", c.max_retries)("seed", c.seed);
  c.families.clear();
  for (const auto& f : fams) c.families.push_back(parse_shape_family(f));
}

void to_json(json& j, const AugmentParams& c) {
  j = {{"rotation_sigma_deg", c.rotation_sigma_deg}, {"rotation_limit_deg", c.rotation_limit_deg},
       {"crop_min_frac", c.crop_min_frac},           {"flip_prob", c.flip_prob},
       {"min_visible_area", c.min_visible_area},     {"output_size", c.output_size}};
}

void from_json(const json& j, AugmentParams& c) {
  Reader(j, "augment")("rotation_sigma_deg", c.rotation_sigma_deg)("rotation_limit_deg", c.rotation_limit_deg)(
      "crop_min_frac", c.crop_min_frac)("flip_prob", c.flip_prob)("min_visible_area", c.min_visible_area)(
      "output_size", c.output_size);
}

void to_json(json& j, const ModelConfig& c) {
  const auto& b = c.backbone;
  const auto& h = c.head;
  const auto& d = c.deform;
  j["backbone"] = {{"base_channels", b.base_channels},
                   {"fusion_levels", b.fusion_levels},
                   {"shared_dim", b.shared_dim},
                   {"output_stride", b.output_stride}};
  j["head"] = {{"dilation_a", h.dilation_a}, {"dilation_b", h.dilation_b}, {"hidden", h.hidden}};
  j["deform"] = {{"encoder", to_string(d.encoder)},
                 {"rnn_hidden", d.rnn_hidden},
                 {"gcn_width", d.gcn_width},
                 {"gcn_layers", d.gcn_layers},
                 {"proj_width", d.proj_width},
                 {"fc_width", d.fc_width},
                 {"circ_kernel", d.circ_kernel},
                 {"circ_layers", d.circ_layers},
                 {"circ_width", d.circ_width},
                 {"decoder_widths", d.decoder_widths},
                 {"iterations", d.iterations},
                 {"prior_mask", prior_mask_string(d.prior_mask)}};
}

void from_json(const json& j, ModelConfig& c) {
  Reader top(j, "model");
  json b = json::object(), h = json::object(), d = json::object();
  top("backbone", b)("head", h)("deform", d);
  Reader(b, "model.backbone")("base_channels", c.backbone.base_channels)("fusion_levels", c.backbone.fusion_levels)(
      "shared_dim", c.backbone.shared_dim)("output_stride", c.backbone.output_stride);
  Reader(h, "model.head")("dilation_a", c.head.dilation_a)("dilation_b", c.head.dilation_b)("hidden", c.head.hidden);
  auto& df = c.deform;
  Reader(d, "model.deform")
      .parsed("encoder", df.encoder, parse_encoder)("rnn_hidden", df.rnn_hidden)("gcn_width", df.gcn_width)(
          "gcn_layers", df.gcn_layers)("proj_width", df.proj_width)("fc_width", df.fc_width)(
          "circ_kernel", df.circ_kernel)("circ_layers", df.circ_layers)("circ_width", df.circ_width)(
          "decoder_widths", df.decoder_widths)("iterations", df.iterations)
      .parsed("prior_mask", df.prior_mask, parse_prior_mask);
}

void to_json(json& j, const ProposalConfig& c) {
  j = {{"th_d", c.th_d}, {"th_s", c.th_s}, {"n_control", c.n_control}, {"min_area", c.min_area}};
}

void from_json(const json& j, ProposalConfig& c) {
  Reader(j, "proposals")("th_d", c.th_d)("th_s", c.th_s)("n_control", c.n_control)("min_area", c.min_area);
}

void to_json(json& j, const LossConfig& c) {
  j = {{"alpha", c.alpha},
       {"lambda", c.lambda},
       {"eps", c.eps},
       {"ohem_neg_ratio", c.ohem_neg_ratio},
       {"smooth_l1_beta", c.smooth_l1_beta},
       {"ohem_empty_negatives", c.ohem_empty_negatives}};
}

void from_json(const json& j, LossConfig& c) {
  Reader(j, "loss")("alpha", c.alpha)("lambda", c.lambda)("eps", c.eps)("ohem_neg_ratio", c.ohem_neg_ratio)(
      "smooth_l1_beta", c.smooth_l1_beta)("ohem_empty_negatives", c.ohem_empty_negatives);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"batch", c.batch},
       {"epochs", c.epochs},
       {"lr_decay", c.lr_decay},
       {"lr_decay_every", c.lr_decay_every},
       {"seed", c.seed},
       {"warmup_epochs", c.warmup_epochs},
       {"crop_size", c.crop_size},
       {"augment", c.augment},
       {"freeze_shared", c.freeze_shared},
       {"grad_clip", c.grad_clip},
       {"val_every", c.val_every},
       {"max_train_proposals", c.max_train_proposals},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps}};
}

void from_json(const json& j, TrainConfig& c) {
  Reader(j, "train")("lr", c.lr)("batch", c.batch)("epochs", c.epochs)("lr_decay", c.lr_decay)(
      "lr_decay_every", c.lr_decay_every)("seed", c.seed)("warmup_epochs", c.warmup_epochs)("crop_size", c.crop_size)(
      "augment", c.augment)("freeze_shared", c.freeze_shared)("grad_clip", c.grad_clip)("val_every", c.val_every)(
      "max_train_proposals", c.max_train_proposals)("adam_beta1", c.adam_beta1)("adam_beta2", c.adam_beta2)(
      "adam_eps", c.adam_eps);
}

void to_json(json& j, const EvalConfig& c) {
  j = {{"iou_threshold", c.iou_threshold}, {"supersample", c.iou.supersample}, {"min_cells", c.iou.min_cells}};
}

void from_json(const json& j, EvalConfig& c) {
  Reader(j, "eval")("iou_threshold", c.iou_threshold)("supersample", c.iou.supersample)("min_cells", c.iou.min_cells);
}

void RunConfig::sync() {
  loss.eps = train.epochs;
  model.deform.iterations = iterations;
  augment.output_size = train.crop_size;
}

void RunConfig::validate() const {
  synth.validate();
  model.validate();
  proposals.validate();
  loss.validate();
  train.validate();
  eval.validate();
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(augment.rotation_limit_deg > 0 && augment.rotation_sigma_deg >= 0)) throw ConfigError("augment rotation invalid");
  if (!(augment.crop_min_frac > 0 && augment.crop_min_frac <= 1)) throw ConfigError("augment.crop_min_frac invalid");
}

InferenceConfig RunConfig::inference() const {
  InferenceConfig c;
  c.proposals = proposals;
  c.iterations = iterations;
  return c;
}

TrainerOptions RunConfig::trainer_options() const {
  TrainerOptions o;
  o.train = train;
  o.loss = loss;
  o.loss.eps = train.epochs;
  o.proposals = proposals;
  o.augment = augment;
  o.augment.output_size = train.crop_size;
  o.inference = inference();
  o.eval = eval;
  return o;
}

void to_json(json& j, const RunConfig& c) {
  j = {{"synth", c.synth}, {"augment", c.augment}, {"model", c.model},     {"proposals", c.proposals},
       {"loss", c.loss},   {"train", c.train},     {"eval", c.eval},       {"iterations", c.iterations}};
}

void from_json(const json& j, RunConfig& c) {
  Reader(j, "config")("synth", c.synth)("augment", c.augment)("model", c.model)("proposals", c.proposals)(
      "loss", c.loss)("train", c.train)("eval", c.eval)("iterations", c.iterations);
  c.sync();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json j = cfg;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
  cfg = j.get<RunConfig>();
}

}  // namespace textdeform

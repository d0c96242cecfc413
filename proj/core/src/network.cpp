#include "textdeform/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "textdeform/errors.hpp"

namespace textdeform {

using ad::Ops;
using ad::Tensor;
using ad::Var;

std::string to_string(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::fc: return "fc";
    case EncoderVariant::rnn: return "rnn";
    case EncoderVariant::circular_conv: return "circular";
    case EncoderVariant::gcn: return "gcn";
    case EncoderVariant::adaptive: return "adaptive";
  }
  return "unknown";
}

EncoderVariant parse_encoder(const std::string& s) {
  if (s == "fc") return EncoderVariant::fc;
  if (s == "rnn") return EncoderVariant::rnn;
  if (s == "circular" || s == "circular_conv") return EncoderVariant::circular_conv;
  if (s == "gcn") return EncoderVariant::gcn;
  if (s == "adaptive") return EncoderVariant::adaptive;
  throw ConfigError("unknown encoder variant '" + s + "'");
}

unsigned parse_prior_mask(const std::string& s) {
  if (s == "all") return kPriorAll;
  if (s == "none" || s.empty()) return 0u;
  unsigned mask = 0;
  std::string spec = s;
  std::replace(spec.begin(), spec.end(), '+', ',');
  std::string token;
  std::stringstream in(spec);
  while (std::getline(in, token, ',')) {
    if (token == "cls") mask |= kPriorCls;
    else if (token == "dis" || token == "dist") mask |= kPriorDist;
    else if (token == "dir") mask |= kPriorDir;
    else throw ConfigError("unknown prior channel '" + token + "'");
  }
  return mask;
}

std::string prior_mask_string(unsigned mask) {
  std::string out;
  auto add = [&](const char* n) { out += (out.empty() ? "" : "+") + std::string(n); };
  if (mask & kPriorCls) add("cls");
  if (mask & kPriorDist) add("dis");
  if (mask & kPriorDir) add("dir");
  return out.empty() ? "none" : out;
}

void BackboneConfig::validate() const {
  if (base_channels < 1) throw ConfigError("backbone.base_channels must be >= 1");
  if (shared_dim < 1) throw ConfigError("backbone.shared_dim must be >= 1");
  if (output_stride != 1 && output_stride != 2 && output_stride != 4)
    throw ConfigError("backbone.output_stride must be 1, 2 or 4");
  const int needed = output_stride == 4 ? 3 : (output_stride == 2 ? 2 : 1);
  if (fusion_levels < std::max(needed, 2)) throw ConfigError("backbone.fusion_levels too small for the stride");
}

void DeformConfig::validate() const {
  if (iterations < 1) throw ConfigError("deform.iterations must be >= 1");
  if (rnn_hidden < 1 || gcn_width < 1 || proj_width < 1 || fc_width < 1 || circ_width < 1)
    throw ConfigError("deform widths must be positive");
  if (gcn_layers < 1 || circ_layers < 1) throw ConfigError("deform layer counts must be positive");
  if (circ_kernel < 1 || circ_kernel % 2 == 0) throw ConfigError("deform.circ_kernel must be odd");
  if (prior_mask > kPriorAll) throw ConfigError("deform.prior_mask out of range");
}

void ModelConfig::validate() const {
  backbone.validate();
  deform.validate();
  if (head.hidden < 1 || head.dilation_a < 1 || head.dilation_b < 1) throw ConfigError("head config invalid");
}

std::uint64_t ModelConfig::architecture_hash() const {
  std::ostringstream s;
  s << "bb:" << backbone.base_channels << ',' << backbone.fusion_levels << ',' << backbone.shared_dim << ','
    << backbone.output_stride << ";head:" << head.dilation_a << ',' << head.dilation_b << ',' << head.hidden
    << ";def:" << to_string(deform.encoder) << ',' << deform.rnn_hidden << ',' << deform.gcn_width << ','
    << deform.gcn_layers << ',' << deform.proj_width << ',' << deform.fc_width << ',' << deform.circ_kernel << ','
    << deform.circ_layers << ',' << deform.circ_width;
  for (int w : deform.decoder_widths) s << ',' << w;
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s.str()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

int encoder_width(const DeformConfig& cfg) {
  switch (cfg.encoder) {
    case EncoderVariant::fc: return cfg.fc_width;
    case EncoderVariant::rnn: return 2 * cfg.rnn_hidden;
    case EncoderVariant::circular_conv: return cfg.circ_width;
    case EncoderVariant::gcn: return cfg.gcn_width;
    case EncoderVariant::adaptive: return 2 * cfg.rnn_hidden + cfg.gcn_width + cfg.proj_width;
  }
  throw ConfigError("unknown encoder variant");
}

std::vector<double> propagation_matrix(int n) {
  if (n < 1) throw ConfigError("propagation_matrix needs n >= 1");
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    a[static_cast<std::size_t>(i) * n + i] = 1.0;
    for (int k : {1, 2}) {
      a[static_cast<std::size_t>(i) * n + (i + k) % n] = 1.0;
      a[static_cast<std::size_t>(i) * n + ((i - k) % n + n) % n] = 1.0;
    }
  }
  std::vector<double> deg(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) deg[i] += a[static_cast<std::size_t>(i) * n + j];
  std::vector<double> g(a.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      g[static_cast<std::size_t>(i) * n + j] = a[static_cast<std::size_t>(i) * n + j] / std::sqrt(deg[i] * deg[j]);
  return g;
}

template <class T>
Var<T> Context<T>::param(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  Var<T> v = tape_.parameter(params_.at(name));
  cache_.emplace(name, v);
  return v;
}

template <class T>
Var<T> Context<T>::ring_matrix(int n) {
  auto it = rings_.find(n);
  if (it != rings_.end()) return it->second;
  const auto g = propagation_matrix(n);
  Var<T> v = tape_.constant(Tensor<T>({n, n}, std::vector<T>(g.begin(), g.end())));
  rings_.emplace(n, v);
  return v;
}

namespace {

// Channel widths of the downsampling pyramid.
int level_channels(const BackboneConfig& cfg, int level) {
  return cfg.base_channels * (1 << std::min(level, 2));
}

int stride_level(int stride) { return stride == 4 ? 2 : (stride == 2 ? 1 : 0); }

// Fusion at coarse levels (1/4 and below) uses 3x3, finer levels 1x1.
int fusion_kernel(int level) { return level >= 2 ? 3 : 1; }

// Per-image input normalisation: channel means removed, then divided by the
// overall standard deviation.
template <class T>
Tensor<T> standardize(const Tensor<T>& img) {
  Tensor<T> out = img;
  if (img.rank() != 3) throw ShapeError("image tensor must be (C, H, W), got " + ad::shape_string(img.shape));
  const std::size_t hw = static_cast<std::size_t>(img.dim(1)) * img.dim(2);
  double sq = 0.0;
  for (int c = 0; c < img.dim(0); ++c) {
    T* p = out.ptr() + c * hw;
    double mean = 0.0;
    for (std::size_t k = 0; k < hw; ++k) mean += p[k];
    mean /= static_cast<double>(hw);
    for (std::size_t k = 0; k < hw; ++k) {
      p[k] = static_cast<T>(p[k] - mean);
      sq += static_cast<double>(p[k]) * p[k];
    }
  }
  const double sd = std::sqrt(sq / static_cast<double>(out.size())) + 1e-3;
  for (T& v : out.data) v = static_cast<T>(v / sd);
  return out;
}

}  // namespace

template <class T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build(seed);
}

template <class T>
void Model<T>::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](ad::Parameter<T>& p, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : p.value.data) v = static_cast<T>(u(rng));
  };
  auto conv = [&](const std::string& name, int out, int in, int k, double gain = 6.0) {
    auto& w = params_.add(name + ".w", {out, in, k, k});
    uniform(w, std::sqrt(gain / (in * k * k)));
    params_.add(name + ".b", {out});
  };
  auto linear = [&](const std::string& name, int in, int out, bool bias, double gain = 6.0) {
    auto& w = params_.add(name + ".w", {in, out});
    uniform(w, std::sqrt(gain / in));
    if (bias) params_.add(name + ".b", {out});
  };

  const auto& bb = cfg_.backbone;
  conv("backbone.level0", level_channels(bb, 0), 3, 3);
  for (int l = 1; l < bb.fusion_levels; ++l)
    conv("backbone.level" + std::to_string(l), level_channels(bb, l), level_channels(bb, l - 1), 3);
  const int top = bb.fusion_levels - 1;
  for (int l = top - 1; l >= stride_level(bb.output_stride); --l) {
    const int from = (l == top - 1) ? level_channels(bb, top) : bb.shared_dim;
    conv("backbone.fuse" + std::to_string(l), bb.shared_dim, from + level_channels(bb, l), fusion_kernel(l));
  }
  if (top == stride_level(bb.output_stride))
    conv("backbone.fuse" + std::to_string(top), bb.shared_dim, level_channels(bb, top), 1);

  const auto& hd = cfg_.head;
  conv("head.dilated_a", hd.hidden, bb.shared_dim, 3);
  conv("head.dilated_b", hd.hidden, hd.hidden, 3);
  conv("head.out", 4, hd.hidden, 1, 0.01);

  const auto& df = cfg_.deform;
  const int in = feature_width(cfg_);
  const bool use_rnn = df.encoder == EncoderVariant::rnn || df.encoder == EncoderVariant::adaptive;
  const bool use_gcn = df.encoder == EncoderVariant::gcn || df.encoder == EncoderVariant::adaptive;
  if (df.encoder == EncoderVariant::fc) {
    linear("deform.fc.l1", in, df.fc_width, true);
    linear("deform.fc.l2", df.fc_width, df.fc_width, true);
  }
  if (use_rnn) {
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string base = std::string("deform.rnn.") + dir;
      const double bound = 1.0 / std::sqrt(df.rnn_hidden);
      uniform(params_.add(base + ".w_ih", {in, 4 * df.rnn_hidden}), bound);
      uniform(params_.add(base + ".w_hh", {df.rnn_hidden, 4 * df.rnn_hidden}), bound);
      auto& b = params_.add(base + ".b", {4 * df.rnn_hidden});
      // Forget-gate bias of 1 keeps early gradients flowing along the ring.
      for (int j = df.rnn_hidden; j < 2 * df.rnn_hidden; ++j) b.value[j] = T(1);
    }
  }
  if (use_gcn) {
    int width = in;
    for (int l = 0; l < df.gcn_layers; ++l) {
      linear("deform.gcn.l" + std::to_string(l), 2 * width, df.gcn_width, false);
      width = df.gcn_width;
    }
  }
  if (df.encoder == EncoderVariant::circular_conv) {
    int width = in;
    for (int l = 0; l < df.circ_layers; ++l) {
      auto& w = params_.add("deform.circ.l" + std::to_string(l) + ".w", {df.circ_kernel * width, df.circ_width});
      uniform(w, std::sqrt(6.0 / (df.circ_kernel * width)));
      params_.add("deform.circ.l" + std::to_string(l) + ".b", {df.circ_width});
      width = df.circ_width;
    }
  }
  if (df.encoder == EncoderVariant::adaptive) linear("deform.proj", in, df.proj_width, true, 3.0);

  int width = encoder_width(df);
  for (std::size_t l = 0; l < df.decoder_widths.size(); ++l) {
    linear("deform.dec.l" + std::to_string(l), width, df.decoder_widths[l], true);
    width = df.decoder_widths[l];
  }
  linear("deform.dec.out", width, 2, true, 0.01);
}

template <class T>
Var<T> Model<T>::backbone(Context<T>& ctx, const Var<T>& image) const {
  const auto& bb = cfg_.backbone;
  std::vector<Var<T>> levels;
  Var<T> x = ctx.constant(standardize(image.value()));
  for (int l = 0; l < bb.fusion_levels; ++l) {
    const std::string name = "backbone.level" + std::to_string(l);
    x = Ops<T>::relu(Ops<T>::conv2d(x, ctx.param(name + ".w"), ctx.param(name + ".b"),
                                    {l == 0 ? 1 : 2, 1, 1}));
    levels.push_back(x);
  }
  Var<T> t = levels.back();
  const int top = bb.fusion_levels - 1;
  for (int l = top - 1; l >= stride_level(bb.output_stride); --l) {
    const std::string name = "backbone.fuse" + std::to_string(l);
    Var<T> up = Ops<T>::upsample_nearest(t, 2);
    const auto& target = levels[l].shape();
    if (up.shape()[1] != target[1] || up.shape()[2] != target[2]) {
      throw ShapeError("backbone: image sides must be divisible by 2^(fusion_levels-1)");
    }
    const int k = fusion_kernel(l);
    t = Ops<T>::relu(Ops<T>::conv2d(Ops<T>::concat({up, levels[l]}, 0), ctx.param(name + ".w"),
                                    ctx.param(name + ".b"), {1, k / 2, 1}));
  }
  if (top == stride_level(bb.output_stride)) {
    const std::string name = "backbone.fuse" + std::to_string(top);
    t = Ops<T>::relu(Ops<T>::conv2d(t, ctx.param(name + ".w"), ctx.param(name + ".b"), {1, 0, 1}));
  }
  return t;
}

template <class T>
Var<T> Model<T>::head(Context<T>& ctx, const Var<T>& features) const {
  const auto& hd = cfg_.head;
  Var<T> x = Ops<T>::relu(Ops<T>::conv2d(features, ctx.param("head.dilated_a.w"), ctx.param("head.dilated_a.b"),
                                         {1, hd.dilation_a, hd.dilation_a}));
  x = Ops<T>::relu(Ops<T>::conv2d(x, ctx.param("head.dilated_b.w"), ctx.param("head.dilated_b.b"),
                                  {1, hd.dilation_b, hd.dilation_b}));
  return Ops<T>::conv2d(x, ctx.param("head.out.w"), ctx.param("head.out.b"), {1, 0, 1});
}

template <class T>
SharedOutputs<T> Model<T>::forward_shared(Context<T>& ctx, const Var<T>& image) const {
  SharedOutputs<T> out;
  out.features = backbone(ctx, image);
  out.prior_logits = head(ctx, out.features);
  Var<T> cls = Ops<T>::sigmoid(Ops<T>::slice(out.prior_logits, 0, 0, 1));
  Var<T> dist = Ops<T>::clamp(Ops<T>::slice(out.prior_logits, 0, 1, 1), T(0), T(1));
  out.priors = Ops<T>::concat({cls, dist, Ops<T>::slice(out.prior_logits, 0, 2, 2)}, 0);
  return out;
}

template <class T>
Var<T> Model<T>::feature_matrix(Context<T>& ctx, const Var<T>& features, const Var<T>& priors,
                                const Var<T>& points) const {
  const T stride = static_cast<T>(cfg_.backbone.output_stride);
  Var<T> fs = Ops<T>::sample_points(features, points, stride);
  Var<T> fp = Ops<T>::sample_points(priors, points, stride);
  const unsigned mask = cfg_.deform.prior_mask;
  if (mask != kPriorAll) {
    const int n = points.shape()[0];
    Tensor<T> keep({n, 4});
    for (int i = 0; i < n; ++i) {
      keep[4 * i + 0] = (mask & kPriorCls) ? T(1) : T(0);
      keep[4 * i + 1] = (mask & kPriorDist) ? T(1) : T(0);
      keep[4 * i + 2] = (mask & kPriorDir) ? T(1) : T(0);
      keep[4 * i + 3] = (mask & kPriorDir) ? T(1) : T(0);
    }
    fp = Ops<T>::mul(fp, ctx.constant(std::move(keep)));
  }
  return Ops<T>::concat({fs, fp}, 1);
}

template <class T>
Var<T> gcn_layer(const Var<T>& x, const Var<T>& g, const Var<T>& w) {
  const auto& xs = x.shape();
  const auto& gs = g.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || gs.size() != 2 || ws.size() != 2 || gs[0] != xs[0] || gs[1] != xs[0] ||
      ws[0] != 2 * xs[1]) {
    throw ShapeError("gcn_layer: X" + ad::shape_string(xs) + " G" + ad::shape_string(gs) + " W" +
                     ad::shape_string(ws));
  }
  Var<T> gx = Ops<T>::matmul(g, x);
  return Ops<T>::relu(Ops<T>::matmul(Ops<T>::concat({x, gx}, 1), w));
}

template <class T>
Var<T> Model<T>::encode(Context<T>& ctx, const Var<T>& x) const {
  const auto& df = cfg_.deform;
  const int n = x.shape()[0];
  auto rnn = [&]() {
    Var<T> f = Ops<T>::lstm(x, ctx.param("deform.rnn.fwd.w_ih"), ctx.param("deform.rnn.fwd.w_hh"),
                            ctx.param("deform.rnn.fwd.b"), false);
    Var<T> b = Ops<T>::lstm(x, ctx.param("deform.rnn.bwd.w_ih"), ctx.param("deform.rnn.bwd.w_hh"),
                            ctx.param("deform.rnn.bwd.b"), true);
    return Ops<T>::concat({f, b}, 1);
  };
  auto gcn = [&]() {
    Var<T> g = ctx.ring_matrix(n);
    Var<T> h = x;
    for (int l = 0; l < df.gcn_layers; ++l) h = gcn_layer(h, g, ctx.param("deform.gcn.l" + std::to_string(l) + ".w"));
    return h;
  };
  switch (df.encoder) {
    case EncoderVariant::fc: {
      Var<T> h = Ops<T>::relu(
          Ops<T>::add_bias(Ops<T>::matmul(x, ctx.param("deform.fc.l1.w")), ctx.param("deform.fc.l1.b")));
      return Ops<T>::relu(
          Ops<T>::add_bias(Ops<T>::matmul(h, ctx.param("deform.fc.l2.w")), ctx.param("deform.fc.l2.b")));
    }
    case EncoderVariant::rnn: return rnn();
    case EncoderVariant::gcn: return gcn();
    case EncoderVariant::circular_conv: {
      Var<T> h = x;
      for (int l = 0; l < df.circ_layers; ++l) {
        const std::string name = "deform.circ.l" + std::to_string(l);
        h = Ops<T>::relu(Ops<T>::circular_conv1d(h, ctx.param(name + ".w"), ctx.param(name + ".b"), df.circ_kernel));
      }
      return h;
    }
    case EncoderVariant::adaptive: {
      Var<T> proj = Ops<T>::add_bias(Ops<T>::matmul(x, ctx.param("deform.proj.w")), ctx.param("deform.proj.b"));
      return Ops<T>::concat({rnn(), gcn(), proj}, 1);
    }
  }
  throw ConfigError("unknown encoder variant");
}

template <class T>
Var<T> Model<T>::decode(Context<T>& ctx, const Var<T>& encoded) const {
  Var<T> h = encoded;
  for (std::size_t l = 0; l < cfg_.deform.decoder_widths.size(); ++l) {
    const std::string name = "deform.dec.l" + std::to_string(l);
    h = Ops<T>::relu(Ops<T>::add_bias(Ops<T>::matmul(h, ctx.param(name + ".w")), ctx.param(name + ".b")));
  }
  return Ops<T>::add_bias(Ops<T>::matmul(h, ctx.param("deform.dec.out.w")), ctx.param("deform.dec.out.b"));
}

template <class T>
std::vector<Var<T>> Model<T>::deform(Context<T>& ctx, const Var<T>& features, const Var<T>& priors,
                                     const Var<T>& initial, int iterations) const {
  if (iterations < 1) throw ConfigError("deform needs at least one iteration");
  std::vector<Var<T>> out;
  Var<T> pts = initial;
  for (int it = 0; it < iterations; ++it) {
    Var<T> offsets = decode(ctx, encode(ctx, feature_matrix(ctx, features, priors, pts)));
    pts = Ops<T>::add(pts, offsets);
    out.push_back(pts);
  }
  return out;
}

template <class T>
void copy_parameters(const Model<T>& from, Model<T>& to, const std::vector<std::string>& prefixes) {
  for (const auto& p : from.params().all()) {
    const bool match = std::any_of(prefixes.begin(), prefixes.end(),
                                   [&](const std::string& pre) { return p.name.rfind(pre, 0) == 0; });
    if (!match) continue;
    auto& dst = to.params().at(p.name);
    if (dst.value.shape != p.value.shape) throw ShapeError("copy_parameters: shape mismatch for " + p.name);
    dst.value = p.value;
  }
}

template <class T>
void zero_parameters(Model<T>& model, const std::string& prefix) {
  for (auto& p : model.params().all())
    if (p.name.rfind(prefix, 0) == 0) std::fill(p.value.data.begin(), p.value.data.end(), T(0));
}

template <class T>
Tensor<T> to_tensor(const GridMap& map) {
  const int h = map.height(), w = map.width(), c = map.channels();
  Tensor<T> t({c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        t[(static_cast<std::size_t>(ch) * h + y) * w + x] = static_cast<T>(map.at(y, x, ch));
  return t;
}

template <class T>
GridMap to_grid(const Tensor<T>& t) {
  if (t.rank() != 3) throw ShapeError("to_grid expects (C, H, W)");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  GridMap map(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        map.at(y, x, ch) = static_cast<float>(t[(static_cast<std::size_t>(ch) * h + y) * w + x]);
  return map;
}

GridMap backbone_forward(const Model<float>& model, const GridMap& image) {
  if (image.channels() != 3) throw ShapeError("backbone_forward expects a 3-channel image");
  ad::Tape<float> tape;
  tape.set_grad_enabled(false);
  auto& params = const_cast<Model<float>&>(model).params();
  Context<float> ctx(tape, params);
  return to_grid(model.backbone(ctx, tape.constant(to_tensor<float>(image))).value());
}

FieldMaps prior_head_forward(const Model<float>& model, const GridMap& features) {
  ad::Tape<float> tape;
  tape.set_grad_enabled(false);
  Context<float> ctx(tape, const_cast<Model<float>&>(model).params());
  Var<float> logits = model.head(ctx, tape.constant(to_tensor<float>(features)));
  const GridMap raw = to_grid(logits.value());
  FieldMaps out{GridMap(raw.height(), raw.width(), 1), GridMap(raw.height(), raw.width(), 1),
                raw.slice_channels(2, 2)};
  for (int y = 0; y < raw.height(); ++y)
    for (int x = 0; x < raw.width(); ++x) {
      out.cls.at(y, x) = 1.0f / (1.0f + std::exp(-raw.at(y, x, 0)));
      out.dist.at(y, x) = std::clamp(raw.at(y, x, 1), 0.0f, 1.0f);
    }
  return out;
}

GridMap pack_priors(const FieldMaps& fields) {
  GridMap out(fields.height(), fields.width(), 4);
  for (int y = 0; y < fields.height(); ++y)
    for (int x = 0; x < fields.width(); ++x) {
      out.at(y, x, 0) = fields.cls.at(y, x);
      out.at(y, x, 1) = fields.dist.at(y, x);
      out.at(y, x, 2) = fields.dir.at(y, x, 0);
      out.at(y, x, 3) = fields.dir.at(y, x, 1);
    }
  return out;
}

std::vector<ControlPolygon> deform_iterate(const Model<float>& model, const ControlPolygon& proposal,
                                           const GridMap& features, const GridMap& priors, int iterations) {
  ad::Tape<float> tape;
  tape.set_grad_enabled(false);
  Context<float> ctx(tape, const_cast<Model<float>&>(model).params());
  const int n = proposal.size();
  Tensor<float> pts({n, 2});
  for (int i = 0; i < n; ++i) {
    pts[2 * i] = static_cast<float>(proposal[i].x);
    pts[2 * i + 1] = static_cast<float>(proposal[i].y);
  }
  auto steps = model.deform(ctx, tape.constant(to_tensor<float>(features)), tape.constant(to_tensor<float>(priors)),
                            tape.constant(std::move(pts)), iterations);
  std::vector<ControlPolygon> out;
  for (const auto& s : steps) {
    std::vector<Point> p(n);
    for (int i = 0; i < n; ++i) p[i] = {s.value()[2 * i], s.value()[2 * i + 1]};
    out.emplace_back(std::move(p));
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template class Context<float>;
template class Context<double>;
template Var<float> gcn_layer(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> gcn_layer(const Var<double>&, const Var<double>&, const Var<double>&);
template void copy_parameters(const Model<float>&, Model<float>&, const std::vector<std::string>&);
template void copy_parameters(const Model<double>&, Model<double>&, const std::vector<std::string>&);
template void zero_parameters(Model<float>&, const std::string&);
template void zero_parameters(Model<double>&, const std::string&);
template Tensor<float> to_tensor(const GridMap&);
template Tensor<double> to_tensor(const GridMap&);
template GridMap to_grid(const Tensor<float>&);
template GridMap to_grid(const Tensor<double>&);

}  // namespace textdeform

#include "textdeform/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "textdeform/errors.hpp"

namespace textdeform {

void LossConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("loss.alpha must be > 0");
  if (!(lambda > 0.0)) throw ConfigError("loss.lambda must be > 0");
  if (eps < 1) throw ConfigError("loss.eps must be >= 1");
  if (!(ohem_neg_ratio >= 0.0)) throw ConfigError("loss.ohem_neg_ratio must be >= 0");
  if (!(smooth_l1_beta > 0.0)) throw ConfigError("loss.smooth_l1_beta must be > 0");
  if (ohem_empty_negatives < 0) throw ConfigError("loss.ohem_empty_negatives must be >= 0");
}

std::vector<std::uint8_t> ohem_select(std::span<const double> loss, std::span<const float> cls_gt, double ratio,
                                      int empty_negatives, std::span<const std::uint8_t> valid) {
  if (loss.size() != cls_gt.size() || (!valid.empty() && valid.size() != loss.size()))
    throw ShapeError("ohem_select: size mismatch");
  std::vector<std::uint8_t> mask(loss.size(), 0);
  std::vector<int> negatives;
  std::size_t positives = 0;
  for (std::size_t k = 0; k < loss.size(); ++k) {
    if (!valid.empty() && !valid[k]) continue;
    if (cls_gt[k] > 0.5f) {
      mask[k] = 1;
      ++positives;
    } else {
      negatives.push_back(static_cast<int>(k));
    }
  }
  std::size_t keep = positives > 0 ? static_cast<std::size_t>(std::floor(ratio * static_cast<double>(positives)))
                                   : static_cast<std::size_t>(empty_negatives);
  keep = std::min(keep, negatives.size());
  std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(keep), negatives.end(),
                    [&](int a, int b) { return loss[a] > loss[b] || (loss[a] == loss[b] && a < b); });
  for (std::size_t i = 0; i < keep; ++i) mask[negatives[i]] = 1;
  return mask;
}

std::vector<std::uint8_t> ohem_select(const GridMap& per_pixel_loss, const GridMap& cls_gt, double ratio) {
  if (per_pixel_loss.channels() != 1 || cls_gt.channels() != 1 || per_pixel_loss.height() != cls_gt.height() ||
      per_pixel_loss.width() != cls_gt.width())
    throw ShapeError("ohem_select: maps must be single-channel and the same size");
  const auto v = per_pixel_loss.values();
  std::vector<double> loss(v.begin(), v.end());
  return ohem_select(loss, cls_gt.values(), ratio);
}

std::vector<double> bce_per_pixel(const GridMap& pred, const GridMap& gt) {
  if (pred.values().size() != gt.values().size()) throw ShapeError("bce_per_pixel: size mismatch");
  constexpr double kClamp = 1e-7;
  std::vector<double> out(pred.values().size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double p = std::clamp(static_cast<double>(pred.values()[k]), kClamp, 1.0 - kClamp);
    const double y = gt.values()[k];
    out[k] = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return out;
}

double loss_cls(const GridMap& pred, const GridMap& gt, const LossConfig& cfg) {
  const auto bce = bce_per_pixel(pred, gt);
  const auto mask = ohem_select(bce, gt.values(), cfg.ohem_neg_ratio, cfg.ohem_empty_negatives);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < bce.size(); ++k)
    if (mask[k]) {
      sum += bce[k];
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double loss_dist(const GridMap& pred, const GridMap& gt, std::span<const std::uint8_t> mask) {
  ad::Tape<double> tape;
  const auto v = pred.values();
  auto p = tape.constant(ad::Tensor<double>({static_cast<int>(v.size())}, std::vector<double>(v.begin(), v.end())));
  return ad_loss::dist_mse(p, gt.values(), mask).value()[0];
}

double loss_dir(const GridMap& pred_dir, const GridMap& gt_dir, const GridMap& segment_size, const GridMap& gt_cls) {
  if (pred_dir.channels() != 2) throw ShapeError("loss_dir: prediction needs 2 channels");
  ad::Tape<double> tape;
  const int h = pred_dir.height(), w = pred_dir.width();
  ad::Tensor<double> t({2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 2; ++c) t[(static_cast<std::size_t>(c) * h + y) * w + x] = pred_dir.at(y, x, c);
  return ad_loss::direction(tape.constant(std::move(t)), gt_dir, segment_size, gt_cls).value()[0];
}

namespace {

double smooth_l1(double d, double beta) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double d, double beta) {
  const double a = std::abs(d);
  if (a < beta) return d / beta;
  return d > 0 ? 1.0 : -1.0;
}

template <class Get>
std::pair<int, double> min_shift(int n, const ControlPolygon& gt, Get pred, double beta) {
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const Point& g = gt[(j + i) % n];
      const auto [px, py] = pred(i);
      s += smooth_l1(px - g.x, beta) + smooth_l1(py - g.y, beta);
    }
    if (s < best_val) {
      best_val = s;
      best = j;
    }
  }
  return {best, best_val};
}

}  // namespace

double matching_loss(const ControlPolygon& pred, const ControlPolygon& gt, double beta) {
  if (pred.size() != gt.size()) throw ShapeError("matching_loss: point counts differ");
  return min_shift(pred.size(), gt, [&](int i) { return std::pair{pred[i].x, pred[i].y}; }, beta).second;
}

int best_shift(const ControlPolygon& pred, const ControlPolygon& gt, double beta) {
  if (pred.size() != gt.size()) throw ShapeError("best_shift: point counts differ");
  return min_shift(pred.size(), gt, [&](int i) { return std::pair{pred[i].x, pred[i].y}; }, beta).first;
}

double deform_weight(double epoch, const LossConfig& cfg) {
  const double e = static_cast<double>(cfg.eps);
  return cfg.lambda / (1.0 + std::exp((epoch - e) / e));
}

double total_loss(const LossParts& p, double epoch, const LossConfig& cfg) {
  return p.cls + cfg.alpha * p.dist + p.dir + deform_weight(epoch, cfg) * p.match;
}

namespace ad_loss {

using ad::Tensor;
using ad::Var;

template <class T>
Var<T> cls_from_logits(const Var<T>& logits, std::span<const float> gt, std::span<const std::uint8_t> mask) {
  const auto& z = logits.value();
  if (z.size() != gt.size() || z.size() != mask.size()) throw ShapeError("cls loss: size mismatch");
  std::size_t n = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (!mask[k]) continue;
    const double v = z[k];
    // softplus(v) - y v, written to avoid overflow for large |v|.
    sum += std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - gt[k] * v;
    ++n;
  }
  const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
  ad::Tape<T>* tape = logits.tape();
  const int zi = logits.id();
  const int out = static_cast<int>(tape->size());
  std::vector<float> g(gt.begin(), gt.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return tape->record(Tensor<T>({1}, {static_cast<T>(sum * inv)}), {logits},
                      [tape, zi, out, inv, g = std::move(g), m = std::move(m)]() {
                        const T up = tape->grad(out)[0];
                        const auto& zv = tape->value(zi);
                        auto& dz = tape->grad(zi);
                        for (std::size_t k = 0; k < zv.size(); ++k) {
                          if (!m[k]) continue;
                          const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(zv[k])));
                          dz[k] += static_cast<T>(up * (s - g[k]) * inv);
                        }
                      });
}

template <class T>
Var<T> dist_mse(const Var<T>& pred, std::span<const float> gt, std::span<const std::uint8_t> mask) {
  const auto& p = pred.value();
  if (p.size() != gt.size() || p.size() != mask.size()) throw ShapeError("dist loss: size mismatch");
  std::size_t n = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!mask[k]) continue;
    const double d = static_cast<double>(p[k]) - gt[k];
    sum += d * d;
    ++n;
  }
  const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
  ad::Tape<T>* tape = pred.tape();
  const int pi = pred.id();
  const int out = static_cast<int>(tape->size());
  std::vector<float> g(gt.begin(), gt.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return tape->record(Tensor<T>({1}, {static_cast<T>(sum * inv)}), {pred},
                      [tape, pi, out, inv, g = std::move(g), m = std::move(m)]() {
                        const T up = tape->grad(out)[0];
                        const auto& pv = tape->value(pi);
                        auto& dp = tape->grad(pi);
                        for (std::size_t k = 0; k < pv.size(); ++k)
                          if (m[k]) dp[k] += static_cast<T>(up * 2.0 * (pv[k] - g[k]) * inv);
                      });
}

template <class T>
Var<T> direction(const Var<T>& pred, const GridMap& gt_dir, const GridMap& segment_size, const GridMap& gt_cls) {
  const auto& pv = pred.value();
  const int h = gt_dir.height(), w = gt_dir.width();
  if (pv.rank() != 3 || pv.dim(0) != 2 || pv.dim(1) != h || pv.dim(2) != w || gt_dir.channels() != 2 ||
      segment_size.height() != h || segment_size.width() != w || gt_cls.height() != h || gt_cls.width() != w)
    throw ShapeError("direction loss: shape mismatch");
  constexpr double kTiny = 1e-6;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<double> gx(hw), gy(hw), weight(hw);
  std::vector<std::uint8_t> text(hw);
  std::size_t text_count = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * w + x;
      gx[k] = gt_dir.at(y, x, 0);
      gy[k] = gt_dir.at(y, x, 1);
      const double seg = segment_size.at(y, x);
      if (!(seg >= 1.0)) throw DataError("direction loss: segment_size must be >= 1");
      weight[k] = 1.0 / std::sqrt(seg);
      text[k] = gt_cls.at(y, x) > 0.5f;
      text_count += text[k];
    }
  const double inv_omega = 1.0 / static_cast<double>(hw);
  const double inv_text = text_count ? 1.0 / static_cast<double>(text_count) : 0.0;

  double norm_term = 0.0, angle_term = 0.0;
  for (std::size_t k = 0; k < hw; ++k) {
    const double px = pv[k], py = pv[hw + k];
    norm_term += weight[k] * std::hypot(px - gx[k], py - gy[k]);
    if (!text[k]) continue;
    const double pn = std::hypot(px, py), gn = std::hypot(gx[k], gy[k]);
    if (pn < kTiny || gn < kTiny) continue;
    angle_term += 1.0 - (px * gx[k] + py * gy[k]) / (pn * gn);
  }
  const double value = norm_term * inv_omega + angle_term * inv_text;

  ad::Tape<T>* tape = pred.tape();
  const int pi = pred.id();
  const int out = static_cast<int>(tape->size());
  return tape->record(
      Tensor<T>({1}, {static_cast<T>(value)}), {pred},
      [tape, pi, out, hw, inv_omega, inv_text, gx = std::move(gx), gy = std::move(gy), weight = std::move(weight),
       text = std::move(text)]() {
        const double up = tape->grad(out)[0];
        const auto& p = tape->value(pi);
        auto& dp = tape->grad(pi);
        for (std::size_t k = 0; k < hw; ++k) {
          const double px = p[k], py = p[hw + k];
          const double dx = px - gx[k], dy = py - gy[k];
          const double dn = std::hypot(dx, dy);
          double ax = 0.0, ay = 0.0;
          if (dn > 0.0) {
            ax += weight[k] * inv_omega * dx / dn;
            ay += weight[k] * inv_omega * dy / dn;
          }
          if (text[k]) {
            const double pn = std::hypot(px, py), gn = std::hypot(gx[k], gy[k]);
            if (pn >= kTiny && gn >= kTiny) {
              const double c = (px * gx[k] + py * gy[k]) / (pn * gn);
              ax -= inv_text * (gx[k] / (pn * gn) - c * px / (pn * pn));
              ay -= inv_text * (gy[k] / (pn * gn) - c * py / (pn * pn));
            }
          }
          dp[k] += static_cast<T>(up * ax);
          dp[hw + k] += static_cast<T>(up * ay);
        }
      });
}

template <class T>
Var<T> matching(const Var<T>& pred, const ControlPolygon& gt, double beta) {
  const auto& pv = pred.value();
  const int n = gt.size();
  if (pv.rank() != 2 || pv.dim(0) != n || pv.dim(1) != 2) throw ShapeError("matching loss: point counts differ");
  const auto [shift, value] =
      min_shift(n, gt, [&](int i) { return std::pair<double, double>{pv[2 * i], pv[2 * i + 1]}; }, beta);
  std::vector<double> target(2 * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    target[2 * i] = gt[(shift + i) % n].x;
    target[2 * i + 1] = gt[(shift + i) % n].y;
  }
  ad::Tape<T>* tape = pred.tape();
  const int pi = pred.id();
  const int out = static_cast<int>(tape->size());
  return tape->record(Tensor<T>({1}, {static_cast<T>(value)}), {pred},
                      [tape, pi, out, beta, target = std::move(target)]() {
                        const double up = tape->grad(out)[0];
                        const auto& p = tape->value(pi);
                        auto& dp = tape->grad(pi);
                        for (std::size_t k = 0; k < target.size(); ++k)
                          dp[k] += static_cast<T>(up * smooth_l1_grad(p[k] - target[k], beta));
                      });
}

#define TEXTDEFORM_INSTANTIATE(T)                                                                            \
  template Var<T> cls_from_logits(const Var<T>&, std::span<const float>, std::span<const std::uint8_t>);    \
  template Var<T> dist_mse(const Var<T>&, std::span<const float>, std::span<const std::uint8_t>);           \
  template Var<T> direction(const Var<T>&, const GridMap&, const GridMap&, const GridMap&);                 \
  template Var<T> matching(const Var<T>&, const ControlPolygon&, double);

TEXTDEFORM_INSTANTIATE(float)
TEXTDEFORM_INSTANTIATE(double)
#undef TEXTDEFORM_INSTANTIATE

}  // namespace ad_loss

}  // namespace textdeform

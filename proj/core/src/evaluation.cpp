#include "textdeform/evaluation.hpp"

#include <algorithm>
#include <tuple>

#include "textdeform/errors.hpp"

namespace textdeform {

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("eval.iou_threshold must lie in (0, 1]");
  if (iou.supersample < 1 || iou.min_cells < 1) throw ConfigError("eval.iou settings must be positive");
}

MatchCounts match_image(const std::vector<Detection>& dets, const std::vector<GtRegion>& gts,
                        const EvalConfig& cfg) {
  struct Pair {
    double iou;
    int det;
    int gt;
  };
  std::vector<Pair> pairs;
  std::vector<double> best_ignore(dets.size(), 0.0);
  MatchCounts c;
  for (const auto& g : gts) c.ground_truths += g.ignore ? 0 : 1;
  for (int d = 0; d < static_cast<int>(dets.size()); ++d) {
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      const double iou = polygon_iou(dets[d].polygon, gts[g].polygon, cfg.iou);
      if (gts[g].ignore) {
        best_ignore[d] = std::max(best_ignore[d], iou);
      } else if (iou >= cfg.iou_threshold) {
        pairs.push_back({iou, d, g});
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (dets[a.det].confidence != dets[b.det].confidence) return dets[a.det].confidence > dets[b.det].confidence;
    return std::tie(a.det, a.gt) < std::tie(b.det, b.gt);
  });
  std::vector<bool> det_used(dets.size(), false), gt_used(gts.size(), false);
  for (const Pair& p : pairs) {
    if (det_used[p.det] || gt_used[p.gt]) continue;
    det_used[p.det] = gt_used[p.gt] = true;
    ++c.true_positives;
  }
  for (std::size_t d = 0; d < dets.size(); ++d)
    if (det_used[d] || best_ignore[d] < cfg.iou_threshold) ++c.detections;
  return c;
}

DetectionMetrics metrics_from_counts(const MatchCounts& c) {
  DetectionMetrics m;
  m.counts = c;
  m.precision = c.detections > 0 ? static_cast<double>(c.true_positives) / c.detections : 0.0;
  m.recall = c.ground_truths > 0 ? static_cast<double>(c.true_positives) / c.ground_truths : 0.0;
  m.f_measure = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

DetectionMetrics evaluate(const std::vector<std::vector<Detection>>& dets,
                          const std::vector<std::vector<GtRegion>>& gts, const EvalConfig& cfg) {
  if (dets.size() != gts.size()) throw ShapeError("evaluate: detection and ground-truth lists differ in length");
  MatchCounts total;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const MatchCounts c = match_image(dets[i], gts[i], cfg);
    total.true_positives += c.true_positives;
    total.detections += c.detections;
    total.ground_truths += c.ground_truths;
  }
  return metrics_from_counts(total);
}

std::vector<GtRegion> gt_regions(const AnnotatedSample& s) {
  std::vector<GtRegion> out;
  for (const auto& inst : s.instances) out.push_back({inst.boundary, inst.ignore});
  return out;
}

}  // namespace textdeform

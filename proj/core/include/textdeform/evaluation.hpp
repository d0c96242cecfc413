#pragma once

#include <string>
#include <vector>

#include "textdeform/fields.hpp"
#include "textdeform/geometry.hpp"

namespace textdeform {

struct EvalConfig {
  double iou_threshold = 0.5;
  IouConfig iou;

  void validate() const;
};

struct Detection {
  Polygon polygon;
  double confidence = 1.0;
};

struct GtRegion {
  Polygon polygon;
  bool ignore = false;
};

struct MatchCounts {
  int true_positives = 0;
  int detections = 0;  // after discarding detections that land on ignore regions
  int ground_truths = 0;  // non-ignore only
};

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  MatchCounts counts;
};

/// Greedy one-to-one matching by descending IoU; equal IoUs go to the
/// detection with higher confidence, then lower index. Unmatched detections
/// whose best overlap is an ignore region are dropped from the count.
MatchCounts match_image(const std::vector<Detection>& dets, const std::vector<GtRegion>& gts, const EvalConfig& cfg);

DetectionMetrics metrics_from_counts(const MatchCounts& c);

DetectionMetrics evaluate(const std::vector<std::vector<Detection>>& dets,
                          const std::vector<std::vector<GtRegion>>& gts, const EvalConfig& cfg = {});

std::vector<GtRegion> gt_regions(const AnnotatedSample& s);

}  // namespace textdeform

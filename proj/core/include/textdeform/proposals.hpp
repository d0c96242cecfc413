#pragma once

#include <cstdint>
#include <vector>

#include "textdeform/geometry.hpp"

namespace textdeform {

struct ProposalConfig {
  double th_d = 0.3;
  double th_s = 0.8;
  int n_control = 20;
  int min_area = 16;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Prior maps produced by the proposal head (or taken from ground truth).
struct FieldMaps {
  GridMap cls;   // H x W x 1, text probability
  GridMap dist;  // H x W x 1, normalized distance
  GridMap dir;   // H x W x 2

  int height() const { return dist.height(); }
  int width() const { return dist.width(); }
};

struct BoundaryProposal {
  ControlPolygon contour;
  double confidence = 0.0;
  /// Flat pixel indices (y * width + x) of the source component.
  std::vector<int> pixels;
};

/// 8-connected components of a binary mask, each as a list of flat indices
/// in raster order.
std::vector<std::vector<int>> label_components(const std::vector<std::uint8_t>& mask, int height, int width);

/// Moore-neighbour border following of the component's outer boundary,
/// returning pixel centres in tracing order. `start` must be the component's
/// first pixel in raster order.
std::vector<Point> trace_outer_contour(const std::vector<std::uint8_t>& mask, int height, int width, int start);

/// Drops vertices that are collinear with their neighbours.
std::vector<Point> simplify_contour(const std::vector<Point>& chain);

/// Thresholds dist > th_d, keeps components with at least min_area pixels,
/// traces and resamples each outer contour to n_control points and scores it
/// by the mean classification probability over the component.
std::vector<BoundaryProposal> extract_candidates(const FieldMaps& fields, const ProposalConfig& cfg);

/// Keeps proposals with confidence >= th_s, preserving order.
std::vector<BoundaryProposal> filter_by_confidence(std::vector<BoundaryProposal> cands, const ProposalConfig& cfg);

}  // namespace textdeform

#include "textdeform/fields.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

namespace textdeform {

namespace {

constexpr double kOnBoundary = 1e-9;

struct PixelHit {
  int owner = -1;
  double distance = 0.0;
  Point nearest;
};

}  // namespace

GroundTruthBundle compute_ground_truth(const std::vector<TextInstance>& instances, int height, int width) {
  const std::size_t npix = static_cast<std::size_t>(height) * width;
  std::vector<PixelHit> hits(npix);

  for (int i = 0; i < static_cast<int>(instances.size()); ++i) {
    const auto& pts = instances[i].boundary.points();
    const BoundingBox b = instances[i].boundary.bounds();
    const int x0 = std::max(0, static_cast<int>(std::ceil(b.min_x)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(b.max_x)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(b.min_y)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(b.max_y)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Point p{static_cast<double>(x), static_cast<double>(y)};
        const BoundaryDistance bd = distance_to_boundary(pts, p);
        if (bd.distance > kOnBoundary && !contains(pts, p)) continue;
        PixelHit& hit = hits[static_cast<std::size_t>(y) * width + x];
        // Overlaps go to the instance whose boundary is nearest.
        if (hit.owner < 0 || bd.distance < hit.distance) hit = {i, bd.distance, bd.nearest};
      }
    }
  }

  GroundTruthBundle gt;
  gt.scale.assign(instances.size(), 0.0);
  gt.dropped.assign(instances.size(), false);
  for (const PixelHit& h : hits) {
    if (h.owner >= 0 && h.distance > kOnBoundary) {
      gt.scale[h.owner] = std::max(gt.scale[h.owner], h.distance);
    }
  }
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (gt.scale[i] <= 0.0) {
      gt.dropped[i] = true;
      spdlog::warn("text instance {} has no interior pixel centre, dropped from ground truth",
                   instances[i].id);
    }
  }

  gt.cls = GridMap(height, width, 1);
  gt.dist = GridMap(height, width, 1);
  gt.dir = GridMap(height, width, 2);
  gt.segment_size = GridMap(height, width, 1);
  gt.owner.assign(npix, -1);

  std::vector<long> counts(instances.size(), 0);
  long background = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * width + x;
      const PixelHit& h = hits[k];
      if (h.owner < 0 || gt.dropped[h.owner]) {
        ++background;
        continue;
      }
      gt.owner[k] = h.owner;
      ++counts[h.owner];
      gt.cls.at(y, x) = 1.0f;
      if (h.distance > kOnBoundary) {
        gt.dist.at(y, x) = static_cast<float>(h.distance / gt.scale[h.owner]);
        gt.dir.at(y, x, 0) = static_cast<float>((x - h.nearest.x) / h.distance);
        gt.dir.at(y, x, 1) = static_cast<float>((y - h.nearest.y) / h.distance);
      }
    }
  }
  for (std::size_t k = 0; k < npix; ++k) {
    const int o = gt.owner[k];
    gt.segment_size.values()[k] = static_cast<float>(o >= 0 ? counts[o] : background);
  }
  return gt;
}

GroundTruthBundle compute_ground_truth(const AnnotatedSample& sample) {
  return compute_ground_truth(sample.instances, sample.image.height(), sample.image.width());
}

}  // namespace textdeform

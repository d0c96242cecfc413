#pragma once

#include <string>
#include <vector>

#include "textdeform/geometry.hpp"

namespace textdeform {

struct TextInstance {
  Polygon boundary;
  int id = 0;
  bool ignore = false;
};

struct AnnotatedSample {
  std::string name;
  GridMap image;  // H x W x 3, values in [0, 1]
  std::vector<TextInstance> instances;
};

/// Ground-truth targets for the proposal model.
struct GroundTruthBundle {
  GridMap cls;           // H x W x 1, {0, 1}
  GridMap dist;          // H x W x 1, distance to boundary / instance scale
  GridMap dir;           // H x W x 2, unit vector from nearest boundary point into the text
  GridMap segment_size;  // H x W x 1, pixel count of the segment containing the pixel
  std::vector<int> owner;           // H x W, index into instances or -1
  std::vector<double> scale;        // per instance: max boundary distance L (0 if dropped)
  std::vector<bool> dropped;        // instances without an interior pixel centre
};

/// Computes classification, normalized distance and direction fields for the
/// given instances on an H x W pixel lattice (pixel centres at integers).
/// The nearest boundary point is taken on the continuous polyline.
GroundTruthBundle compute_ground_truth(const std::vector<TextInstance>& instances, int height, int width);

GroundTruthBundle compute_ground_truth(const AnnotatedSample& sample);

}  // namespace textdeform

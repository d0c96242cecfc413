#pragma once
// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library code it checks.

#include <cstdint>
#include <random>
#include <vector>

#include "textdeform/geometry.hpp"

namespace oracle {

using textdeform::Point;

struct FieldSample {
  bool inside = false;
  double distance = 0.0;
  /// Unit vectors from every boundary point attaining the minimum distance
  /// (up to a small tolerance) toward the pixel. More than one entry means
  /// the pixel sits on the medial axis.
  std::vector<Point> directions;
};

/// Winding-number inside test plus nearest boundary points found by dense
/// sampling of every edge at `step` px, each refined by golden-section
/// search inside its sampling interval.
FieldSample field_at(const std::vector<Point>& ring, Point p, double step = 1e-3);

/// Winding number of the closed ring around p.
int winding_number(const std::vector<Point>& ring, Point p);

/// Star-shaped polygon around (cx, cy) with radii drawn in [rmin, rmax];
/// simple by construction.
std::vector<Point> random_star(std::mt19937_64& rng, double cx, double cy, double rmin, double rmax, int vertices);

/// Symmetric normalised adjacency of the two-hop ring from explicit
/// neighbour enumeration.
std::vector<double> ring_propagation(int n);

double smooth_l1(double d, double beta);
/// min over shifts j of sum_i smoothL1(p_i, g_{(i+j) mod n}), loops only.
double matching_brute(const std::vector<Point>& p, const std::vector<Point>& g, double beta);

/// Reference OHEM: full sort of negatives by descending loss, ties to the
/// lower index.
std::vector<std::uint8_t> ohem_reference(const std::vector<double>& loss, const std::vector<float>& gt, double ratio,
                                         int empty_negatives);

/// Exact area of the intersection of two convex polygons by half-plane
/// clipping.
double convex_intersection_area(const std::vector<Point>& a, const std::vector<Point>& b);
double convex_iou(const std::vector<Point>& a, const std::vector<Point>& b);

/// Largest number of one-to-one pairs with iou[d][g] >= threshold, by
/// enumerating every assignment. Ignore flags are not handled here.
int max_matching(const std::vector<std::vector<double>>& iou, double threshold);

/// Segment-pair test for simplicity of a closed ring.
bool ring_is_simple(const std::vector<Point>& ring);

}  // namespace oracle

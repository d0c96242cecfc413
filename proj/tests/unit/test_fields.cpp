#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "textdeform/fields.hpp"

using namespace textdeform;

namespace {

TextInstance instance(std::vector<Point> pts, int id = 0) { return {Polygon(std::move(pts)), id, false}; }

}  // namespace

TEST(Fields, BackgroundPixelsAreZero) {
  const auto gt = compute_ground_truth({instance({{2.5, 2.5}, {8.5, 2.5}, {8.5, 6.5}, {2.5, 6.5}})}, 16, 16);
  EXPECT_EQ(gt.cls.at(12, 12), 0.0f);
  EXPECT_EQ(gt.dist.at(12, 12), 0.0f);
  EXPECT_EQ(gt.dir.at(12, 12, 0), 0.0f);
  EXPECT_EQ(gt.dir.at(12, 12, 1), 0.0f);
  EXPECT_EQ(gt.owner[12 * 16 + 12], -1);
}

TEST(Fields, BoundaryVertexPixelHasZeroDistanceAndDirection) {
  const auto gt = compute_ground_truth({instance({{3, 3}, {10, 3}, {10, 9}, {3, 9}})}, 16, 16);
  EXPECT_EQ(gt.dist.at(3, 3), 0.0f);
  EXPECT_EQ(gt.dir.at(3, 3, 0), 0.0f);
  EXPECT_EQ(gt.dir.at(3, 3, 1), 0.0f);
}

TEST(Fields, RectangleLeftEdgeDirection) {
  // Pixel rows 3..14 inside, so the deepest pixel sits 5.5 from the boundary.
  const auto gt = compute_ground_truth({instance({{2.5, 2.5}, {20.5, 2.5}, {20.5, 14.5}, {2.5, 14.5}})}, 24, 24);
  EXPECT_EQ(gt.scale[0], 5.5);
  const int y = 8, x = 4;  // gap 1.5 to the left edge, >= 5.5 to the others
  EXPECT_NEAR(gt.dir.at(y, x, 0), 1.0, 1e-7);
  EXPECT_NEAR(gt.dir.at(y, x, 1), 0.0, 1e-7);
  EXPECT_NEAR(gt.dist.at(y, x), 1.5 / 5.5, 1e-7);
}

TEST(Fields, AgreesWithDenseOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto ring = oracle::random_star(rng, 15.2, 16.1, 5, 13, 8);
    const auto gt = compute_ground_truth({instance(ring)}, 32, 32);
    const double L = gt.scale[0];
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const auto o = oracle::field_at(ring, {double(x), double(y)});
        ASSERT_EQ(o.inside, gt.cls.at(y, x) > 0.5f) << x << "," << y;
        if (!o.inside) continue;
        EXPECT_NEAR(gt.dist.at(y, x) * L, o.distance, 1e-3);
        double best = 1e9;
        for (const Point& u : o.directions)
          best = std::min(best, std::max(std::fabs(gt.dir.at(y, x, 0) - u.x), std::fabs(gt.dir.at(y, x, 1) - u.y)));
        EXPECT_LE(best, 1e-3);
      }
  }
}

TEST(Fields, SegmentSizesAndPerInstanceScale) {
  const auto a = instance({{1.5, 1.5}, {9.5, 1.5}, {9.5, 9.5}, {1.5, 9.5}}, 1);
  const auto b = instance({{12.5, 3.5}, {18.5, 3.5}, {18.5, 8.5}, {12.5, 8.5}}, 2);
  const auto gt = compute_ground_truth({a, b}, 20, 20);
  long na = 0, nb = 0, bg = 0;
  for (int o : gt.owner) (o == 0 ? na : o == 1 ? nb : bg) += 1;
  EXPECT_EQ(na, 64);
  EXPECT_EQ(nb, 30);
  EXPECT_EQ(gt.segment_size.at(5, 5), 64.0f);
  EXPECT_EQ(gt.segment_size.at(5, 15), 30.0f);
  EXPECT_EQ(gt.segment_size.at(19, 19), static_cast<float>(bg));
  float max_a = 0, max_b = 0;
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) {
      const int o = gt.owner[y * 20 + x];
      if (o == 0) max_a = std::max(max_a, gt.dist.at(y, x));
      if (o == 1) max_b = std::max(max_b, gt.dist.at(y, x));
    }
  EXPECT_FLOAT_EQ(max_a, 1.0f);
  EXPECT_FLOAT_EQ(max_b, 1.0f);
}

TEST(Fields, InstanceWithoutPixelCentreIsDropped) {
  const auto gt = compute_ground_truth({instance({{3.1, 3.1}, {3.9, 3.1}, {3.9, 3.9}})}, 8, 8);
  ASSERT_EQ(gt.dropped.size(), 1u);
  EXPECT_TRUE(gt.dropped[0]);
  for (float v : gt.cls.values()) EXPECT_EQ(v, 0.0f);
}

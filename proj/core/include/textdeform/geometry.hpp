#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace textdeform {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
  friend Point operator*(Point p, double s) { return {s * p.x, s * p.y}; }
  friend bool operator==(Point a, Point b) = default;
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point p) { return std::hypot(p.x, p.y); }

struct BoundingBox {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
};

BoundingBox bounds_of(std::span<const Point> pts);

/// Shoelace area. Positive means counter-clockwise in the (x right, y up)
/// convention used throughout the library.
double signed_area(std::span<const Point> pts);
double perimeter(std::span<const Point> pts);

/// Returns the points in counter-clockwise order (positive signed area).
/// Throws GeometryError for fewer than 3 points, non-finite coordinates or
/// zero area.
std::vector<Point> normalize_orientation(std::span<const Point> pts);

/// Closed simple polygon, stored counter-clockwise.
class Polygon {
 public:
  explicit Polygon(std::vector<Point> pts);

  const std::vector<Point>& points() const { return pts_; }
  std::size_t size() const { return pts_.size(); }
  const Point& operator[](std::size_t i) const { return pts_[i]; }

  double area() const { return signed_area(pts_); }
  double perimeter() const { return textdeform::perimeter(pts_); }
  BoundingBox bounds() const { return bounds_of(pts_); }

 private:
  std::vector<Point> pts_;
};

/// Fixed-size closed contour of control points. Unlike Polygon it does not
/// reject degenerate shapes: deformation outputs may fold temporarily.
class ControlPolygon {
 public:
  ControlPolygon() = default;
  explicit ControlPolygon(std::vector<Point> pts);

  const std::vector<Point>& points() const { return pts_; }
  std::vector<Point>& points() { return pts_; }
  int size() const { return static_cast<int>(pts_.size()); }
  const Point& operator[](std::size_t i) const { return pts_[i]; }

 private:
  std::vector<Point> pts_;
};

/// Places n points at equal arc-length spacing perimeter/n along the
/// boundary, starting at the vertex with the lexicographically smallest
/// (y, x) and following the polygon's counter-clockwise order.
ControlPolygon resample_uniform(const Polygon& poly, int n);

/// Closest point to p on segment [a, b].
Point nearest_on_segment(Point a, Point b, Point p);

struct BoundaryDistance {
  double distance = 0.0;
  Point nearest;
};

/// Distance from p to the closed polyline of the polygon.
BoundaryDistance distance_to_boundary(std::span<const Point> pts, Point p);

/// Even-odd point-in-polygon test (boundary handling unspecified).
bool contains(std::span<const Point> pts, Point p);

bool segments_intersect(Point a, Point b, Point c, Point d);

/// Minimum distance between the boundaries of two polygons, 0 when the
/// boundaries cross or one contains the other.
double polygon_distance(const Polygon& a, const Polygon& b);

/// Dense H x W x C float map, row-major with interleaved channels.
class GridMap {
 public:
  GridMap() = default;
  GridMap(int height, int width, int channels, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool empty() const { return values_.empty(); }

  float& at(int y, int x, int c = 0) { return values_[index(y, x, c)]; }
  float at(int y, int x, int c = 0) const { return values_[index(y, x, c)]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  bool all_finite() const;

  /// Extracts channels [first, first+count) into a new map.
  GridMap slice_channels(int first, int count) const;

  friend bool operator==(const GridMap&, const GridMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> values_;
};

/// Bilinear blend of the four lattice neighbours. Pixel centres sit at
/// integer coordinates; callers clamp to [0, w-1] x [0, h-1] first.
std::vector<float> bilinear_sample(const GridMap& map, double x, double y);

/// Pixel mask (1 = centre inside the polygon) over an H x W lattice, using
/// a half-open scanline rule.
std::vector<std::uint8_t> rasterize(const Polygon& poly, int height, int width);

struct IouConfig {
  /// Samples per pixel unit along each axis.
  int supersample = 4;
  /// Lower bound on the sample count along the longer side of the union
  /// bounding box, so sub-pixel polygons are still resolved.
  int min_cells = 256;
};

/// IoU by supersampled rasterization of both polygons on a shared grid
/// covering their joint bounding box.
double polygon_iou(const Polygon& a, const Polygon& b, const IouConfig& cfg = {});

}  // namespace textdeform

#include "textdeform/geometry.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "textdeform/errors.hpp"

namespace textdeform {

BoundingBox bounds_of(std::span<const Point> pts) {
  BoundingBox b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const Point& p : pts) {
    b.min_x = std::min(b.min_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_x = std::max(b.max_x, p.x);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

double signed_area(std::span<const Point> pts) {
  const std::size_t n = pts.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = pts[i];
    const Point& b = pts[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

double perimeter(std::span<const Point> pts) {
  const std::size_t n = pts.size();
  double len = 0.0;
  for (std::size_t i = 0; i < n; ++i) len += norm(pts[(i + 1) % n] - pts[i]);
  return len;
}

std::vector<Point> normalize_orientation(std::span<const Point> pts) {
  if (pts.size() < 3) {
    throw GeometryError("polygon needs at least 3 points, got " + std::to_string(pts.size()));
  }
  for (const Point& p : pts) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw GeometryError("polygon has non-finite coordinates");
    }
  }
  const double area = signed_area(pts);
  if (area == 0.0) throw GeometryError("degenerate polygon: zero signed area");
  std::vector<Point> out(pts.begin(), pts.end());
  if (area < 0.0) {
    // Keep the first vertex in place so a double flip is an exact involution.
    std::reverse(out.begin() + 1, out.end());
  }
  return out;
}

Polygon::Polygon(std::vector<Point> pts) : pts_(normalize_orientation(pts)) {}

ControlPolygon::ControlPolygon(std::vector<Point> pts) : pts_(std::move(pts)) {
  if (pts_.empty()) throw GeometryError("control polygon needs at least one point");
}

ControlPolygon resample_uniform(const Polygon& poly, int n) {
  if (n < 3) throw GeometryError("resample_uniform needs n >= 3");
  const auto& src = poly.points();
  const std::size_t m = src.size();

  std::size_t start = 0;
  for (std::size_t i = 1; i < m; ++i) {
    const Point& a = src[i];
    const Point& b = src[start];
    if (a.y < b.y || (a.y == b.y && a.x < b.x)) start = i;
  }
  std::vector<Point> ring(m);
  for (std::size_t i = 0; i < m; ++i) ring[i] = src[(start + i) % m];

  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) cum[i + 1] = cum[i] + norm(ring[(i + 1) % m] - ring[i]);
  const double total = cum[m];

  std::vector<Point> out;
  out.reserve(n);
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    const double s = total * k / n;
    while (seg + 1 < m && cum[seg + 1] <= s) ++seg;
    const double seg_len = cum[seg + 1] - cum[seg];
    const double t = seg_len > 0.0 ? (s - cum[seg]) / seg_len : 0.0;
    const Point& a = ring[seg];
    const Point& b = ring[(seg + 1) % m];
    out.push_back(a + t * (b - a));
  }
  return ControlPolygon(std::move(out));
}

Point nearest_on_segment(Point a, Point b, Point p) {
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return a;
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

BoundaryDistance distance_to_boundary(std::span<const Point> pts, Point p) {
  BoundaryDistance best{std::numeric_limits<double>::infinity(), {}};
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point q = nearest_on_segment(pts[i], pts[(i + 1) % n], p);
    const double d = norm(p - q);
    if (d < best.distance) best = {d, q};
  }
  return best;
}

bool contains(std::span<const Point> pts, Point p) {
  bool inside = false;
  const std::size_t n = pts.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = pts[i];
    const Point& b = pts[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

namespace {

int orientation(Point a, Point b, Point c) {
  const double v = cross(b - a, c - a);
  return (v > 0.0) - (v < 0.0);
}

bool on_segment(Point a, Point b, Point p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

}  // namespace

bool segments_intersect(Point a, Point b, Point c, Point d) {
  const int o1 = orientation(a, b, c);
  const int o2 = orientation(a, b, d);
  const int o3 = orientation(c, d, a);
  const int o4 = orientation(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

double polygon_distance(const Polygon& a, const Polygon& b) {
  const auto& pa = a.points();
  const auto& pb = b.points();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pb.size(); ++j) {
      if (segments_intersect(pa[i], pa[(i + 1) % pa.size()], pb[j], pb[(j + 1) % pb.size()])) {
        return 0.0;
      }
    }
  }
  if (contains(pa, pb[0]) || contains(pb, pa[0])) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const Point& p : pa) best = std::min(best, distance_to_boundary(pb, p).distance);
  for (const Point& p : pb) best = std::min(best, distance_to_boundary(pa, p).distance);
  return best;
}

GridMap::GridMap(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) throw ShapeError("negative GridMap dimension");
  values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

bool GridMap::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
}

GridMap GridMap::slice_channels(int first, int count) const {
  if (first < 0 || count < 0 || first + count > channels_) throw ShapeError("channel slice out of range");
  GridMap out(height_, width_, count);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      for (int c = 0; c < count; ++c) out.at(y, x, c) = at(y, x, first + c);
  return out;
}

std::vector<float> bilinear_sample(const GridMap& map, double x, double y) {
  if (std::isnan(x) || std::isnan(y)) throw GeometryError("bilinear_sample: NaN coordinate");
  if (map.empty()) throw GeometryError("bilinear_sample: empty map");
  if (x < 0.0 || y < 0.0 || x > map.width() - 1 || y > map.height() - 1) {
    throw GeometryError("bilinear_sample: coordinate outside the map, clamp first");
  }
  const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(map.width() - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(map.height() - 2, 0));
  const int x1 = std::min(x0 + 1, map.width() - 1);
  const int y1 = std::min(y0 + 1, map.height() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  std::vector<float> out(map.channels());
  for (int c = 0; c < map.channels(); ++c) {
    const double v = (1 - fx) * (1 - fy) * map.at(y0, x0, c) + fx * (1 - fy) * map.at(y0, x1, c) +
                     (1 - fx) * fy * map.at(y1, x0, c) + fx * fy * map.at(y1, x1, c);
    out[c] = static_cast<float>(v);
  }
  return out;
}

namespace {

// Sorted x-coordinates where the horizontal line at y crosses the polygon
// boundary, half-open in y so shared vertices are counted once.
void scanline_crossings(std::span<const Point> pts, double y, std::vector<double>& xs) {
  xs.clear();
  const std::size_t n = pts.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = pts[i];
    const Point& b = pts[j];
    if ((a.y > y) != (b.y > y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
  }
  std::sort(xs.begin(), xs.end());
}

// Index range [lo, hi) of lattice samples origin + (i + offset) * step that
// fall inside [x0, x1).
std::pair<long, long> sample_range(double x0, double x1, double origin, double step, double offset,
                                   long count) {
  long lo = static_cast<long>(std::ceil((x0 - origin) / step - offset));
  long hi = static_cast<long>(std::ceil((x1 - origin) / step - offset));
  lo = std::clamp(lo, 0L, count);
  hi = std::clamp(hi, 0L, count);
  return {lo, std::max(lo, hi)};
}

}  // namespace

std::vector<std::uint8_t> rasterize(const Polygon& poly, int height, int width) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    scanline_crossings(poly.points(), y, xs);
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      auto [lo, hi] = sample_range(xs[k], xs[k + 1], 0.0, 1.0, 0.0, width);
      for (long x = lo; x < hi; ++x) mask[static_cast<std::size_t>(y) * width + x] = 1;
    }
  }
  return mask;
}

double polygon_iou(const Polygon& a, const Polygon& b, const IouConfig& cfg) {
  const BoundingBox ba = a.bounds();
  const BoundingBox bb = b.bounds();
  if (ba.max_x < bb.min_x || bb.max_x < ba.min_x || ba.max_y < bb.min_y || bb.max_y < ba.min_y) {
    return 0.0;
  }
  const BoundingBox u{std::min(ba.min_x, bb.min_x), std::min(ba.min_y, bb.min_y),
                      std::max(ba.max_x, bb.max_x), std::max(ba.max_y, bb.max_y)};
  const double extent = std::max(u.width(), u.height());
  double step = 1.0 / std::max(cfg.supersample, 1);
  if (cfg.min_cells > 0) step = std::min(step, extent / cfg.min_cells);
  const long nx = std::max(1L, static_cast<long>(std::ceil(u.width() / step)));
  const long ny = std::max(1L, static_cast<long>(std::ceil(u.height() / step)));
  const double sx = u.width() / nx;
  const double sy = u.height() / ny;

  std::vector<double> xa, xb;
  long inter = 0, uni = 0;
  std::vector<std::pair<long, long>> ra, rb;
  for (long j = 0; j < ny; ++j) {
    const double y = u.min_y + (j + 0.5) * sy;
    scanline_crossings(a.points(), y, xa);
    scanline_crossings(b.points(), y, xb);
    ra.clear();
    rb.clear();
    long count_a = 0, count_b = 0;
    for (std::size_t k = 0; k + 1 < xa.size(); k += 2) {
      ra.push_back(sample_range(xa[k], xa[k + 1], u.min_x, sx, 0.5, nx));
      count_a += ra.back().second - ra.back().first;
    }
    for (std::size_t k = 0; k + 1 < xb.size(); k += 2) {
      rb.push_back(sample_range(xb[k], xb[k + 1], u.min_x, sx, 0.5, nx));
      count_b += rb.back().second - rb.back().first;
    }
    long row_inter = 0;
    for (const auto& [alo, ahi] : ra)
      for (const auto& [blo, bhi] : rb) row_inter += std::max(0L, std::min(ahi, bhi) - std::max(alo, blo));
    inter += row_inter;
    uni += count_a + count_b - row_inter;
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace textdeform

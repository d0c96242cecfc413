#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace oracle {

namespace {

double dist2(Point a, Point b) { return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y); }

Point lerp(Point a, Point b, double t) { return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)}; }

double box_gap(Point a, Point b, Point p) {
  const double dx = std::max({std::min(a.x, b.x) - p.x, 0.0, p.x - std::max(a.x, b.x)});
  const double dy = std::max({std::min(a.y, b.y) - p.y, 0.0, p.y - std::max(a.y, b.y)});
  return std::hypot(dx, dy);
}

// Golden-section minimum of |lerp(a, b, t) - p| on [lo, hi].
double golden(Point a, Point b, Point p, double lo, double hi) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
  double f1 = dist2(lerp(a, b, x1), p), f2 = dist2(lerp(a, b, x2), p);
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - r * (hi - lo);
      f1 = dist2(lerp(a, b, x1), p);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + r * (hi - lo);
      f2 = dist2(lerp(a, b, x2), p);
    }
  }
  double best = 0.5 * (lo + hi);
  for (double t : {0.0, 1.0})
    if (dist2(lerp(a, b, t), p) < dist2(lerp(a, b, best), p)) best = t;
  return best;
}

double orient(Point a, Point b, Point c) { return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x); }

bool on_segment(Point a, Point b, Point p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_touch(Point a, Point b, Point c, Point d) {
  const double o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

double shoelace(const std::vector<Point>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const Point& a = r[i];
    const Point& b = r[(i + 1) % r.size()];
    s += a.x * b.y - a.y * b.x;
  }
  return 0.5 * s;
}

std::vector<Point> ccw(std::vector<Point> r) {
  if (shoelace(r) < 0) std::reverse(r.begin(), r.end());
  return r;
}

}  // namespace

int winding_number(const std::vector<Point>& ring, Point p) {
  int wn = 0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = ring[i], b = ring[(i + 1) % n];
    if (a.y <= p.y) {
      if (b.y > p.y && orient(a, b, p) > 0) ++wn;
    } else if (b.y <= p.y && orient(a, b, p) < 0) {
      --wn;
    }
  }
  return wn;
}

FieldSample field_at(const std::vector<Point>& ring, Point p, double step) {
  FieldSample out;
  out.inside = winding_number(ring, p) != 0;
  const std::size_t n = ring.size();
  double upper = std::numeric_limits<double>::infinity();
  for (const Point& v : ring) upper = std::min(upper, std::sqrt(dist2(v, p)));

  struct Hit {
    double d;
    Point q;
  };
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = ring[i], b = ring[(i + 1) % n];
    if (box_gap(a, b, p) > upper + 2 * step) continue;
    const double len = std::sqrt(dist2(a, b));
    const int k = std::max(1, static_cast<int>(std::ceil(len / step)));
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int s = 0; s <= k; ++s) {
      const double d = dist2(lerp(a, b, static_cast<double>(s) / k), p);
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    const double lo = std::max(0.0, static_cast<double>(best - 1) / k);
    const double hi = std::min(1.0, static_cast<double>(best + 1) / k);
    const Point q = lerp(a, b, golden(a, b, p, lo, hi));
    const double d = std::sqrt(dist2(q, p));
    upper = std::min(upper, d);
    hits.push_back({d, q});
  }
  double dmin = std::numeric_limits<double>::infinity();
  for (const Hit& h : hits) dmin = std::min(dmin, h.d);
  out.distance = dmin;
  if (dmin <= 0.0) return out;
  for (const Hit& h : hits) {
    if (h.d > dmin + 1e-7) continue;
    const Point u{(p.x - h.q.x) / h.d, (p.y - h.q.y) / h.d};
    bool seen = false;
    for (const Point& e : out.directions) seen = seen || std::hypot(e.x - u.x, e.y - u.y) < 1e-9;
    if (!seen) out.directions.push_back(u);
  }
  return out;
}

std::vector<Point> random_star(std::mt19937_64& rng, double cx, double cy, double rmin, double rmax, int vertices) {
  std::uniform_real_distribution<double> jitter(-0.35, 0.35);
  std::uniform_real_distribution<double> radius(rmin, rmax);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  const double base = phase(rng);
  std::vector<Point> out;
  for (int i = 0; i < vertices; ++i) {
    const double th = base + 2.0 * M_PI * (i + jitter(rng)) / vertices;
    const double r = radius(rng);
    out.push_back({cx + r * std::cos(th), cy + r * std::sin(th)});
  }
  return out;
}

std::vector<double> ring_propagation(int n) {
  std::vector<std::vector<int>> adj(n, std::vector<int>(n, 0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int gap = std::abs(i - j);
      const int hops = std::min(gap, n - gap);
      if (hops <= 2) adj[i][j] = 1;
    }
  }
  std::vector<int> degree(n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) degree[i] += adj[i][j];
  std::vector<double> g(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g[i * n + j] = adj[i][j] / std::sqrt(static_cast<double>(degree[i]) * degree[j]);
  return g;
}

double smooth_l1(double d, double beta) {
  const double a = std::fabs(d);
  if (a < beta) return 0.5 * d * d / beta;
  return a - 0.5 * beta;
}

double matching_brute(const std::vector<Point>& p, const std::vector<Point>& g, double beta) {
  const int n = static_cast<int>(p.size());
  double best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const Point& q = g[(i + j) % n];
      total += smooth_l1(p[i].x - q.x, beta);
      total += smooth_l1(p[i].y - q.y, beta);
    }
    if (total < best) best = total;
  }
  return best;
}

std::vector<std::uint8_t> ohem_reference(const std::vector<double>& loss, const std::vector<float>& gt, double ratio,
                                         int empty_negatives) {
  std::vector<std::uint8_t> keep(loss.size(), 0);
  std::vector<std::size_t> neg;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < loss.size(); ++k) {
    if (gt[k] > 0.5f) {
      keep[k] = 1;
      ++pos;
    } else {
      neg.push_back(k);
    }
  }
  std::stable_sort(neg.begin(), neg.end(), [&](std::size_t a, std::size_t b) { return loss[a] > loss[b]; });
  std::size_t quota = pos == 0 ? static_cast<std::size_t>(empty_negatives)
                               : static_cast<std::size_t>(std::floor(ratio * static_cast<double>(pos)));
  quota = std::min(quota, neg.size());
  for (std::size_t i = 0; i < quota; ++i) keep[neg[i]] = 1;
  return keep;
}

double convex_intersection_area(const std::vector<Point>& a_in, const std::vector<Point>& b_in) {
  std::vector<Point> subject = ccw(a_in);
  const std::vector<Point> clip = ccw(b_in);
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Point c0 = clip[e], c1 = clip[(e + 1) % clip.size()];
    std::vector<Point> next;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Point s = subject[i], t = subject[(i + 1) % subject.size()];
      const double fs = orient(c0, c1, s), ft = orient(c0, c1, t);
      if (fs >= 0) next.push_back(s);
      if ((fs >= 0) != (ft >= 0)) next.push_back(lerp(s, t, fs / (fs - ft)));
    }
    subject = std::move(next);
  }
  return subject.size() < 3 ? 0.0 : std::fabs(shoelace(subject));
}

double convex_iou(const std::vector<Point>& a, const std::vector<Point>& b) {
  const double inter = convex_intersection_area(a, b);
  const double uni = std::fabs(shoelace(a)) + std::fabs(shoelace(b)) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

int max_matching(const std::vector<std::vector<double>>& iou, double threshold) {
  const int nd = static_cast<int>(iou.size());
  const int ng = nd ? static_cast<int>(iou[0].size()) : 0;
  std::vector<bool> used(ng, false);
  int best = 0;
  auto rec = [&](auto&& self, int d, int count) -> void {
    if (d == nd) {
      best = std::max(best, count);
      return;
    }
    self(self, d + 1, count);
    for (int g = 0; g < ng; ++g) {
      if (used[g] || iou[d][g] < threshold) continue;
      used[g] = true;
      self(self, d + 1, count + 1);
      used[g] = false;
    }
  };
  rec(rec, 0, 0);
  return best;
}

bool ring_is_simple(const std::vector<Point>& ring) {
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_touch(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n])) return false;
    }
  }
  return true;
}

}  // namespace oracle

#include "textdeform/proposals.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "textdeform/errors.hpp"

namespace textdeform {

void ProposalConfig::validate() const {
  if (!(th_d > 0.0 && th_d < 1.0)) throw ConfigError("proposal.th_d must lie in (0, 1)");
  if (!(th_s > 0.0 && th_s < 1.0)) throw ConfigError("proposal.th_s must lie in (0, 1)");
  if (n_control < 3) throw ConfigError("proposal.n_control must be >= 3");
  if (min_area < 0) throw ConfigError("proposal.min_area must be >= 0");
}

namespace {

// Clockwise on screen (y down): E, SE, S, SW, W, NW, N, NE.
constexpr std::array<int, 8> kDx = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr std::array<int, 8> kDy = {0, 1, 1, 1, 0, -1, -1, -1};

int direction_of(int dx, int dy) {
  for (int d = 0; d < 8; ++d)
    if (kDx[d] == dx && kDy[d] == dy) return d;
  return -1;
}

}  // namespace

std::vector<std::vector<int>> label_components(const std::vector<std::uint8_t>& mask, int height, int width) {
  std::vector<int> label(mask.size(), -1);
  std::vector<std::vector<int>> comps;
  std::vector<int> stack;
  for (int k = 0; k < height * width; ++k) {
    if (!mask[k] || label[k] >= 0) continue;
    const int id = static_cast<int>(comps.size());
    comps.emplace_back();
    label[k] = id;
    stack.assign(1, k);
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      comps[id].push_back(cur);
      const int cy = cur / width;
      const int cx = cur % width;
      for (int d = 0; d < 8; ++d) {
        const int nx = cx + kDx[d];
        const int ny = cy + kDy[d];
        if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
        const int n = ny * width + nx;
        if (mask[n] && label[n] < 0) {
          label[n] = id;
          stack.push_back(n);
        }
      }
    }
    std::sort(comps[id].begin(), comps[id].end());
  }
  return comps;
}

std::vector<Point> trace_outer_contour(const std::vector<std::uint8_t>& mask, int height, int width, int start) {
  auto inside = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < width && y < height && mask[static_cast<std::size_t>(y) * width + x];
  };
  const int sx = start % width;
  const int sy = start / width;
  std::vector<Point> contour{{static_cast<double>(sx), static_cast<double>(sy)}};

  // The raster-order first pixel always has a background west neighbour.
  int cx = sx, cy = sy, back = 4;
  int first_x = -1, first_y = -1;
  const std::size_t limit = 4 * mask.size() + 8;
  for (std::size_t step = 0; step < limit; ++step) {
    int found = -1;
    for (int k = 1; k <= 8; ++k) {
      const int d = (back + k) % 8;
      if (inside(cx + kDx[d], cy + kDy[d])) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    const int nx = cx + kDx[found];
    const int ny = cy + kDy[found];
    // Stop when the start pixel is about to repeat its first move.
    if (cx == sx && cy == sy && step > 0 && nx == first_x && ny == first_y) break;
    if (step == 0) {
      first_x = nx;
      first_y = ny;
    }
    const int bd = (found + 7) % 8;
    const int bx = cx + kDx[bd];
    const int by = cy + kDy[bd];
    cx = nx;
    cy = ny;
    back = direction_of(bx - cx, by - cy);
    contour.push_back({static_cast<double>(cx), static_cast<double>(cy)});
  }
  if (contour.size() > 1 && contour.back() == contour.front()) contour.pop_back();
  return contour;
}

std::vector<Point> simplify_contour(const std::vector<Point>& chain) {
  const std::size_t n = chain.size();
  if (n < 4) return chain;
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point& prev = chain[(i + n - 1) % n];
    const Point& cur = chain[i];
    const Point& next = chain[(i + 1) % n];
    if (cross(cur - prev, next - cur) != 0.0 || dot(cur - prev, next - cur) < 0.0) out.push_back(cur);
  }
  if (out.size() < 3) return chain;
  return out;
}

std::vector<BoundaryProposal> extract_candidates(const FieldMaps& fields, const ProposalConfig& cfg) {
  const int h = fields.height();
  const int w = fields.width();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
  const auto dist = fields.dist.values();
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = dist[k * fields.dist.channels()] > cfg.th_d;

  std::vector<BoundaryProposal> out;
  for (auto& comp : label_components(mask, h, w)) {
    if (static_cast<int>(comp.size()) < cfg.min_area || comp.empty()) continue;

    double conf = 0.0;
    for (int k : comp) conf += fields.cls.values()[static_cast<std::size_t>(k) * fields.cls.channels()];
    conf /= static_cast<double>(comp.size());

    std::vector<std::uint8_t> own(mask.size(), 0);
    for (int k : comp) own[k] = 1;
    std::vector<Point> chain = simplify_contour(trace_outer_contour(own, h, w, comp.front()));
    if (chain.size() < 3 || signed_area(chain) == 0.0) {
      // One-pixel-wide components have no area through pixel centres; fall
      // back to the outline of their pixel squares' bounding box.
      int x0 = w, y0 = h, x1 = -1, y1 = -1;
      for (int k : comp) {
        x0 = std::min(x0, k % w);
        x1 = std::max(x1, k % w);
        y0 = std::min(y0, k / w);
        y1 = std::max(y1, k / w);
      }
      chain = {{x0 - 0.5, y0 - 0.5}, {x1 + 0.5, y0 - 0.5}, {x1 + 0.5, y1 + 0.5}, {x0 - 0.5, y1 + 0.5}};
    }
    BoundaryProposal prop;
    prop.contour = resample_uniform(Polygon(std::move(chain)), cfg.n_control);
    prop.confidence = conf;
    prop.pixels = std::move(comp);
    out.push_back(std::move(prop));
  }
  return out;
}

std::vector<BoundaryProposal> filter_by_confidence(std::vector<BoundaryProposal> cands, const ProposalConfig& cfg) {
  std::vector<BoundaryProposal> kept;
  kept.reserve(cands.size());
  for (auto& c : cands)
    if (c.confidence >= cfg.th_s) kept.push_back(std::move(c));
  return kept;
}

}  // namespace textdeform

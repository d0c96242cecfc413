#include "textdeform/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "textdeform/config.hpp"
#include "textdeform/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace textdeform {

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::rotated_rect: return "rotated_rect";
    case ShapeFamily::curved_band: return "curved_band";
    case ShapeFamily::wavy_polygon: return "wavy_polygon";
  }
  return "unknown";
}

ShapeFamily parse_shape_family(const std::string& s) {
  if (s == "rotated_rect") return ShapeFamily::rotated_rect;
  if (s == "curved_band") return ShapeFamily::curved_band;
  if (s == "wavy_polygon") return ShapeFamily::wavy_polygon;
  throw ConfigError("unknown shape family '" + s + "'");
}

void SynthConfig::validate() const {
  if (image_size < 32) throw ConfigError("synth.image_size must be >= 32");
  if (min_instances < 0 || max_instances < min_instances) throw ConfigError("synth instance range invalid");
  if (families.empty()) throw ConfigError("synth.families must not be empty");
  if (min_gap < 0) throw ConfigError("synth.min_gap must be >= 0");
  if (!(min_height_frac > 0 && max_height_frac >= min_height_frac && max_height_frac < 0.5))
    throw ConfigError("synth height fractions invalid");
  if (noise_sigma < 0) throw ConfigError("synth.noise_sigma must be >= 0");
  if (max_retries < 1) throw ConfigError("synth.max_retries must be >= 1");
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

bool is_simple(std::span<const Point> pts) {
  const std::size_t n = pts.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n])) return false;
    }
  }
  return true;
}

namespace {

constexpr std::uint64_t kStreamSample = 1;
constexpr std::uint64_t kStreamAugment = 2;

struct Shape {
  std::vector<Point> boundary;
  std::vector<Point> centerline;
};

double uniform(std::mt19937_64& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

// Offsets a centerline by +-h/2 along its normals into a closed band.
std::vector<Point> band_from_centerline(const std::vector<Point>& c, const std::vector<double>& half) {
  const std::size_t m = c.size();
  std::vector<Point> top, bottom;
  for (std::size_t i = 0; i < m; ++i) {
    const Point t = c[std::min(i + 1, m - 1)] - c[i == 0 ? 0 : i - 1];
    const double len = norm(t);
    const Point nrm{-t.y / len, t.x / len};
    top.push_back(c[i] + nrm * half[i]);
    bottom.push_back(c[i] - nrm * half[i]);
  }
  std::vector<Point> ring = top;
  ring.insert(ring.end(), bottom.rbegin(), bottom.rend());
  return ring;
}

Shape make_shape(ShapeFamily family, std::mt19937_64& rng, const SynthConfig& cfg) {
  const double size = cfg.image_size;
  const double h = uniform(rng, cfg.min_height_frac, cfg.max_height_frac) * size;
  const double length = uniform(rng, 2.5 * h, std::max(2.6 * h, std::min(6.0 * h, 0.75 * size)));
  const double theta = uniform(rng, -std::numbers::pi / 3, std::numbers::pi / 3);
  const Point centre{uniform(rng, 0.2 * size, 0.8 * size), uniform(rng, 0.2 * size, 0.8 * size)};
  const Point u{std::cos(theta), std::sin(theta)};
  const Point v{-u.y, u.x};

  std::vector<Point> local;  // centreline in (along, across) coordinates
  std::vector<double> half;
  int m = 0;
  switch (family) {
    case ShapeFamily::rotated_rect:
      local = {{-length / 2, 0.0}, {length / 2, 0.0}};
      half = {h / 2, h / 2};
      break;
    case ShapeFamily::curved_band: {
      const double sweep = uniform(rng, 0.6, 1.8);
      const double radius = std::max(length / sweep, 1.3 * h);
      const double sign = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
      m = 5 + static_cast<int>(uniform(rng, 0, 3));
      for (int i = 0; i < m; ++i) {
        const double a = -sweep / 2 + sweep * i / (m - 1);
        local.push_back({radius * std::sin(a), sign * (radius * (1 - std::cos(a)) - radius * (1 - std::cos(sweep / 2)) / 2)});
        half.push_back(h / 2);
      }
      break;
    }
    case ShapeFamily::wavy_polygon: {
      const double amp = uniform(rng, 0.15, 0.4) * h;
      const double periods = uniform(rng, 0.8, 1.6);
      const double phase = uniform(rng, 0, 2 * std::numbers::pi);
      m = 8 + static_cast<int>(uniform(rng, 0, 3));
      for (int i = 0; i < m; ++i) {
        const double t = static_cast<double>(i) / (m - 1);
        local.push_back({length * (t - 0.5), amp * std::sin(2 * std::numbers::pi * periods * t + phase)});
        half.push_back(h / 2 * uniform(rng, 0.85, 1.15));
      }
      break;
    }
  }
  Shape s;
  for (const Point& p : local) s.centerline.push_back(centre + u * p.x + v * p.y);
  s.boundary = band_from_centerline(s.centerline, half);
  return s;
}

struct Palette {
  std::array<double, 3> background;
  std::array<double, 3> foreground;
};

double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Palette draw_palette(std::mt19937_64& rng) {
  Palette p;
  for (int tries = 0; tries < 100; ++tries) {
    for (auto& c : p.background) c = uniform(rng, 0.05, 0.95);
    for (auto& c : p.foreground) c = uniform(rng, 0.05, 0.95);
    if (std::abs(luminance(p.background) - luminance(p.foreground)) >= 0.3) break;
  }
  return p;
}

// Arc-length coordinate of the projection of p onto the nearest centreline segment.
double along_coordinate(const std::vector<Point>& c, Point p) {
  double best = std::numeric_limits<double>::infinity(), coord = 0.0, acc = 0.0;
  for (std::size_t i = 0; i + 1 < c.size(); ++i) {
    const Point q = nearest_on_segment(c[i], c[i + 1], p);
    const double d = norm(p - q);
    if (d < best) {
      best = d;
      coord = acc + norm(q - c[i]);
    }
    acc += norm(c[i + 1] - c[i]);
  }
  return coord;
}

float quantize(double v) { return static_cast<float>(std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

AnnotatedSample generate_impl(const SynthConfig& cfg, int index, const ShapeFamily* forced) {
  cfg.validate();
  auto rng = derived_rng(cfg.seed, kStreamSample, static_cast<std::uint64_t>(index));
  const int size = cfg.image_size;
  const int want = std::uniform_int_distribution<int>(cfg.min_instances, cfg.max_instances)(rng);

  std::vector<Shape> shapes;
  std::vector<Polygon> placed;
  int attempts = 0;
  while (static_cast<int>(shapes.size()) < want && attempts < cfg.max_retries * std::max(want, 1)) {
    ++attempts;
    const ShapeFamily family =
        forced ? *forced : cfg.families[std::uniform_int_distribution<std::size_t>(0, cfg.families.size() - 1)(rng)];
    Shape s = make_shape(family, rng, cfg);
    const BoundingBox b = bounds_of(s.boundary);
    if (b.min_x < 1 || b.min_y < 1 || b.max_x > size - 2 || b.max_y > size - 2) continue;
    if (!is_simple(s.boundary)) continue;
    Polygon poly(s.boundary);
    bool ok = true;
    for (const Polygon& other : placed) {
      if (polygon_distance(poly, other) < cfg.min_gap) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    placed.push_back(poly);
    shapes.push_back(std::move(s));
  }
  if (static_cast<int>(shapes.size()) < want)
    spdlog::debug("sample {}: placed {} of {} instances", index, shapes.size(), want);

  AnnotatedSample out;
  out.name = "synth_" + std::to_string(index);
  out.image = GridMap(size, size, 3);
  const Palette pal = draw_palette(rng);
  const double gx = uniform(rng, -0.15, 0.15), gy = uniform(rng, -0.15, 0.15);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  std::vector<double> img(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        img[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
            pal.background[c] + gx * (x / double(size) - 0.5) + gy * (y / double(size) - 0.5);

  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto mask = rasterize(placed[i], size, size);
    const double period = uniform(rng, 3.0, 6.0);
    const double duty = uniform(rng, 0.45, 0.7);
    std::array<double, 3> fg = pal.foreground;
    for (auto& c : fg) c = std::clamp(c + uniform(rng, -0.08, 0.08), 0.0, 1.0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        if (!mask[static_cast<std::size_t>(y) * size + x]) continue;
        const double s = along_coordinate(shapes[i].centerline, {double(x), double(y)}) / period;
        const bool stroke = s - std::floor(s) < duty;
        for (int c = 0; c < 3; ++c) {
          double& v = img[(static_cast<std::size_t>(y) * size + x) * 3 + c];
          v = stroke ? fg[c] : 0.65 * fg[c] + 0.35 * v;
        }
      }
    out.instances.push_back({placed[i], static_cast<int>(i), false});
  }
  for (std::size_t k = 0; k < img.size(); ++k) out.image.values()[k] = quantize(img[k] + noise(rng));
  return out;
}

}  // namespace

AnnotatedSample generate_one(const SynthConfig& cfg, int index) { return generate_impl(cfg, index, nullptr); }

AnnotatedSample generate_one(const SynthConfig& cfg, int index, ShapeFamily family) {
  return generate_impl(cfg, index, &family);
}

std::vector<AnnotatedSample> generate(const SynthConfig& cfg, int count, int first_index) {
  std::vector<AnnotatedSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(generate_one(cfg, first_index + i));
  return out;
}

double draw_rotation(std::mt19937_64& rng, const AugmentParams& params) {
  std::normal_distribution<double> g(0.0, params.rotation_sigma_deg);
  for (int i = 0; i < 1000; ++i) {
    const double a = g(rng);
    if (std::abs(a) < params.rotation_limit_deg) return a;
  }
  return 0.0;
}

std::vector<Point> clip_to_rect(std::span<const Point> pts, double x0, double y0, double x1, double y1) {
  std::vector<Point> poly(pts.begin(), pts.end());
  auto clip = [&](auto inside, auto intersect) {
    std::vector<Point> out;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& cur = poly[i];
      const Point& prev = poly[(i + n - 1) % n];
      const bool ci = inside(cur), pi = inside(prev);
      if (ci) {
        if (!pi) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (pi) {
        out.push_back(intersect(prev, cur));
      }
    }
    poly = std::move(out);
  };
  auto at_x = [](double x) {
    return [x](Point a, Point b) { return Point{x, a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)}; };
  };
  auto at_y = [](double y) {
    return [y](Point a, Point b) { return Point{a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y), y}; };
  };
  clip([&](Point p) { return p.x >= x0; }, at_x(x0));
  if (!poly.empty()) clip([&](Point p) { return p.x <= x1; }, at_x(x1));
  if (!poly.empty()) clip([&](Point p) { return p.y >= y0; }, at_y(y0));
  if (!poly.empty()) clip([&](Point p) { return p.y <= y1; }, at_y(y1));
  return poly;
}

namespace {

cv::Mat to_mat(const GridMap& g) {
  cv::Mat m(g.height(), g.width(), CV_32FC(g.channels()));
  std::copy(g.values().begin(), g.values().end(), m.ptr<float>());
  return m;
}

GridMap from_mat(const cv::Mat& m) {
  GridMap g(m.rows, m.cols, m.channels());
  cv::Mat c = m.isContinuous() ? m : m.clone();
  std::copy(c.ptr<float>(), c.ptr<float>() + g.values().size(), g.values().begin());
  return g;
}

// Maps every instance through f and clips to the pixel-centre domain.
// Instances that keep less than min_visible of their area become ignore
// regions; instances that vanish are removed.
template <class F>
std::vector<TextInstance> transform_instances(const std::vector<TextInstance>& in, F f, int h, int w,
                                              double min_visible, bool clip) {
  std::vector<TextInstance> out;
  for (const auto& inst : in) {
    std::vector<Point> pts;
    for (const Point& p : inst.boundary.points()) pts.push_back(f(p));
    const double before = std::abs(signed_area(pts));
    if (clip) pts = clip_to_rect(pts, 0.0, 0.0, w - 1.0, h - 1.0);
    if (pts.size() < 3) continue;
    const double after = std::abs(signed_area(pts));
    if (!(after > 1e-9) || !(before > 0)) continue;
    try {
      TextInstance t{Polygon(std::move(pts)), inst.id, inst.ignore || after < min_visible * before};
      out.push_back(std::move(t));
    } catch (const GeometryError&) {
    }
  }
  return out;
}

}  // namespace

AnnotatedSample rotate_sample(const AnnotatedSample& s, double degrees, double min_visible) {
  if (degrees == 0.0) return s;
  const int h = s.image.height(), w = s.image.width();
  const cv::Point2f centre((w - 1) * 0.5f, (h - 1) * 0.5f);
  const cv::Mat rot = cv::getRotationMatrix2D(centre, degrees, 1.0);
  cv::Mat dst;
  cv::warpAffine(to_mat(s.image), dst, rot, cv::Size(w, h), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  const double a = rot.at<double>(0, 0), b = rot.at<double>(0, 1), c = rot.at<double>(0, 2);
  const double d = rot.at<double>(1, 0), e = rot.at<double>(1, 1), f = rot.at<double>(1, 2);
  AnnotatedSample out{s.name, from_mat(dst), {}};
  out.instances = transform_instances(
      s.instances, [&](Point p) { return Point{a * p.x + b * p.y + c, d * p.x + e * p.y + f}; }, h, w, min_visible,
      true);
  return out;
}

AnnotatedSample flip_horizontal(const AnnotatedSample& s) {
  const int h = s.image.height(), w = s.image.width();
  AnnotatedSample out{s.name, GridMap(h, w, s.image.channels()), {}};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < s.image.channels(); ++c) out.image.at(y, w - 1 - x, c) = s.image.at(y, x, c);
  out.instances = transform_instances(
      s.instances, [&](Point p) { return Point{(w - 1) - p.x, p.y}; }, h, w, 0.0, false);
  return out;
}

AnnotatedSample crop_resize(const AnnotatedSample& s, int x0, int y0, int side, int out_size, double min_visible) {
  const int h = s.image.height(), w = s.image.width();
  if (side < 1 || x0 < 0 || y0 < 0 || x0 + side > w || y0 + side > h || out_size < 1)
    throw ConfigError("crop_resize: window outside the image");
  cv::Mat roi = to_mat(s.image)(cv::Rect(x0, y0, side, side));
  cv::Mat dst;
  cv::resize(roi, dst, cv::Size(out_size, out_size), 0, 0, side > out_size ? cv::INTER_AREA : cv::INTER_LINEAR);
  const double scale = static_cast<double>(side) / out_size;
  AnnotatedSample out{s.name, from_mat(dst), {}};
  // Pixel-centre mapping used by the resize: src = (dst + 0.5) * scale - 0.5.
  out.instances = transform_instances(
      s.instances,
      [&](Point p) { return Point{(p.x - x0 + 0.5) / scale - 0.5, (p.y - y0 + 0.5) / scale - 0.5}; }, out_size,
      out_size, min_visible, true);
  return out;
}

AnnotatedSample augment(const AnnotatedSample& s, std::uint64_t seed, const AugmentParams& params) {
  auto rng = derived_rng(seed, kStreamAugment, 0);
  AnnotatedSample out = rotate_sample(s, draw_rotation(rng, params), params.min_visible_area);
  const int w = out.image.width(), h = out.image.height();
  const int min_side = std::max(1, static_cast<int>(std::round(params.crop_min_frac * std::min(w, h))));
  const int side = std::uniform_int_distribution<int>(min_side, std::min(w, h))(rng);
  const int x0 = std::uniform_int_distribution<int>(0, w - side)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, h - side)(rng);
  out = crop_resize(out, x0, y0, side, params.output_size, params.min_visible_area);
  if (std::uniform_real_distribution<double>(0, 1)(rng) < params.flip_prob) out = flip_horizontal(out);
  for (auto& v : out.image.values()) v = quantize(v);
  return out;
}

void save_png(const GridMap& image, const fs::path& path) {
  if (image.channels() != 3 && image.channels() != 1) throw DataError("save_png: need 1 or 3 channels");
  cv::Mat m = to_mat(image);
  cv::Mat u8;
  m.convertTo(u8, CV_8U, 255.0);
  if (image.channels() == 3) cv::cvtColor(u8, u8, cv::COLOR_RGB2BGR);
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const fs::path tmp = path.string() + ".tmp.png";
  if (!cv::imwrite(tmp.string(), u8)) throw DataError("cannot write " + path.string());
  fs::rename(tmp, path);
}

GridMap load_png(const fs::path& path) {
  cv::Mat u8 = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (u8.empty()) throw DataError("cannot read image " + path.string());
  cv::cvtColor(u8, u8, cv::COLOR_BGR2RGB);
  // Same levels as quantize() so generated images survive a round trip.
  cv::Mat lut(1, 256, CV_32F);
  for (int k = 0; k < 256; ++k) lut.at<float>(k) = static_cast<float>(k / 255.0);
  cv::Mat f;
  cv::LUT(u8, lut, f);
  return from_mat(f);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("short write to " + path.string());
  }
  fs::rename(tmp, path);
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

void save_annotation(const AnnotatedSample& s, const std::string& image_ref, const fs::path& path) {
  json j;
  j["image"] = image_ref;
  j["name"] = s.name;
  j["polygons"] = json::array();
  j["ignore"] = json::array();
  for (const auto& inst : s.instances) {
    json poly = json::array();
    for (const Point& p : inst.boundary.points()) poly.push_back({p.x, p.y});
    j["polygons"].push_back(std::move(poly));
    j["ignore"].push_back(inst.ignore);
  }
  write_text_atomic(path, j.dump(1));
}

AnnotatedSample load_annotation(const fs::path& path) {
  const json j = read_json(path);
  AnnotatedSample s;
  try {
    s.name = j.value("name", path.stem().string());
    s.image = load_png(path.parent_path() / j.at("image").get<std::string>());
    const auto& polys = j.at("polygons");
    const json ignore = j.value("ignore", json::array());
    for (std::size_t i = 0; i < polys.size(); ++i) {
      std::vector<Point> pts;
      for (const auto& p : polys[i]) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      const bool ig = i < ignore.size() && ignore[i].get<bool>();
      s.instances.push_back({Polygon(std::move(pts)), static_cast<int>(i), ig});
    }
  } catch (const json::exception& e) {
    throw DataError("bad annotation " + path.string() + ": " + e.what());
  } catch (const GeometryError& e) {
    throw DataError("bad polygon in " + path.string() + ": " + e.what());
  }
  return s;
}

void write_manifest(const DatasetManifest& m, const fs::path& root) {
  json j;
  j["config"] = m.config;
  j["samples"] = json::array();
  for (const auto& e : m.entries) j["samples"].push_back({{"annotation", e.annotation}, {"split", e.split}});
  write_text_atomic(root / "manifest.json", j.dump(1));
}

DatasetManifest read_manifest(const fs::path& root) {
  const json j = read_json(root / "manifest.json");
  DatasetManifest m;
  try {
    if (j.contains("config")) m.config = j.at("config").get<SynthConfig>();
    for (const auto& e : j.at("samples"))
      m.entries.push_back({e.at("annotation").get<std::string>(), e.at("split").get<std::string>()});
  } catch (const json::exception& e) {
    throw DataError("bad manifest in " + root.string() + ": " + e.what());
  }
  return m;
}

DatasetManifest write_synthetic_dataset(const SynthConfig& cfg, int train, int val, const fs::path& root) {
  cfg.validate();
  DatasetManifest m;
  m.config = cfg;
  fs::create_directories(root / "images");
  fs::create_directories(root / "annotations");
  for (int i = 0; i < train + val; ++i) {
    const std::string split = i < train ? "train" : "val";
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_%05d", split.c_str(), i < train ? i : i - train);
    const AnnotatedSample s = generate_one(cfg, i);
    save_png(s.image, root / "images" / (std::string(stem) + ".png"));
    save_annotation(s, "../images/" + std::string(stem) + ".png", root / "annotations" / (std::string(stem) + ".json"));
    m.entries.push_back({"annotations/" + std::string(stem) + ".json", split});
  }
  write_manifest(m, root);
  return m;
}

std::vector<AnnotatedSample> load_split(const fs::path& root, const std::string& split) {
  const DatasetManifest m = read_manifest(root);
  std::vector<AnnotatedSample> out;
  for (const auto& e : m.entries)
    if (e.split == split) out.push_back(load_annotation(root / e.annotation));
  return out;
}

}  // namespace textdeform

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "textdeform/fields.hpp"
#include "textdeform/geometry.hpp"

namespace textdeform {

enum class ShapeFamily { rotated_rect, curved_band, wavy_polygon };

std::string to_string(ShapeFamily f);
ShapeFamily parse_shape_family(const std::string& s);

struct SynthConfig {
  int image_size = 128;
  int min_instances = 1;
  int max_instances = 4;
  std::vector<ShapeFamily> families = {ShapeFamily::rotated_rect, ShapeFamily::curved_band,
                                       ShapeFamily::wavy_polygon};
  double min_gap = 3.0;
  double min_height_frac = 0.08;  // text band height relative to image size
  double max_height_frac = 0.18;
  double noise_sigma = 0.05;
  int max_retries = 60;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Engine seeded from (seed, stream, index) so every sample and epoch draws
/// from its own reproducible stream.
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// One synthetic sample; a pure function of (cfg, index).
AnnotatedSample generate_one(const SynthConfig& cfg, int index);
/// Forces a single shape family for every instance.
AnnotatedSample generate_one(const SynthConfig& cfg, int index, ShapeFamily family);
std::vector<AnnotatedSample> generate(const SynthConfig& cfg, int count, int first_index = 0);

/// True when no two non-adjacent edges of the ring intersect.
bool is_simple(std::span<const Point> pts);

struct AugmentParams {
  double rotation_sigma_deg = 20.0;
  double rotation_limit_deg = 60.0;
  double crop_min_frac = 0.7;  // side of the crop window relative to the image
  double flip_prob = 0.5;
  double min_visible_area = 0.5;
  int output_size = 128;
};

/// Gaussian angle truncated to the open interval (-limit, limit), degrees.
double draw_rotation(std::mt19937_64& rng, const AugmentParams& params);

/// Sutherland-Hodgman clip of a ring against an axis-aligned rectangle.
std::vector<Point> clip_to_rect(std::span<const Point> pts, double x0, double y0, double x1, double y1);

AnnotatedSample rotate_sample(const AnnotatedSample& s, double degrees, double min_visible_area = 0.5);
AnnotatedSample flip_horizontal(const AnnotatedSample& s);
/// Crops [x0, x0 + side) x [y0, y0 + side) and resizes to out x out.
AnnotatedSample crop_resize(const AnnotatedSample& s, int x0, int y0, int side, int out,
                            double min_visible_area = 0.5);
/// Random rotation, crop-and-resize and horizontal flip, seeded.
AnnotatedSample augment(const AnnotatedSample& s, std::uint64_t seed, const AugmentParams& params = {});

// File formats.
void save_png(const GridMap& image, const std::filesystem::path& path);
GridMap load_png(const std::filesystem::path& path);
void save_annotation(const AnnotatedSample& s, const std::string& image_ref, const std::filesystem::path& path);
/// Loads the annotation and the image it references (relative to the file).
AnnotatedSample load_annotation(const std::filesystem::path& path);

struct DatasetEntry {
  std::string annotation;  // relative to the dataset root
  std::string split;
};

struct DatasetManifest {
  std::vector<DatasetEntry> entries;
  SynthConfig config;
};

void write_manifest(const DatasetManifest& m, const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& root);

/// Generates `train` + `val` samples under root (images/, annotations/,
/// manifest.json).
DatasetManifest write_synthetic_dataset(const SynthConfig& cfg, int train, int val,
                                        const std::filesystem::path& root);
std::vector<AnnotatedSample> load_split(const std::filesystem::path& root, const std::string& split);

/// Writes `text` to path via a temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace textdeform

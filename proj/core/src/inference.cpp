#include "textdeform/inference.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "textdeform/errors.hpp"
#include "textdeform/synthdata.hpp"

namespace textdeform {

void InferenceConfig::validate() const {
  proposals.validate();
  if (iterations < 1) throw ConfigError("infer.iterations must be >= 1");
  if (max_proposals < 1) throw ConfigError("infer.max_proposals must be >= 1");
}

std::vector<BoundaryProposal> proposals_from_fields(const FieldMaps& fields, const ProposalConfig& cfg, int stride,
                                                    int max_proposals) {
  auto props = filter_by_confidence(extract_candidates(fields, cfg), cfg);
  std::stable_sort(props.begin(), props.end(),
                   [](const BoundaryProposal& a, const BoundaryProposal& b) { return a.confidence > b.confidence; });
  if (static_cast<int>(props.size()) > max_proposals) props.resize(max_proposals);
  if (stride != 1) {
    for (auto& p : props)
      for (Point& q : p.contour.points()) q = q * static_cast<double>(stride);
  }
  return props;
}

std::optional<Polygon> to_polygon(const ControlPolygon& cp) {
  try {
    return Polygon(cp.points());
  } catch (const GeometryError&) {
    return std::nullopt;
  }
}

namespace {

FieldMaps fields_from_priors(const ad::Tensor<float>& priors) {
  const GridMap all = to_grid(priors);
  return FieldMaps{all.slice_channels(0, 1), all.slice_channels(1, 1), all.slice_channels(2, 2)};
}

ad::Tensor<float> points_tensor(const ControlPolygon& cp) {
  ad::Tensor<float> t({cp.size(), 2});
  for (int i = 0; i < cp.size(); ++i) {
    t[2 * i] = static_cast<float>(cp[i].x);
    t[2 * i + 1] = static_cast<float>(cp[i].y);
  }
  return t;
}

ControlPolygon points_polygon(const ad::Tensor<float>& t) {
  std::vector<Point> p(t.dim(0));
  for (int i = 0; i < t.dim(0); ++i) p[i] = {t[2 * i], t[2 * i + 1]};
  return ControlPolygon(std::move(p));
}

}  // namespace

ImageDetections detect(const Model<float>& model, const GridMap& image, const InferenceConfig& cfg) {
  if (image.channels() != 3) throw ShapeError("detect expects a 3-channel image");
  ad::Tape<float> tape;
  tape.set_grad_enabled(false);
  Context<float> ctx(tape, const_cast<Model<float>&>(model).params());
  const SharedOutputs<float> shared = model.forward_shared(ctx, tape.constant(to_tensor<float>(image)));

  ImageDetections out;
  out.fields = fields_from_priors(shared.priors.value());
  out.proposals =
      proposals_from_fields(out.fields, cfg.proposals, model.config().backbone.output_stride, cfg.max_proposals);
  for (std::size_t i = 0; i < out.proposals.size(); ++i) {
    const auto steps = model.deform(ctx, shared.features, shared.priors,
                                    tape.constant(points_tensor(out.proposals[i].contour)), cfg.iterations);
    std::vector<ControlPolygon> stages;
    for (const auto& s : steps) stages.push_back(points_polygon(s.value()));
    if (auto poly = to_polygon(stages.back())) {
      out.detections.push_back({std::move(*poly), out.proposals[i].confidence});
      out.detection_source.push_back(static_cast<int>(i));
    }
    out.stages.push_back(std::move(stages));
  }
  return out;
}

EvaluationReport evaluate_model(const Model<float>& model, const std::vector<AnnotatedSample>& samples,
                                const InferenceConfig& icfg, const EvalConfig& ecfg) {
  const int iters = icfg.iterations;
  std::vector<std::vector<std::vector<Detection>>> per_iter(iters, std::vector<std::vector<Detection>>(samples.size()));
  std::vector<std::vector<GtRegion>> gts(samples.size());
  std::vector<double> iou_sum(iters, 0.0);
  int matched = 0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    gts[s] = gt_regions(samples[s]);
    const ImageDetections d = detect(model, samples[s].image, icfg);
    for (std::size_t p = 0; p < d.proposals.size(); ++p) {
      for (int k = 0; k < iters; ++k)
        if (auto poly = to_polygon(d.stages[p][k])) per_iter[k][s].push_back({*poly, d.proposals[p].confidence});

      const auto start = to_polygon(d.proposals[p].contour);
      if (!start) continue;
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t g = 0; g < gts[s].size(); ++g) {
        if (gts[s][g].ignore) continue;
        const double iou = polygon_iou(*start, gts[s][g].polygon, ecfg.iou);
        if (iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
      if (best < 0) continue;
      ++matched;
      for (int k = 0; k < iters; ++k) {
        const auto poly = to_polygon(d.stages[p][k]);
        iou_sum[k] += poly ? polygon_iou(*poly, gts[s][best].polygon, ecfg.iou) : 0.0;
      }
    }
  }
  EvaluationReport r;
  for (int k = 0; k < iters; ++k) {
    r.per_iteration.push_back(evaluate(per_iter[k], gts, ecfg));
    r.mean_iou.push_back(matched ? iou_sum[k] / matched : 0.0);
  }
  r.final_metrics = r.per_iteration.back();
  r.matched_proposals = matched;
  return r;
}

std::string detections_json(const std::string& image_ref, const ImageDetections& d) {
  nlohmann::json j;
  j["image"] = image_ref;
  j["polygons"] = nlohmann::json::array();
  j["ignore"] = nlohmann::json::array();
  j["scores"] = nlohmann::json::array();
  j["proposals"] = nlohmann::json::array();
  for (const auto& det : d.detections) {
    nlohmann::json poly = nlohmann::json::array();
    for (const Point& p : det.polygon.points()) poly.push_back({p.x, p.y});
    j["polygons"].push_back(std::move(poly));
    j["ignore"].push_back(false);
    j["scores"].push_back(det.confidence);
  }
  for (const auto& prop : d.proposals) {
    nlohmann::json poly = nlohmann::json::array();
    for (const Point& p : prop.contour.points()) poly.push_back({p.x, p.y});
    j["proposals"].push_back(std::move(poly));
  }
  return j.dump(1);
}

void write_overlay(const GridMap& image, const ImageDetections& d, const std::filesystem::path& path, int stage) {
  cv::Mat f(image.height(), image.width(), CV_32FC3);
  std::copy(image.values().begin(), image.values().end(), f.ptr<float>());
  cv::Mat u8;
  f.convertTo(u8, CV_8UC3, 255.0);
  constexpr int kScale = 4;  // draw sub-pixel contours on an upscaled canvas
  cv::resize(u8, u8, cv::Size(), kScale, kScale, cv::INTER_NEAREST);
  auto draw = [&](const ControlPolygon& cp, const cv::Scalar& rgb) {
    std::vector<cv::Point> pts;
    for (const Point& p : cp.points())
      pts.emplace_back(static_cast<int>(std::lround((p.x + 0.5) * kScale)),
                       static_cast<int>(std::lround((p.y + 0.5) * kScale)));
    cv::polylines(u8, std::vector<std::vector<cv::Point>>{pts}, true, rgb, 2, cv::LINE_AA);
  };
  for (std::size_t i = 0; i < d.proposals.size(); ++i) {
    draw(d.proposals[i].contour, cv::Scalar(0, 0, 255));
    if (d.stages[i].empty()) continue;
    const int k = stage < 0 ? static_cast<int>(d.stages[i].size()) - 1
                            : std::min(stage, static_cast<int>(d.stages[i].size()) - 1);
    draw(d.stages[i][k], cv::Scalar(0, 255, 0));
  }
  cv::cvtColor(u8, u8, cv::COLOR_RGB2BGR);
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  const std::string tmp = path.string() + ".tmp.png";
  if (!cv::imwrite(tmp, u8)) throw DataError("cannot write overlay " + path.string());
  std::filesystem::rename(tmp, path);
}

}  // namespace textdeform

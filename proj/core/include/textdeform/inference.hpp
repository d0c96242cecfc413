#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "textdeform/evaluation.hpp"
#include "textdeform/network.hpp"
#include "textdeform/proposals.hpp"

namespace textdeform {

struct InferenceConfig {
  ProposalConfig proposals;
  int iterations = 3;
  int max_proposals = 32;

  void validate() const;
};

struct ImageDetections {
  FieldMaps fields;                            // at feature resolution
  std::vector<BoundaryProposal> proposals;     // contours in image coordinates
  std::vector<std::vector<ControlPolygon>> stages;  // per proposal, per iteration
  std::vector<Detection> detections;           // final polygons that are non-degenerate
  std::vector<int> detection_source;           // proposal index of each detection
};

/// Backbone and head forward, proposal extraction and iterative deformation.
ImageDetections detect(const Model<float>& model, const GridMap& image, const InferenceConfig& cfg);

/// Proposal extraction on maps at feature resolution, returned in image
/// coordinates (map coordinates times the output stride).
std::vector<BoundaryProposal> proposals_from_fields(const FieldMaps& fields, const ProposalConfig& cfg, int stride,
                                                    int max_proposals);

/// Polygon from control points; nullopt when the ring has no area.
std::optional<Polygon> to_polygon(const ControlPolygon& cp);

struct EvaluationReport {
  DetectionMetrics final_metrics;
  std::vector<DetectionMetrics> per_iteration;  // detections taken after iteration k
  std::vector<double> mean_iou;                 // mean IoU with the matched GT, per iteration
  int matched_proposals = 0;
};

/// Runs detect() over samples and scores the outputs. The per-iteration
/// mean IoU pairs every proposal with the GT instance of highest IoU at the
/// proposal stage and averages the IoU of its contour after each iteration.
EvaluationReport evaluate_model(const Model<float>& model, const std::vector<AnnotatedSample>& samples,
                                const InferenceConfig& icfg, const EvalConfig& ecfg);

/// Detections JSON mirroring the annotation format, with scores.
std::string detections_json(const std::string& image_ref, const ImageDetections& d);

/// Draws proposals in blue and final boundaries in green over the image.
void write_overlay(const GridMap& image, const ImageDetections& d, const std::filesystem::path& path,
                   int stage = -1);

}  // namespace textdeform

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "textdeform/autodiff.hpp"
#include "textdeform/geometry.hpp"
#include "textdeform/proposals.hpp"

namespace textdeform {

enum class EncoderVariant { fc, rnn, circular_conv, gcn, adaptive };

std::string to_string(EncoderVariant v);
/// Accepts "fc", "rnn", "circular" / "circular_conv", "gcn", "adaptive".
EncoderVariant parse_encoder(const std::string& s);

struct BackboneConfig {
  int base_channels = 16;
  int fusion_levels = 4;
  int shared_dim = 32;
  int output_stride = 1;  // 1, 2 or 4

  void validate() const;
};

struct PriorHeadConfig {
  int dilation_a = 2;
  int dilation_b = 4;
  int hidden = 16;
};

/// Bit flags selecting which prior channels reach the deformation model.
enum PriorChannels : unsigned {
  kPriorCls = 1u,
  kPriorDist = 2u,
  kPriorDir = 4u,
  kPriorAll = 7u,
};

/// Parses "cls+dis+dir", "cls,dis", "all", "none".
unsigned parse_prior_mask(const std::string& s);
std::string prior_mask_string(unsigned mask);

struct DeformConfig {
  EncoderVariant encoder = EncoderVariant::adaptive;
  int rnn_hidden = 128;     // per direction
  int gcn_width = 128;
  int gcn_layers = 4;
  int proj_width = 128;
  int fc_width = 128;
  int circ_kernel = 9;
  int circ_layers = 4;
  int circ_width = 128;
  std::vector<int> decoder_widths = {256, 128};
  int iterations = 3;
  unsigned prior_mask = kPriorAll;

  void validate() const;
};

struct ModelConfig {
  BackboneConfig backbone;
  PriorHeadConfig head;
  DeformConfig deform;

  void validate() const;
  /// FNV-1a over the architecture-defining fields; stored in checkpoints.
  std::uint64_t architecture_hash() const;
};

/// Width of the per-point feature matrix: shared features plus 4 priors.
inline int feature_width(const ModelConfig& cfg) { return cfg.backbone.shared_dim + 4; }
int encoder_width(const DeformConfig& cfg);

/// G = D^-1/2 (A + I) D^-1/2 for a closed ring where every control point
/// links to its two predecessors and two successors. Row-major N x N.
std::vector<double> propagation_matrix(int n);

/// Per-forward parameter bindings so every parameter is bound to the tape
/// once regardless of how many instances or iterations reuse it.
template <class T>
class Context {
 public:
  Context(ad::Tape<T>& tape, ad::ParameterSet<T>& params) : tape_(tape), params_(params) {}

  ad::Tape<T>& tape() { return tape_; }
  ad::Var<T> param(const std::string& name);
  ad::Var<T> constant(ad::Tensor<T> t) { return tape_.constant(std::move(t)); }
  /// Cached propagation matrix for ring size n.
  ad::Var<T> ring_matrix(int n);

 private:
  ad::Tape<T>& tape_;
  ad::ParameterSet<T>& params_;
  std::unordered_map<std::string, ad::Var<T>> cache_;
  std::unordered_map<int, ad::Var<T>> rings_;
};

template <class T>
struct SharedOutputs {
  ad::Var<T> features;      // F_s: (shared_dim, H', W')
  ad::Var<T> prior_logits;  // raw head output (4, H', W')
  ad::Var<T> priors;        // F_p: sigmoid(cls), dist clamped to [0, 1], dir x, dir y
};

/// Shared backbone, proposal head and deformation model.
template <class T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }

  /// The image is standardised per channel first and treated as data, so
  /// no gradient reaches it.
  ad::Var<T> backbone(Context<T>& ctx, const ad::Var<T>& image) const;
  /// Two dilated 3x3 convolutions and a 1x1 projection to 4 channels.
  ad::Var<T> head(Context<T>& ctx, const ad::Var<T>& features) const;
  SharedOutputs<T> forward_shared(Context<T>& ctx, const ad::Var<T>& image) const;

  /// Per-point feature matrix (N, 36) at the given image-space points.
  ad::Var<T> feature_matrix(Context<T>& ctx, const ad::Var<T>& features, const ad::Var<T>& priors,
                            const ad::Var<T>& points) const;
  ad::Var<T> encode(Context<T>& ctx, const ad::Var<T>& x) const;
  ad::Var<T> decode(Context<T>& ctx, const ad::Var<T>& encoded) const;
  /// Runs `iterations` deformation steps from `initial` (N, 2) image-space
  /// points; returns the points after every step.
  std::vector<ad::Var<T>> deform(Context<T>& ctx, const ad::Var<T>& features, const ad::Var<T>& priors,
                                 const ad::Var<T>& initial, int iterations) const;

 private:
  void build(std::uint64_t seed);

  ModelConfig cfg_;
  mutable ad::ParameterSet<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;
extern template class Context<float>;
extern template class Context<double>;

/// X_g = relu((X ++ G X) W).
template <class T>
ad::Var<T> gcn_layer(const ad::Var<T>& x, const ad::Var<T>& g, const ad::Var<T>& w);

/// Copies every parameter whose name starts with one of the prefixes.
template <class T>
void copy_parameters(const Model<T>& from, Model<T>& to, const std::vector<std::string>& prefixes);

/// Zeroes every parameter whose name starts with `prefix`.
template <class T>
void zero_parameters(Model<T>& model, const std::string& prefix);

// Layout conversions between GridMap (H x W x C) and tensors (C, H, W).
template <class T>
ad::Tensor<T> to_tensor(const GridMap& map);
template <class T>
GridMap to_grid(const ad::Tensor<T>& t);

/// F_s for an image, inference mode.
GridMap backbone_forward(const Model<float>& model, const GridMap& image);
/// Proposal head on F_s: cls through a sigmoid, dist clamped to [0, 1], dir raw.
FieldMaps prior_head_forward(const Model<float>& model, const GridMap& features);
/// Packs FieldMaps into the 4-channel prior map (cls, dist, dir x, dir y).
GridMap pack_priors(const FieldMaps& fields);
/// Deforms one proposal; returns the contour after every iteration.
std::vector<ControlPolygon> deform_iterate(const Model<float>& model, const ControlPolygon& proposal,
                                           const GridMap& features, const GridMap& priors, int iterations);

}  // namespace textdeform

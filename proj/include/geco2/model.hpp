#pragma once

#include <torch/torch.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geco2/aggregation.hpp"
#include "geco2/backbone.hpp"
#include "geco2/decoder.hpp"
#include "geco2/geometry.hpp"
#include "geco2/loss.hpp"
#include "geco2/prototypes.hpp"
#include "geco2/query_encoder.hpp"

namespace geco2 {

/// Which pyramid levels get exemplar-conditioned queries before aggregation.
/// Levels without an encoder contribute raw backbone features.
enum class Variant { kFull, kFp, kQ1Only, kQ2Only, kQ3Only };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  int dim = 64;
  int exemplars = 3;  // k used in training
  int cross_attention_layers = 3;
  int deformable_layers = 2;
  int heads = 4;
  int sampling_points = 4;
  int input_size = 256;
  Variant variant = Variant::kFull;
  double alpha = 0.3;
  double theta_size = 25.0;
  double nms_iou = kDefaultNmsIou;
  double leaky_slope = kDefaultLeakySlope;
  double sigma_scale = 0.5;
  double mining_ratio = 3.0;
  int mining_floor = 16;
  double box_weight = 1.0;
  int pool_size = kDefaultPoolSize;
  std::vector<int> backbone_channels{16, 32, 64, 128};
  bool cross_attention_ffn = false;
  bool lum_norm = false;

  /// Full-scale setting: 1024 input, d = 256, 8 heads.
  static ModelConfig full_scale();

  /// Exemplar-size threshold of the test-time rescale rule for this input size.
  double rescale_threshold() const { return 80.0 * input_size / 1024.0; }
  LossOptions loss_options() const;
  QueryEncoderOptions encoder_options() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& config);

/// Whether the variant builds an encoder for pyramid level l (1..3).
bool encodes_level(Variant v, int level);

/// Intermediate tensors of one forward pass.
struct ForwardTrace {
  FeaturePyramid features;
  torch::Tensor shape_prototypes;              // (B, k, d)
  std::array<torch::Tensor, 3> prototypes;     // per level, (B, 2k, d); undefined if unused
  std::array<torch::Tensor, 3> level_queries;  // Q_L or raw C_L as fed to aggregation
  torch::Tensor queries;                       // aggregated (B, d, H0/2, W0/2)
  torch::Tensor aux_queries;                   // LUM_AUX(Q_3) when the aux branch ran
  DenseOutputs outputs;                        // boxes undefined unless dense boxes were asked for
  std::optional<DenseOutputs> aux_outputs;
};

struct CountResult {
  int count = 0;
  DetectionSet detections;
};

class GeCo2Impl : public torch::nn::Module {
 public:
  explicit GeCo2Impl(const ModelConfig& config);

  /// images: (B, 3, S, S) with S = input_size; exemplars: (B, k, 4) in input
  /// pixels. The auxiliary branch runs only when `with_aux` is set. Without
  /// `dense_boxes` the box maps are left to the caller (see box_head_at).
  ForwardTrace forward(const torch::Tensor& images, const torch::Tensor& exemplars,
                       bool with_aux = false, bool dense_boxes = true);

  /// Inference for a single preprocessed image (3, S, S) and exemplars (k, 4).
  CountResult count(const torch::Tensor& image, const torch::Tensor& exemplars, double threshold,
                    std::string image_id = {});

  /// Parameters bucketed by component: backbone, shape_encoder, encoder1..3,
  /// lum1..3, lum_aux, decoder, aux_decoder.
  std::map<std::string, std::vector<torch::Tensor>> parameter_groups() const;
  int64_t parameter_count() const;

  const ModelConfig& config() const { return config_; }
  /// Number of forward passes run so far.
  int64_t forward_calls() const { return forward_calls_; }

  Backbone backbone{nullptr};
  ShapeEncoder shape_encoder{nullptr};
  std::array<ScaleQueryEncoder, 3> encoders{ScaleQueryEncoder{nullptr}, ScaleQueryEncoder{nullptr},
                                            ScaleQueryEncoder{nullptr}};
  QueryAggregator aggregator{nullptr};
  QueryDecoder decoder{nullptr};
  QueryDecoder aux_decoder{nullptr};

 private:
  ModelConfig config_;
  int64_t forward_calls_ = 0;
};
TORCH_MODULE(GeCo2);

}  // namespace geco2

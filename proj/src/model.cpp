#include "geco2/model.hpp"

#include <stdexcept>

namespace geco2 {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kFp: return "fp";
    case Variant::kQ1Only: return "q1_only";
    case Variant::kQ2Only: return "q2_only";
    case Variant::kQ3Only: return "q3_only";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "fp") return Variant::kFp;
  if (name == "q1_only") return Variant::kQ1Only;
  if (name == "q2_only") return Variant::kQ2Only;
  if (name == "q3_only") return Variant::kQ3Only;
  throw std::invalid_argument("unknown model variant '" + name +
                              "' (expected full, fp, q1_only, q2_only or q3_only)");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.dim = 256;
  c.heads = 8;
  c.input_size = 1024;
  c.backbone_channels = {32, 64, 128, 256};
  return c;
}

LossOptions ModelConfig::loss_options() const {
  LossOptions o;
  o.mining_ratio = mining_ratio;
  o.mining_floor = mining_floor;
  o.box_weight = box_weight;
  o.sigma_scale = sigma_scale;
  return o;
}

QueryEncoderOptions ModelConfig::encoder_options() const {
  QueryEncoderOptions o;
  o.dim = dim;
  o.heads = heads;
  o.cross_attention_layers = cross_attention_layers;
  o.deformable_layers = deformable_layers;
  o.sampling_points = sampling_points;
  o.cross_attention_ffn = cross_attention_ffn;
  return o;
}

void validate(const ModelConfig& config) {
  validate(config.encoder_options());
  if (config.input_size <= 0 || config.input_size % 16 != 0) {
    throw std::invalid_argument("input_size " + std::to_string(config.input_size) +
                                " must be a positive multiple of 16");
  }
  if (config.exemplars < 1) throw std::invalid_argument("at least one exemplar is required");
  if (config.backbone_channels.size() != 4) {
    throw std::invalid_argument("backbone_channels must list 4 stage widths");
  }
  if (config.alpha < 0.0 || config.theta_size < 0.0) {
    throw std::invalid_argument("alpha and theta_size must be non-negative");
  }
  if (config.nms_iou < 0.0 || config.nms_iou > 1.0) {
    throw std::invalid_argument("nms_iou must lie in [0, 1]");
  }
  if (config.pool_size < 1) throw std::invalid_argument("pool_size must be positive");
}

bool encodes_level(Variant v, int level) {
  switch (v) {
    case Variant::kFull: return true;
    case Variant::kFp:
    case Variant::kQ1Only: return level == 1;
    case Variant::kQ2Only: return level == 2;
    case Variant::kQ3Only: return level == 3;
  }
  return false;
}

GeCo2Impl::GeCo2Impl(const ModelConfig& config) : config_(config) {
  validate(config_);
  BackboneOptions bb;
  bb.dim = config_.dim;
  bb.stage_channels = config_.backbone_channels;
  backbone = register_module("backbone", Backbone(bb));
  shape_encoder = register_module("shape_encoder", ShapeEncoder(config_.dim));
  for (int l = 1; l <= 3; ++l) {
    if (encodes_level(config_.variant, l)) {
      encoders[l - 1] = register_module("encoder" + std::to_string(l),
                                        ScaleQueryEncoder(config_.encoder_options()));
    }
  }
  aggregator = register_module("aggregator", QueryAggregator(config_.dim, config_.lum_norm));
  decoder = register_module("decoder", QueryDecoder(config_.dim, config_.leaky_slope));
  aux_decoder = register_module("aux_decoder", QueryDecoder(config_.dim, config_.leaky_slope));
}

ForwardTrace GeCo2Impl::forward(const torch::Tensor& images, const torch::Tensor& exemplars,
                                bool with_aux, bool dense_boxes) {
  const int s = config_.input_size;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != s || images.size(3) != s) {
    throw std::invalid_argument("images must be (B, 3, " + std::to_string(s) + ", " +
                                std::to_string(s) + ")");
  }
  if (exemplars.dim() != 3 || exemplars.size(0) != images.size(0) || exemplars.size(2) != 4 ||
      exemplars.size(1) < 1) {
    throw std::invalid_argument("exemplars must be (B, k, 4) with k >= 1");
  }

  ++forward_calls_;
  ForwardTrace trace;
  trace.features = backbone->forward(images);
  trace.shape_prototypes = shape_encoder->forward(exemplars, s, s);
  for (int l = 1; l <= 3; ++l) {
    const auto& c = trace.features.level(l);
    if (!encodes_level(config_.variant, l)) {
      trace.level_queries[l - 1] = c;
      continue;
    }
    auto appearance = appearance_prototypes(c, exemplars, kPyramidStrides[l - 1], config_.pool_size);
    trace.prototypes[l - 1] = assemble_prototypes(appearance, trace.shape_prototypes);
    trace.level_queries[l - 1] = encoders[l - 1]->forward(c, trace.prototypes[l - 1]);
  }
  const auto& [q1, q2, q3] = trace.level_queries;
  trace.queries = config_.variant == Variant::kFp ? aggregator->forward_fp(q1, q2, q3)
                                                   : aggregator->forward(q1, q2, q3);
  auto decode = [dense_boxes](QueryDecoder& head, const torch::Tensor& q) {
    return dense_boxes ? head->forward(q) : DenseOutputs{head->objectness_head(q), {}};
  };
  trace.outputs = decode(decoder, trace.queries);
  if (with_aux) {
    trace.aux_queries = aggregator->aux_branch(q3);
    trace.aux_outputs = decode(aux_decoder, trace.aux_queries);
  }
  return trace;
}

CountResult GeCo2Impl::count(const torch::Tensor& image, const torch::Tensor& exemplars,
                             double threshold, std::string image_id) {
  torch::NoGradGuard guard;
  auto trace = forward(image.unsqueeze(0), exemplars.unsqueeze(0), false);
  const ImageSize size{config_.input_size, config_.input_size};
  CountResult r;
  r.detections = extract_detections(trace.outputs, 0, size, {threshold, config_.nms_iou},
                                    std::move(image_id));
  r.count = static_cast<int>(r.detections.count());
  return r;
}

std::map<std::string, std::vector<torch::Tensor>> GeCo2Impl::parameter_groups() const {
  std::map<std::string, std::vector<torch::Tensor>> groups;
  for (const auto& item : named_parameters(true)) {
    const std::string& name = item.key();
    auto dot = name.find('.');
    std::string group = name.substr(0, dot);
    if (group == "aggregator") {
      auto next = name.find('.', dot + 1);
      group = name.substr(dot + 1, next - dot - 1);
    }
    groups[group].push_back(item.value());
  }
  return groups;
}

int64_t GeCo2Impl::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters(true)) n += p.numel();
  return n;
}

}  // namespace geco2

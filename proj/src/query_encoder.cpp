#include "geco2/query_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace geco2 {

namespace F = torch::nn::functional;

void validate(const QueryEncoderOptions& options) {
  if (options.dim <= 0 || options.heads <= 0 || options.dim % options.heads != 0) {
    throw std::invalid_argument("query dim " + std::to_string(options.dim) +
                                " is not divisible by head count " +
                                std::to_string(options.heads));
  }
  if (options.dim % 4 != 0) {
    throw std::invalid_argument("query dim must be divisible by 4 for the position encoding");
  }
  if (options.cross_attention_layers < 0 || options.deformable_layers < 0 ||
      options.sampling_points <= 0) {
    throw std::invalid_argument("layer and sampling-point counts must be non-negative");
  }
}

torch::Tensor sine_position_encoding(int64_t height, int64_t width, int64_t dim,
                                     const torch::TensorOptions& options) {
  const int64_t per_axis = dim / 2;
  const int64_t freqs = per_axis / 2;
  auto opts = options.requires_grad(false);
  auto i = torch::arange(freqs, opts);
  auto inv_freq = torch::pow(10000.0, -2.0 * i / static_cast<double>(per_axis));
  const double two_pi = 2.0 * std::numbers::pi;
  auto ys = (torch::arange(height, opts) + 0.5) / static_cast<double>(height) * two_pi;
  auto xs = (torch::arange(width, opts) + 0.5) / static_cast<double>(width) * two_pi;

  auto encode = [&](const torch::Tensor& coord) {
    auto phase = coord.unsqueeze(1) * inv_freq.unsqueeze(0);  // (len, freqs)
    return torch::stack({phase.sin(), phase.cos()}, 2).reshape({coord.size(0), per_axis});
  };
  auto ey = encode(ys).unsqueeze(1).expand({height, width, per_axis});
  auto ex = encode(xs).unsqueeze(0).expand({height, width, per_axis});
  return torch::cat({ey, ex}, 2).reshape({1, height * width, dim});
}

torch::Tensor reference_points(int64_t height, int64_t width, const torch::TensorOptions& options) {
  auto opts = options.requires_grad(false);
  auto ys = (torch::arange(height, opts) + 0.5) / static_cast<double>(height);
  auto xs = (torch::arange(width, opts) + 0.5) / static_cast<double>(width);
  auto grid = torch::meshgrid({ys, xs}, "ij");
  return torch::stack({grid[1], grid[0]}, -1).reshape({height * width, 2});
}

torch::Tensor deformable_sample(const torch::Tensor& value, const torch::Tensor& locations,
                                const torch::Tensor& weights) {
  const auto batch = value.size(0);
  const auto heads = value.size(1);
  const auto dh = value.size(2);
  const auto n = locations.size(1);
  const auto points = locations.size(3);

  auto v = value.reshape({batch * heads, dh, value.size(3), value.size(4)});
  auto grid = (2.0 * locations - 1.0).permute({0, 2, 1, 3, 4}).reshape({batch * heads, n, points, 2});
  auto sampled = F::grid_sample(v, grid,
                                F::GridSampleFuncOptions()
                                    .mode(torch::kBilinear)
                                    .padding_mode(torch::kZeros)
                                    .align_corners(false));  // (B*H, dh, n, P)
  auto w = weights.permute({0, 2, 1, 3}).reshape({batch * heads, 1, n, points});
  auto out = (sampled * w).sum(-1);  // (B*H, dh, n)
  return out.reshape({batch, heads, dh, n}).permute({0, 3, 1, 2}).reshape({batch, n, heads * dh});
}

CrossAttentionLayerImpl::CrossAttentionLayerImpl(int dim, int heads, bool use_ffn)
    : heads_(heads) {
  q_proj = register_module("q_proj", torch::nn::Linear(dim, dim));
  k_proj = register_module("k_proj", torch::nn::Linear(dim, dim));
  v_proj = register_module("v_proj", torch::nn::Linear(dim, dim));
  out_proj = register_module("out_proj", torch::nn::Linear(dim, dim));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  if (use_ffn) {
    ffn = register_module("ffn", torch::nn::Sequential(torch::nn::Linear(dim, 2 * dim),
                                                       torch::nn::GELU(),
                                                       torch::nn::Linear(2 * dim, dim)));
    ffn_norm =
        register_module("ffn_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  }
}

torch::Tensor CrossAttentionLayerImpl::forward(const torch::Tensor& queries,
                                               const torch::Tensor& prototypes,
                                               const torch::Tensor& pos,
                                               torch::Tensor* attention) {
  const auto batch = queries.size(0);
  const auto n = queries.size(1);
  const auto m = prototypes.size(1);
  const auto dim = queries.size(2);
  const auto dh = dim / heads_;

  auto split = [&](const torch::Tensor& t, int64_t len) {
    return t.reshape({batch, len, heads_, dh}).transpose(1, 2);  // (B, H, len, dh)
  };
  auto q = split(q_proj->forward(queries + pos), n);
  auto k = split(k_proj->forward(prototypes), m);
  auto v = split(v_proj->forward(prototypes), m);

  // Logits are laid out (B, H, m, n): softmax over the few prototypes then
  // runs along a strided axis, far faster than over a short last axis.
  auto logits = torch::matmul(k, q.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
  auto attn = torch::softmax(logits, 2).transpose(-2, -1);  // (B, H, n, m)
  if (attention != nullptr) *attention = attn;
  auto mixed = torch::matmul(attn, v).transpose(1, 2).reshape({batch, n, dim});

  auto x = norm->forward(queries + out_proj->forward(mixed));
  if (!ffn.is_empty()) x = ffn_norm->forward(x + ffn->forward(x));
  return x;
}

DeformableAttentionLayerImpl::DeformableAttentionLayerImpl(int dim, int heads, int points)
    : heads_(heads), points_(points) {
  value_proj = register_module("value_proj", torch::nn::Linear(dim, dim));
  offset_proj = register_module("offset_proj", torch::nn::Linear(dim, heads * points * 2));
  weight_proj = register_module("weight_proj", torch::nn::Linear(dim, heads * points));
  out_proj = register_module("out_proj", torch::nn::Linear(dim, dim));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  reset_offsets();
}

void DeformableAttentionLayerImpl::reset_offsets() {
  torch::NoGradGuard guard;
  offset_proj->weight.zero_();
  weight_proj->weight.zero_();
  weight_proj->bias.zero_();
  // Points of head h start on a ray at angle 2*pi*h/heads, p + 1 cells out,
  // so the heads look in different directions from the first step.
  auto bias = offset_proj->bias.view({heads_, points_, 2});
  for (int h = 0; h < heads_; ++h) {
    const double angle = 2.0 * std::numbers::pi * h / heads_;
    double dx = std::cos(angle);
    double dy = std::sin(angle);
    const double scale = std::max(std::abs(dx), std::abs(dy));
    dx /= scale;
    dy /= scale;
    for (int p = 0; p < points_; ++p) {
      bias[h][p][0] = dx * (p + 1);
      bias[h][p][1] = dy * (p + 1);
    }
  }
}

void DeformableAttentionLayerImpl::reset_sampling_to_identity() {
  torch::NoGradGuard guard;
  offset_proj->weight.zero_();
  offset_proj->bias.zero_();
  weight_proj->weight.zero_();
  weight_proj->bias.zero_();
}

torch::Tensor DeformableAttentionLayerImpl::forward(const torch::Tensor& queries) {
  const auto batch = queries.size(0);
  const auto dim = queries.size(1);
  const auto h = queries.size(2);
  const auto w = queries.size(3);
  const auto n = h * w;
  const auto dh = dim / heads_;

  auto flat = queries.flatten(2).transpose(1, 2);  // (B, n, d)
  auto value = value_proj->forward(flat)
                   .reshape({batch, n, heads_, dh})
                   .permute({0, 2, 3, 1})
                   .reshape({batch, heads_, dh, h, w});
  auto offsets = offset_proj->forward(flat).reshape({batch, n, heads_, points_, 2});
  auto weights = torch::softmax(weight_proj->forward(flat).reshape({batch, n, heads_, points_}), -1);

  auto ref = reference_points(h, w, queries.options()).reshape({1, n, 1, 1, 2});
  auto locations = ref + offsets / static_cast<double>(std::max(h, w));
  auto sampled = deformable_sample(value, locations, weights);

  auto x = norm->forward(flat + out_proj->forward(sampled));
  return x.transpose(1, 2).reshape({batch, dim, h, w});
}

ScaleQueryEncoderImpl::ScaleQueryEncoderImpl(const QueryEncoderOptions& options)
    : options_(options) {
  validate(options_);
  cross_layers = torch::nn::ModuleList();
  for (int i = 0; i < options_.cross_attention_layers; ++i) {
    cross_layers->push_back(
        CrossAttentionLayer(options_.dim, options_.heads, options_.cross_attention_ffn));
  }
  deformable_layers = torch::nn::ModuleList();
  for (int i = 0; i < options_.deformable_layers; ++i) {
    deformable_layers->push_back(
        DeformableAttentionLayer(options_.dim, options_.heads, options_.sampling_points));
  }
  register_module("cross_layers", cross_layers);
  register_module("deformable_layers", deformable_layers);
}

torch::Tensor ScaleQueryEncoderImpl::cross_attend(const torch::Tensor& features,
                                                  const torch::Tensor& prototypes) {
  if (cross_layers->size() == 0) return features;
  const auto batch = features.size(0);
  const auto dim = features.size(1);
  const auto h = features.size(2);
  const auto w = features.size(3);
  if (prototypes.dim() != 3 || prototypes.size(0) != batch || prototypes.size(2) != dim) {
    throw std::invalid_argument("prototypes must be (B, 2k, d) matching the feature map");
  }
  auto pos = sine_position_encoding(h, w, dim, features.options());
  auto x = features.flatten(2).transpose(1, 2);
  for (const auto& layer : *cross_layers) {
    x = layer->as<CrossAttentionLayer>()->forward(x, prototypes, pos);
  }
  return x.transpose(1, 2).reshape({batch, dim, h, w});
}

torch::Tensor ScaleQueryEncoderImpl::deformable_refine(const torch::Tensor& queries) {
  auto x = queries;
  for (const auto& layer : *deformable_layers) {
    x = layer->as<DeformableAttentionLayer>()->forward(x);
  }
  return x;
}

torch::Tensor ScaleQueryEncoderImpl::forward(const torch::Tensor& features,
                                             const torch::Tensor& prototypes) {
  return deformable_refine(cross_attend(features, prototypes));
}

}  // namespace geco2

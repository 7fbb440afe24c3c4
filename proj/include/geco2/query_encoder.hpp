#pragma once

#include <torch/torch.h>

namespace geco2 {

struct QueryEncoderOptions {
  int dim = 64;
  int heads = 4;
  int cross_attention_layers = 3;  // N_CA
  int deformable_layers = 2;       // N_DA
  int sampling_points = 4;
  bool cross_attention_ffn = false;
};

/// Fixed 2-D sinusoidal encoding for an h x w grid, (1, h*w, dim).
torch::Tensor sine_position_encoding(int64_t height, int64_t width, int64_t dim,
                                     const torch::TensorOptions& options);

/// Normalized cell centres ((j + 0.5) / w, (i + 0.5) / h) in raster order, (h*w, 2).
torch::Tensor reference_points(int64_t height, int64_t width, const torch::TensorOptions& options);

/// Bilinear multi-point gather used by deformable attention.
///   value:     (B, heads, dh, h, w)
///   locations: (B, n, heads, points, 2), normalized x, y in [0, 1]
///   weights:   (B, n, heads, points)
/// Samples outside the map read as zero. Returns (B, n, heads * dh).
torch::Tensor deformable_sample(const torch::Tensor& value, const torch::Tensor& locations,
                                const torch::Tensor& weights);

/// One prototype-to-query interaction: LayerNorm(Q + MHA(Q + pos, p, p)).
class CrossAttentionLayerImpl : public torch::nn::Module {
 public:
  CrossAttentionLayerImpl(int dim, int heads, bool ffn);

  /// queries: (B, n, d); prototypes: (B, m, d); pos: (1, n, d).
  /// When attention is non-null it receives the softmax weights (B, heads, n, m).
  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& prototypes,
                        const torch::Tensor& pos, torch::Tensor* attention = nullptr);

  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Sequential ffn{nullptr};
  torch::nn::LayerNorm ffn_norm{nullptr};

 private:
  int heads_;
};
TORCH_MODULE(CrossAttentionLayer);

/// Deformable attention over the query map itself, with skip and LayerNorm.
/// Offsets are in cell units (scaled by 1 / max(h, w) in normalized space).
class DeformableAttentionLayerImpl : public torch::nn::Module {
 public:
  DeformableAttentionLayerImpl(int dim, int heads, int points);

  /// queries: (B, d, h, w) -> (B, d, h, w)
  torch::Tensor forward(const torch::Tensor& queries);

  /// Zero offsets and uniform point weights; used by tests.
  void reset_sampling_to_identity();

  torch::nn::Linear value_proj{nullptr}, offset_proj{nullptr}, weight_proj{nullptr},
      out_proj{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  void reset_offsets();

  int heads_;
  int points_;
};
TORCH_MODULE(DeformableAttentionLayer);

/// Per-scale encoder: N_CA cross-attention layers followed by N_DA
/// deformable refinement layers.
class ScaleQueryEncoderImpl : public torch::nn::Module {
 public:
  explicit ScaleQueryEncoderImpl(const QueryEncoderOptions& options);

  /// features: (B, d, h, w); prototypes: (B, 2k, d).
  torch::Tensor cross_attend(const torch::Tensor& features, const torch::Tensor& prototypes);
  torch::Tensor deformable_refine(const torch::Tensor& queries);
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& prototypes);

  const QueryEncoderOptions& options() const { return options_; }

  torch::nn::ModuleList cross_layers{nullptr};
  torch::nn::ModuleList deformable_layers{nullptr};

 private:
  QueryEncoderOptions options_;
};
TORCH_MODULE(ScaleQueryEncoder);

void validate(const QueryEncoderOptions& options);

}  // namespace geco2

#pragma once

#include <torch/torch.h>

namespace geco2 {

/// 2x bilinear upsampling (half-pixel centres, align_corners=false).
torch::Tensor upsample2x(const torch::Tensor& x);

/// Lightweight upsampling module: 2x bilinear upsample, 3x3 same-padded
/// conv, GeLU. `use_norm` inserts a channel LayerNorm (GroupNorm with one
/// group) before the activation; off by default.
class LumImpl : public torch::nn::Module {
 public:
  explicit LumImpl(int dim, bool use_norm = false);

  /// (B, d, h, w) -> (B, d, 2h, 2w)
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::GroupNorm norm{nullptr};
};
TORCH_MODULE(Lum);

/// LUM_3(LUM_2(LUM_1(q1) + q2) + q3).
torch::Tensor aggregate(Lum& lum1, Lum& lum2, Lum& lum3, const torch::Tensor& q1,
                        const torch::Tensor& q2, const torch::Tensor& q3);

/// Feature-pyramid ablation: raw backbone levels replace the finer queries.
torch::Tensor aggregate_fp_ablation(Lum& lum1, Lum& lum2, Lum& lum3, const torch::Tensor& q1,
                                    const torch::Tensor& c2, const torch::Tensor& c3);

/// Owns the three chain modules and the auxiliary one. Each has its own
/// parameters.
class QueryAggregatorImpl : public torch::nn::Module {
 public:
  explicit QueryAggregatorImpl(int dim, bool use_norm = false);

  torch::Tensor forward(const torch::Tensor& q1, const torch::Tensor& q2, const torch::Tensor& q3);
  torch::Tensor forward_fp(const torch::Tensor& q1, const torch::Tensor& c2,
                           const torch::Tensor& c3);
  /// Stride-4 queries -> stride-2 auxiliary queries. Training only.
  torch::Tensor aux_branch(const torch::Tensor& q3);

  Lum lum1{nullptr}, lum2{nullptr}, lum3{nullptr}, lum_aux{nullptr};
};
TORCH_MODULE(QueryAggregator);

}  // namespace geco2

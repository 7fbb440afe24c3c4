#include "geco2/prototypes.hpp"

#include <stdexcept>

namespace geco2 {

namespace F = torch::nn::functional;

namespace {

void check_boxes(const torch::Tensor& boxes) {
  if (boxes.dim() != 3 || boxes.size(2) != 4) {
    throw std::invalid_argument("exemplar boxes must be (B, k, 4)");
  }
  if (boxes.size(1) < 1) throw std::invalid_argument("at least one exemplar box is required");
}

}  // namespace

ShapeEncoderImpl::ShapeEncoderImpl(int dim) {
  hidden = register_module("hidden", torch::nn::Linear(2, dim));
  out = register_module("out", torch::nn::Linear(dim, dim));
}

torch::Tensor ShapeEncoderImpl::forward(const torch::Tensor& boxes, int image_height,
                                        int image_width) {
  check_boxes(boxes);
  auto wh = torch::stack({(boxes.select(2, 2) - boxes.select(2, 0)) / image_width,
                          (boxes.select(2, 3) - boxes.select(2, 1)) / image_height},
                         2);
  return out->forward(F::gelu(hidden->forward(wh)));
}

torch::Tensor roi_align(const torch::Tensor& features, const torch::Tensor& boxes, double stride,
                        int pool_size) {
  check_boxes(boxes);
  if (features.dim() != 4 || features.size(0) != boxes.size(0)) {
    throw std::invalid_argument("features must be (B, d, h, w) with B matching the boxes");
  }
  const auto batch = boxes.size(0);
  const auto k = boxes.size(1);
  const auto h = features.size(2);
  const auto w = features.size(3);

  auto fb = boxes / stride;
  // Bin centres at fraction (i + 0.5) / pool of the box extent.
  auto frac = (torch::arange(pool_size, boxes.options()) + 0.5) / pool_size;
  auto x1 = fb.select(2, 0).unsqueeze(-1);
  auto y1 = fb.select(2, 1).unsqueeze(-1);
  auto xs = x1 + (fb.select(2, 2).unsqueeze(-1) - x1) * frac;  // (B, k, s)
  auto ys = y1 + (fb.select(2, 3).unsqueeze(-1) - y1) * frac;

  // grid_sample with align_corners=false maps normalized g to feature
  // coordinate (g + 1) * w / 2, i.e. g = 2x / w - 1 for the cell-edge convention.
  auto gx = (2.0 * xs / static_cast<double>(w) - 1.0).unsqueeze(2).expand({batch, k, pool_size, pool_size});
  auto gy = (2.0 * ys / static_cast<double>(h) - 1.0).unsqueeze(3).expand({batch, k, pool_size, pool_size});
  auto grid = torch::stack({gx, gy}, -1).reshape({batch, k * pool_size, pool_size, 2});

  auto sampled = F::grid_sample(features, grid,
                                F::GridSampleFuncOptions()
                                    .mode(torch::kBilinear)
                                    .padding_mode(torch::kBorder)
                                    .align_corners(false));  // (B, d, k*s, s)
  const auto d = features.size(1);
  return sampled.reshape({batch, d, k, pool_size, pool_size}).permute({0, 2, 1, 3, 4});
}

torch::Tensor appearance_prototypes(const torch::Tensor& features, const torch::Tensor& boxes,
                                    double stride, int pool_size) {
  return roi_align(features, boxes, stride, pool_size).mean({3, 4});
}

torch::Tensor assemble_prototypes(const torch::Tensor& appearance, const torch::Tensor& shape) {
  if (appearance.dim() != 3 || shape.dim() != 3 || appearance.sizes() != shape.sizes()) {
    throw std::invalid_argument("appearance and shape prototypes must both be (B, k, d)");
  }
  return torch::cat({appearance, shape}, 1);
}

}  // namespace geco2

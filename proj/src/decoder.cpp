#include "geco2/decoder.hpp"

#include <stdexcept>
#include <utility>

namespace geco2 {

namespace F = torch::nn::functional;

QueryDecoderImpl::QueryDecoderImpl(int dim, double leaky_slope) : leaky_slope_(leaky_slope) {
  objectness = register_module("objectness", torch::nn::Linear(dim, 1));
  box_fc1 = register_module("box_fc1", torch::nn::Linear(dim, dim));
  box_fc2 = register_module("box_fc2", torch::nn::Linear(dim, dim));
  box_fc3 = register_module("box_fc3", torch::nn::Linear(dim, 4));
  torch::NoGradGuard guard;
  objectness->bias.zero_();
  // Start from small boxes (sigmoid(-3) ~ 5% of the image side).
  box_fc3->bias.fill_(-3.0);
}

namespace {

torch::Tensor channels_last(const torch::Tensor& q) {
  if (q.dim() != 4) throw std::invalid_argument("decoder input must be (B, d, H, W)");
  return q.permute({0, 2, 3, 1});
}

}  // namespace

torch::Tensor QueryDecoderImpl::objectness_head(const torch::Tensor& queries) {
  auto y = objectness->forward(channels_last(queries)).squeeze(-1);
  return F::leaky_relu(y, F::LeakyReLUFuncOptions().negative_slope(leaky_slope_));
}

torch::Tensor QueryDecoderImpl::box_mlp(const torch::Tensor& x) {
  auto y = F::gelu(box_fc1->forward(x));
  y = F::gelu(box_fc2->forward(y));
  return torch::sigmoid(box_fc3->forward(y));
}

torch::Tensor QueryDecoderImpl::box_head(const torch::Tensor& queries) {
  return box_mlp(channels_last(queries));
}

torch::Tensor QueryDecoderImpl::box_head_at(const torch::Tensor& queries, const torch::Tensor& cells) {
  const auto q = channels_last(queries);
  const int64_t b = q.size(0);
  const int64_t h = q.size(1);
  const int64_t w = q.size(2);
  const int64_t hw = h * w;
  // Advanced indexing gathers straight from the (B, d, H, W) layout.
  const auto rows = q.flatten(1, 2).index({cells.div(hw, "floor"), cells.remainder(hw)});
  auto out = torch::zeros({b * hw, 4}, queries.options());
  return out.index_copy(0, cells, box_mlp(rows)).view({b, h, w, 4});
}

DenseOutputs QueryDecoderImpl::forward(const torch::Tensor& queries) {
  return {objectness_head(queries), box_head(queries)};
}

std::vector<Box> detection_candidates(const ScoreMapView& objectness, std::span<const float> tlrb,
                                      ImageSize image, double threshold) {
  const GridSize grid{objectness.height, objectness.width};
  if (tlrb.size() != objectness.values.size() * 4) {
    throw std::invalid_argument("box map must hold 4 values per objectness cell");
  }
  std::vector<Box> out;
  for (const GridCell cell : local_maxima(objectness, threshold)) {
    const std::size_t base = (static_cast<std::size_t>(cell.row) * grid.width + cell.col) * 4;
    const Tlrb t{tlrb[base], tlrb[base + 1], tlrb[base + 2], tlrb[base + 3]};
    Box b = decode_tlrb(cell, t, grid, image);
    b.score = objectness.at(cell.row, cell.col);
    out.push_back(b);
  }
  return out;
}

DetectionSet refine_boxes(DetectionSet dets) { return dets; }

DetectionSet extract_detections(const ScoreMapView& objectness, std::span<const float> tlrb,
                                ImageSize image, const ExtractionOptions& options,
                                std::string image_id) {
  DetectionSet dets;
  dets.image_id = std::move(image_id);
  dets.boxes = detection_candidates(objectness, tlrb, image, options.threshold);
  return nms(refine_boxes(std::move(dets)), options.nms_iou);
}

DetectionSet extract_detections(const DenseOutputs& outs, int64_t index, ImageSize image,
                                const ExtractionOptions& options, std::string image_id) {
  auto obj = outs.objectness[index].detach().to(torch::kCPU, torch::kFloat).contiguous();
  auto box = outs.boxes[index].detach().to(torch::kCPU, torch::kFloat).contiguous();
  const ScoreMapView view{static_cast<int>(obj.size(0)), static_cast<int>(obj.size(1)),
                          {obj.data_ptr<float>(), static_cast<std::size_t>(obj.numel())}};
  return extract_detections(view, {box.data_ptr<float>(), static_cast<std::size_t>(box.numel())},
                            image, options, std::move(image_id));
}

}  // namespace geco2

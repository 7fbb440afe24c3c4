#include "geco2/backbone.hpp"

#include <stdexcept>
#include <string>

namespace geco2 {

namespace F = torch::nn::functional;

const torch::Tensor& FeaturePyramid::level(int l) const {
  switch (l) {
    case 1: return c1;
    case 2: return c2;
    case 3: return c3;
    default: throw std::out_of_range("pyramid level must be 1, 2 or 3");
  }
}

BackboneImpl::BackboneImpl(const BackboneOptions& options) : options_(options) {
  if (options_.stage_channels.size() != 4) {
    throw std::invalid_argument("backbone expects exactly 4 stage widths");
  }
  stages_ = torch::nn::ModuleList();
  int in = 3;
  for (int out : options_.stage_channels) {
    stages_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
    in = out;
  }
  register_module("stages", stages_);
  auto proj = [&](int in_ch) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, options_.dim, 1));
  };
  proj_stride4_ = register_module("proj_stride4", proj(options_.stage_channels[1]));
  proj_stride8_ = register_module("proj_stride8", proj(options_.stage_channels[2]));
  proj_stride16_ = register_module("proj_stride16", proj(options_.stage_channels[3]));
}

FeaturePyramid BackboneImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw std::invalid_argument("backbone input must be (B, 3, H, W)");
  }
  const auto h = images.size(2);
  const auto w = images.size(3);
  if (h % 16 != 0 || w % 16 != 0) {
    throw std::invalid_argument("backbone input " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible by 16; pad first");
  }

  torch::Tensor x = (images - 0.5) / 0.25;
  std::vector<torch::Tensor> taps;
  for (const auto& stage : *stages_) {
    x = stage->as<torch::nn::Conv2d>()->forward(x);
    x = F::gelu(x);
    x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
    taps.push_back(x);
  }
  FeaturePyramid out;
  out.c3 = proj_stride4_->forward(taps[1]);
  out.c2 = proj_stride8_->forward(taps[2]);
  out.c1 = proj_stride16_->forward(taps[3]);
  return out;
}

}  // namespace geco2

#include "geco2/aggregation.hpp"

#include <stdexcept>

namespace geco2 {

namespace F = torch::nn::functional;

torch::Tensor upsample2x(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

LumImpl::LumImpl(int dim, bool use_norm) {
  conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, dim, 3).padding(1)));
  if (use_norm) norm = register_module("norm", torch::nn::GroupNorm(1, dim));
}

torch::Tensor LumImpl::forward(const torch::Tensor& x) {
  auto y = conv->forward(upsample2x(x));
  if (!norm.is_empty()) y = norm->forward(y);
  return F::gelu(y);
}

namespace {

torch::Tensor add_matching(const torch::Tensor& up, const torch::Tensor& skip, const char* what) {
  if (up.sizes() != skip.sizes()) {
    throw std::invalid_argument(std::string("aggregation shape mismatch at ") + what);
  }
  return up + skip;
}

}  // namespace

torch::Tensor aggregate(Lum& lum1, Lum& lum2, Lum& lum3, const torch::Tensor& q1,
                        const torch::Tensor& q2, const torch::Tensor& q3) {
  auto x = add_matching(lum1->forward(q1), q2, "level 2");
  x = add_matching(lum2->forward(x), q3, "level 3");
  return lum3->forward(x);
}

torch::Tensor aggregate_fp_ablation(Lum& lum1, Lum& lum2, Lum& lum3, const torch::Tensor& q1,
                                    const torch::Tensor& c2, const torch::Tensor& c3) {
  return aggregate(lum1, lum2, lum3, q1, c2, c3);
}

QueryAggregatorImpl::QueryAggregatorImpl(int dim, bool use_norm) {
  lum1 = register_module("lum1", Lum(dim, use_norm));
  lum2 = register_module("lum2", Lum(dim, use_norm));
  lum3 = register_module("lum3", Lum(dim, use_norm));
  lum_aux = register_module("lum_aux", Lum(dim, use_norm));
}

torch::Tensor QueryAggregatorImpl::forward(const torch::Tensor& q1, const torch::Tensor& q2,
                                           const torch::Tensor& q3) {
  return aggregate(lum1, lum2, lum3, q1, q2, q3);
}

torch::Tensor QueryAggregatorImpl::forward_fp(const torch::Tensor& q1, const torch::Tensor& c2,
                                              const torch::Tensor& c3) {
  return aggregate_fp_ablation(lum1, lum2, lum3, q1, c2, c3);
}

torch::Tensor QueryAggregatorImpl::aux_branch(const torch::Tensor& q3) {
  return lum_aux->forward(q3);
}

}  // namespace geco2

#include <gtest/gtest.h>

#include <cmath>

#include "geco2/aggregation.hpp"
#include "geco2/backbone.hpp"
#include "geco2/decoder.hpp"
#include "geco2/prototypes.hpp"
#include "geco2/query_encoder.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace geco2 {
namespace {

using testing::gradcheck;
using testing::parameters_of;
using testing::projection_like;

constexpr double kGradTol = 1e-4;

const auto kF64 = torch::TensorOptions().dtype(torch::kDouble);

torch::Tensor box_tensor(std::initializer_list<std::array<double, 4>> rows, torch::Dtype dtype = torch::kFloat) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return torch::tensor(flat, torch::kDouble).reshape({1, static_cast<int64_t>(rows.size()), 4}).to(dtype);
}

// ---------------------------------------------------------------- backbone

TEST(Backbone, ToyShapes) {
  Backbone bb(BackboneOptions{64, {16, 32, 64, 128}});
  torch::NoGradGuard g;
  const auto p = bb->forward(torch::rand({1, 3, 256, 256}));
  EXPECT_EQ(p.c1.sizes(), (torch::IntArrayRef{1, 64, 16, 16}));
  EXPECT_EQ(p.c2.sizes(), (torch::IntArrayRef{1, 64, 32, 32}));
  EXPECT_EQ(p.c3.sizes(), (torch::IntArrayRef{1, 64, 64, 64}));
}

TEST(Backbone, FullScaleShapes) {
  Backbone bb(BackboneOptions{256, {32, 64, 128, 256}});
  torch::NoGradGuard g;
  const auto p = bb->forward(torch::zeros({1, 3, 1024, 1024}));
  EXPECT_EQ(p.c1.sizes(), (torch::IntArrayRef{1, 256, 64, 64}));
  EXPECT_EQ(p.c2.sizes(), (torch::IntArrayRef{1, 256, 128, 128}));
  EXPECT_EQ(p.c3.sizes(), (torch::IntArrayRef{1, 256, 256, 256}));
  EXPECT_TRUE(torch::isfinite(p.c1).all().item<bool>());
}

TEST(Backbone, ZeroImageFinite) {
  Backbone bb;
  torch::NoGradGuard g;
  const auto p = bb->forward(torch::zeros({2, 3, 64, 96}));
  for (int l = 1; l <= 3; ++l) EXPECT_TRUE(torch::isfinite(p.level(l)).all().item<bool>());
  EXPECT_EQ(p.c1.sizes(), (torch::IntArrayRef{2, 64, 4, 6}));
}

TEST(Backbone, RejectsUnpaddedInput) {
  Backbone bb;
  EXPECT_THROW(bb->forward(torch::zeros({1, 3, 250, 256})), std::invalid_argument);
  EXPECT_THROW(bb->forward(torch::zeros({1, 1, 256, 256})), std::invalid_argument);
}

TEST(Backbone, GradientMatchesFiniteDifferences) {
  torch::manual_seed(0);
  Backbone bb(BackboneOptions{8, {4, 4, 8, 8}});
  bb->to(torch::kDouble);
  const auto image = torch::rand({1, 3, 32, 32}, kF64);
  const auto probe = bb->forward(image);
  const auto r1 = projection_like(probe.c1, 1), r2 = projection_like(probe.c2, 2), r3 = projection_like(probe.c3, 3);
  auto f = [&] {
    const auto p = bb->forward(image);
    return (p.c1 * r1).sum() + (p.c2 * r2).sum() + (p.c3 * r3).sum();
  };
  const auto r = gradcheck(f, parameters_of(*bb));
  EXPECT_LE(r.worst, kGradTol) << r.worst_input;
}

// -------------------------------------------------------------- prototypes

TEST(ShapeEncoder, IdenticalBoxesIdenticalRows) {
  ShapeEncoder phi(32);
  torch::NoGradGuard g;
  const auto out = phi->forward(box_tensor({{1, 2, 11, 22}, {1, 2, 11, 22}, {1, 2, 11, 22}}), 64, 64);
  EXPECT_EQ(out.sizes(), (torch::IntArrayRef{1, 3, 32}));
  EXPECT_TRUE(torch::equal(out[0][0], out[0][1]));
  EXPECT_TRUE(torch::equal(out[0][0], out[0][2]));
}

TEST(ShapeEncoder, ZeroWeightsGiveZeros) {
  ShapeEncoder phi(16);
  torch::NoGradGuard g;
  for (auto& p : phi->parameters()) p.zero_();
  const auto out = phi->forward(box_tensor({{0, 0, 5, 9}, {3, 3, 4, 4}}), 32, 32);
  EXPECT_EQ(out.abs().max().item<float>(), 0.0F);
}

TEST(ShapeEncoder, InputsAreNormalizedSizes) {
  // Scaling image and box together leaves the prototype unchanged.
  ShapeEncoder phi(8);
  torch::NoGradGuard g;
  const auto a = phi->forward(box_tensor({{0, 0, 10, 20}}), 100, 50);
  const auto b = phi->forward(box_tensor({{5, 5, 25, 45}}), 200, 100);
  EXPECT_TRUE(torch::allclose(a, b, 1e-6, 1e-7));
}

TEST(RoiAlign, ConstantMapGivesConstant) {
  const auto map = torch::full({1, 5, 8, 8}, 2.5);
  const auto out = appearance_prototypes(map, box_tensor({{3, 7, 20, 29}, {0, 0, 32, 32}}), 4.0);
  EXPECT_EQ(out.sizes(), (torch::IntArrayRef{1, 2, 5}));
  EXPECT_TRUE(torch::allclose(out, torch::full_like(out, 2.5)));
}

TEST(RoiAlign, SubCellBoxEqualsBilinearAtCentre) {
  torch::manual_seed(1);
  const auto map = torch::randn({1, 6, 8, 8}, kF64);
  // Every sample lies between feature centres 2.5 and 3.5 (image 10..14 at stride 4).
  const Box box{10.5, 10.2, 13.5, 13.0};
  const auto out = appearance_prototypes(map, box_tensor({{box.x1, box.y1, box.x2, box.y2}}, torch::kDouble), 4.0);
  const auto ref = oracle::bilinear(map[0], box.center_x() / 4.0, box.center_y() / 4.0);
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(out[0][0][c].item<double>(), ref[c], 1e-9);
}

TEST(RoiAlign, MatchesBilinearGridOracle) {
  torch::manual_seed(2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto map = torch::randn({1, 4, 12, 10}, kF64);
  for (int i = 0; i < 100; ++i) {
    const double x1 = u(rng) * 40, y1 = u(rng) * 48;
    const Box b{x1, y1, x1 + u(rng) * 20, y1 + u(rng) * 20};
    const auto out = appearance_prototypes(map, box_tensor({{b.x1, b.y1, b.x2, b.y2}}, torch::kDouble), 4.0);
    const auto ref = oracle::roi_mean(map[0], b, 4.0, 3);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(out[0][0][c].item<double>(), ref[c], 1e-6);
  }
}

TEST(RoiAlign, DegenerateBoxSamplesCentre) {
  torch::manual_seed(3);
  const auto map = torch::randn({1, 3, 8, 8}, kF64);
  const auto out = appearance_prototypes(map, box_tensor({{12, 9, 12, 9}}, torch::kDouble), 4.0);
  const auto ref = oracle::bilinear(map[0], 3.0, 2.25);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(out[0][0][c].item<double>(), ref[c], 1e-9);
}

TEST(RoiAlign, GradientMatchesFiniteDifferences) {
  torch::manual_seed(4);
  const auto map = torch::randn({1, 3, 8, 8}, kF64).requires_grad_(true);
  const auto boxes = box_tensor({{2.3, 5.1, 17.9, 30.2}, {8, 8, 12, 20}}, torch::kDouble);
  const auto w = torch::randn({1, 2, 3, 3, 3}, kF64);
  auto f = [&] { return (roi_align(map, boxes, 4.0) * w).sum(); };
  const auto r = gradcheck(f, {{"features", map}}, 64);
  EXPECT_LE(r.worst, kGradTol);
}

TEST(Prototypes, AssembleOrderAndShape) {
  const auto app = torch::randn({1, 3, 64});
  const auto shape = torch::randn({1, 3, 64});
  const auto p = assemble_prototypes(app, shape);
  EXPECT_EQ(p.sizes(), (torch::IntArrayRef{1, 6, 64}));
  EXPECT_TRUE(torch::equal(p.slice(1, 0, 3), app));
  EXPECT_TRUE(torch::equal(p.slice(1, 3, 6), shape));
  EXPECT_EQ(assemble_prototypes(torch::zeros({1, 2, 4}), torch::zeros({1, 2, 4})).abs().sum().item<float>(), 0.0F);
  EXPECT_THROW(assemble_prototypes(app, torch::randn({1, 2, 64})), std::invalid_argument);
}

TEST(Prototypes, SwappingExemplarsPermutesBothHalves) {
  torch::manual_seed(5);
  ShapeEncoder phi(16);
  const auto map = torch::randn({1, 16, 8, 8});
  const auto a = box_tensor({{1, 1, 9, 13}, {10, 4, 30, 12}, {5, 20, 9, 31}});
  const auto b = box_tensor({{10, 4, 30, 12}, {1, 1, 9, 13}, {5, 20, 9, 31}});
  torch::NoGradGuard g;
  const auto pa = assemble_prototypes(appearance_prototypes(map, a, 4.0), phi->forward(a, 32, 32));
  const auto pb = assemble_prototypes(appearance_prototypes(map, b, 4.0), phi->forward(b, 32, 32));
  const auto perm = torch::tensor({1, 0, 2, 4, 3, 5});
  EXPECT_TRUE(torch::equal(pa.index_select(1, perm), pb));
}

// ----------------------------------------------------------- query encoder

QueryEncoderOptions tiny_encoder(int ca, int da) {
  QueryEncoderOptions o;
  o.dim = 16;
  o.heads = 4;
  o.cross_attention_layers = ca;
  o.deformable_layers = da;
  o.sampling_points = 4;
  return o;
}

TEST(QueryEncoder, ValidatesHeads) {
  QueryEncoderOptions o = tiny_encoder(1, 1);
  o.heads = 3;
  EXPECT_THROW(validate(o), std::invalid_argument);
  EXPECT_THROW((void)ScaleQueryEncoder(o), std::invalid_argument);
}

TEST(QueryEncoder, ZeroIterationsAreIdentity) {
  ScaleQueryEncoder enc(tiny_encoder(0, 0));
  const auto c = torch::randn({2, 16, 5, 7});
  const auto p = torch::randn({2, 6, 16});
  EXPECT_TRUE(torch::equal(enc->cross_attend(c, p), c));
  EXPECT_TRUE(torch::equal(enc->deformable_refine(c), c));
  EXPECT_TRUE(torch::equal(enc->forward(c, p), c));
}

TEST(QueryEncoder, ShapePreservedAndDeterministic) {
  torch::manual_seed(6);
  ScaleQueryEncoder enc(tiny_encoder(3, 2));
  torch::NoGradGuard g;
  const auto c = torch::randn({1, 16, 9, 6});
  const auto p = torch::randn({1, 6, 16});
  const auto q1 = enc->forward(c, p);
  EXPECT_EQ(q1.sizes(), c.sizes());
  EXPECT_TRUE(torch::equal(q1, enc->forward(c, p)));
  EXPECT_EQ(enc->cross_attend(c, p).sizes(), c.sizes());
}

TEST(QueryEncoder, PrototypePermutationInvariance) {
  torch::manual_seed(7);
  ScaleQueryEncoder enc(tiny_encoder(3, 2));
  torch::NoGradGuard g;
  const auto c = torch::randn({1, 16, 8, 8});
  const auto p = torch::randn({1, 6, 16});
  const auto perm = torch::tensor({5, 2, 0, 4, 1, 3});
  const auto a = enc->forward(c, p);
  const auto b = enc->forward(c, p.index_select(1, perm));
  EXPECT_LE((a - b).abs().max().item<double>(), 1e-5);
}

TEST(CrossAttention, AttentionRowsSumToOne) {
  torch::manual_seed(8);
  CrossAttentionLayer ca(16, 4, false);
  torch::NoGradGuard g;
  const auto q = torch::randn({2, 30, 16});
  const auto p = torch::randn({2, 6, 16});
  torch::Tensor attn;
  const auto out = ca->forward(q, p, sine_position_encoding(5, 6, 16, q.options()), &attn);
  EXPECT_EQ(out.sizes(), q.sizes());
  EXPECT_EQ(attn.sizes(), (torch::IntArrayRef{2, 4, 30, 6}));
  EXPECT_LE((attn.sum(-1) - 1.0).abs().max().item<double>(), 1e-5);
}

TEST(CrossAttention, OptionalFeedForward) {
  CrossAttentionLayer with(16, 4, true);
  CrossAttentionLayer without(16, 4, false);
  EXPECT_GT(with->parameters().size(), without->parameters().size());
  torch::NoGradGuard g;
  const auto q = torch::randn({1, 12, 16});
  EXPECT_EQ(with->forward(q, torch::randn({1, 4, 16}), torch::zeros({1, 12, 16})).sizes(), q.sizes());
}

TEST(CrossAttention, GradientMatchesFiniteDifferences) {
  torch::manual_seed(9);
  CrossAttentionLayer ca(16, 4, false);
  ca->to(torch::kDouble);
  const auto q = torch::randn({1, 12, 16}, kF64).requires_grad_(true);
  const auto p = torch::randn({1, 6, 16}, kF64).requires_grad_(true);
  const auto pos = sine_position_encoding(3, 4, 16, kF64);
  const auto w = torch::randn({1, 12, 16}, kF64);
  auto f = [&] { return (ca->forward(q, p, pos) * w).sum(); };
  auto inputs = parameters_of(*ca);
  // Softmax ignores the key bias: a constant shift of every logit.
  std::erase_if(inputs, [](const auto& in) { return in.first == "k_proj.bias"; });
  inputs.emplace_back("queries", q);
  inputs.emplace_back("prototypes", p);
  const auto r = gradcheck(f, inputs);
  EXPECT_LE(r.worst, kGradTol) << r.worst_input;
  const auto g = torch::autograd::grad({f()}, {ca->k_proj->bias});
  EXPECT_LE(g[0].abs().max().item<double>(), 1e-12);
}

TEST(DeformableSample, ReferencePointsGatherOwnCell) {
  torch::manual_seed(10);
  const int64_t h = 5, w = 7, heads = 2, dh = 3, points = 4;
  const auto value = torch::randn({1, heads, dh, h, w}, kF64);
  const auto ref = reference_points(h, w, kF64).reshape({1, h * w, 1, 1, 2}).expand({1, h * w, heads, points, 2});
  const auto weights = torch::full({1, h * w, heads, points}, 1.0 / points, kF64);
  const auto out = deformable_sample(value, ref, weights);
  ASSERT_EQ(out.sizes(), (torch::IntArrayRef{1, h * w, heads * dh}));
  auto acc = value.accessor<double, 5>();
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t c = 0; c < w; ++c) {
      for (int64_t hd = 0; hd < heads; ++hd) {
        for (int64_t k = 0; k < dh; ++k) {
          EXPECT_NEAR(out[0][r * w + c][hd * dh + k].item<double>(), acc[0][hd][k][r][c], 1e-12);
        }
      }
    }
  }
}

TEST(DeformableSample, OutsideReadsZero) {
  const auto value = torch::ones({1, 1, 2, 4, 4});
  const auto loc = torch::full({1, 1, 1, 1, 2}, 3.0);
  const auto out = deformable_sample(value, loc, torch::ones({1, 1, 1, 1}));
  EXPECT_EQ(out.abs().sum().item<float>(), 0.0F);
}

TEST(DeformableAttention, ZeroOffsetsMatchGatherOracle) {
  torch::manual_seed(11);
  DeformableAttentionLayer da(16, 4, 4);
  da->to(torch::kDouble);
  da->reset_sampling_to_identity();
  torch::NoGradGuard g;
  const auto q = torch::randn({2, 16, 6, 5}, kF64);
  const auto out = da->forward(q);
  // Each cell reads its own value projection with total weight 1.
  const auto flat = q.flatten(2).transpose(1, 2);
  const auto expected =
      da->norm->forward(flat + da->out_proj->forward(da->value_proj->forward(flat))).transpose(1, 2).reshape(q.sizes());
  EXPECT_LE((out - expected).abs().max().item<double>(), 1e-6);
}

TEST(DeformableAttention, OffsetWeightsStartAtZero) {
  DeformableAttentionLayer da(16, 4, 4);
  EXPECT_EQ(da->offset_proj->weight.abs().sum().item<float>(), 0.0F);
  EXPECT_EQ(da->weight_proj->weight.abs().sum().item<float>(), 0.0F);
}

TEST(DeformableAttention, GradientMatchesFiniteDifferences) {
  torch::manual_seed(12);
  DeformableAttentionLayer da(16, 4, 4);
  da->to(torch::kDouble);
  {
    torch::NoGradGuard g;
    // Non-trivial offsets and weights so every path carries gradient.
    da->offset_proj->weight.normal_(0.0, 0.1);
    da->weight_proj->weight.normal_(0.0, 0.1);
  }
  const auto q = torch::randn({1, 16, 5, 6}, kF64).requires_grad_(true);
  const auto w = torch::randn({1, 16, 5, 6}, kF64);
  auto f = [&] { return (da->forward(q) * w).sum(); };
  auto inputs = parameters_of(*da);
  inputs.emplace_back("queries", q);
  const auto r = gradcheck(f, inputs);
  EXPECT_LE(r.worst, kGradTol) << r.worst_input;
}

TEST(QueryEncoder, GradientWrtPrototypes) {
  torch::manual_seed(13);
  ScaleQueryEncoder enc(tiny_encoder(3, 2));
  enc->to(torch::kDouble);
  const auto c = torch::randn({1, 16, 8, 8}, kF64);
  const auto p = torch::randn({1, 6, 16}, kF64).requires_grad_(true);
  const auto w = torch::randn({1, 16, 8, 8}, kF64);
  auto f = [&] { return (enc->forward(c, p) * w).sum(); };
  const auto r = gradcheck(f, {{"prototypes", p}}, 48);
  EXPECT_LE(r.worst, kGradTol);
}

// ------------------------------------------------------------- aggregation

TEST(Lum, DoublesResolution) {
  Lum lum(8);
  torch::NoGradGuard g;
  EXPECT_EQ(lum->forward(torch::randn({2, 8, 5, 7})).sizes(), (torch::IntArrayRef{2, 8, 10, 14}));
}

TEST(Lum, ZeroInputZeroBias) {
  Lum lum(8);
  torch::NoGradGuard g;
  lum->conv->bias.zero_();
  EXPECT_EQ(lum->forward(torch::zeros({1, 8, 4, 4})).abs().sum().item<float>(), 0.0F);
}

TEST(Lum, DeltaKernelOnConstantIsGelu) {
  Lum lum(4);
  torch::NoGradGuard g;
  lum->conv->weight.zero_();
  lum->conv->bias.zero_();
  for (int c = 0; c < 4; ++c) lum->conv->weight[c][c][1][1] = 1.0;
  const double value = 0.7;
  const auto out = lum->forward(torch::full({1, 4, 3, 5}, value));
  const double gelu = 0.5 * value * (1.0 + std::erf(value / std::sqrt(2.0)));
  EXPECT_LE((out - gelu).abs().max().item<double>(), 1e-6);
}

TEST(Lum, UpsampleMatchesHalfPixelOracle) {
  torch::manual_seed(14);
  const auto x = torch::randn({1, 2, 4, 5}, kF64);
  const auto up = upsample2x(x);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 10; ++c) {
      // Output pixel centre (c + 0.5) / 2 in input cell coordinates.
      const auto ref = oracle::bilinear(x[0], (c + 0.5) / 2.0, (r + 0.5) / 2.0);
      for (int ch = 0; ch < 2; ++ch) EXPECT_NEAR(up[0][ch][r][c].item<double>(), ref[ch], 1e-12);
    }
  }
}

TEST(Lum, UpsampleIsLinear) {
  const auto x = torch::randn({1, 3, 6, 6});
  EXPECT_LE((upsample2x(x * 2.5) - upsample2x(x) * 2.5).abs().max().item<double>(), 1e-6);
}

TEST(Lum, GradientMatchesFiniteDifferences) {
  torch::manual_seed(15);
  Lum lum(4);
  lum->to(torch::kDouble);
  const auto x = torch::randn({1, 4, 3, 3}, kF64).requires_grad_(true);
  const auto w = torch::randn({1, 4, 6, 6}, kF64);
  auto f = [&] { return (lum->forward(x) * w).sum(); };
  auto inputs = parameters_of(*lum);
  inputs.emplace_back("input", x);
  const auto r = gradcheck(f, inputs);
  EXPECT_LE(r.worst, kGradTol) << r.worst_input;
}

TEST(Aggregation, OutputShape) {
  QueryAggregator agg(8);
  torch::NoGradGuard g;
  const auto out = agg->forward(torch::randn({1, 8, 16, 16}), torch::randn({1, 8, 32, 32}), torch::randn({1, 8, 64, 64}));
  EXPECT_EQ(out.sizes(), (torch::IntArrayRef{1, 8, 128, 128}));
  EXPECT_EQ(agg->aux_branch(torch::randn({1, 8, 64, 64})).sizes(), (torch::IntArrayRef{1, 8, 128, 128}));
}

TEST(Aggregation, ShapeMismatchThrows) {
  QueryAggregator agg(8);
  EXPECT_THROW(agg->forward(torch::randn({1, 8, 16, 16}), torch::randn({1, 8, 30, 32}), torch::randn({1, 8, 64, 64})),
               std::invalid_argument);
}

TEST(Aggregation, ZeroInZeroOut) {
  QueryAggregator agg(8);
  torch::NoGradGuard g;
  for (auto* lum : {&agg->lum1, &agg->lum2, &agg->lum3}) (*lum)->conv->bias.zero_();
  const auto out = agg->forward(torch::zeros({1, 8, 4, 4}), torch::zeros({1, 8, 8, 8}), torch::zeros({1, 8, 16, 16}));
  EXPECT_EQ(out.abs().sum().item<float>(), 0.0F);
}

TEST(Aggregation, FpPathIsAggregateOfRawLevels) {
  QueryAggregator agg(8);
  torch::NoGradGuard g;
  const auto q1 = torch::randn({1, 8, 4, 4}), c2 = torch::randn({1, 8, 8, 8}), c3 = torch::randn({1, 8, 16, 16});
  EXPECT_TRUE(torch::equal(agg->forward(q1, c2, c3), agg->forward_fp(q1, c2, c3)));
}

TEST(Aggregation, LumParametersDisjoint) {
  QueryAggregator agg(8);
  std::set<const void*> seen;
  std::size_t total = 0;
  for (const auto* lum : {&agg->lum1, &agg->lum2, &agg->lum3, &agg->lum_aux}) {
    for (const auto& p : (*lum)->parameters()) {
      seen.insert(p.data_ptr());
      ++total;
    }
  }
  EXPECT_EQ(seen.size(), total);
  EXPECT_EQ(total, 8u);
}

TEST(Aggregation, GradientWrtEachLevel) {
  torch::manual_seed(16);
  QueryAggregator agg(4);
  agg->to(torch::kDouble);
  const auto q1 = torch::randn({1, 4, 2, 2}, kF64).requires_grad_(true);
  const auto q2 = torch::randn({1, 4, 4, 4}, kF64).requires_grad_(true);
  const auto q3 = torch::randn({1, 4, 8, 8}, kF64).requires_grad_(true);
  const auto w = torch::randn({1, 4, 16, 16}, kF64);
  auto f = [&] { return (agg->forward(q1, q2, q3) * w).sum(); };
  const auto grads = torch::autograd::grad({f()}, {q1, q2, q3});
  for (const auto& gr : grads) EXPECT_GT(gr.abs().sum().item<double>(), 0.0);
  const auto r = gradcheck(f, {{"q1", q1}, {"q2", q2}, {"q3", q3}});
  EXPECT_LE(r.worst, kGradTol) << r.worst_input;
}

// ----------------------------------------------------------------- decoder

TEST(Decoder, HeadShapes) {
  QueryDecoder dec(8);
  torch::NoGradGuard g;
  const auto out = dec->forward(torch::randn({2, 8, 6, 5}));
  EXPECT_EQ(out.objectness.sizes(), (torch::IntArrayRef{2, 6, 5}));
  EXPECT_EQ(out.boxes.sizes(), (torch::IntArrayRef{2, 6, 5, 4}));
  EXPECT_GT(out.boxes.min().item<float>(), 0.0F);
  EXPECT_LT(out.boxes.max().item<float>(), 1.0F);
}

TEST(Decoder, BoxHeadAtMatchesDenseAtCells) {
  torch::manual_seed(21);
  QueryDecoder dec(8);
  const auto q = torch::randn({2, 8, 5, 6});
  const auto cells = torch::tensor({0L, 7L, 29L, 30L, 41L, 59L});
  const auto sparse = dec->box_head_at(q, cells);
  const auto dense = dec->box_head(q);
  EXPECT_EQ(sparse.sizes(), dense.sizes());
  const auto flat_s = sparse.reshape({60, 4});
  const auto flat_d = dense.reshape({60, 4});
  EXPECT_TRUE(torch::allclose(flat_s.index_select(0, cells), flat_d.index_select(0, cells), 1e-6, 1e-7));
  EXPECT_EQ(flat_s.abs().sum(1).nonzero().numel(), cells.numel());
}

TEST(Decoder, ZeroObjectnessWeights) {
  QueryDecoder dec(8);
  torch::NoGradGuard g;
  dec->objectness->weight.zero_();
  dec->objectness->bias.zero_();
  EXPECT_EQ(dec->objectness_head(torch::randn({1, 8, 4, 4})).abs().sum().item<float>(), 0.0F);
}

TEST(Decoder, ZeroFinalBoxLayerGivesHalf) {
  QueryDecoder dec(8);
  torch::NoGradGuard g;
  dec->box_fc3->weight.zero_();
  dec->box_fc3->bias.zero_();
  const auto b = dec->box_head(torch::randn({1, 8, 3, 3}));
  EXPECT_TRUE(torch::equal(b, torch::full_like(b, 0.5)));
}

TEST(Decoder, LeakySlope) {
  QueryDecoder dec(1, 0.01);
  torch::NoGradGuard g;
  dec->objectness->weight.fill_(1.0);
  dec->objectness->bias.zero_();
  const auto y = dec->objectness_head(torch::full({1, 1, 1, 1}, -2.0));
  EXPECT_NEAR(y.item<double>(), -0.02, 1e-7);
}

TEST(Decoder, GradientsMatchFiniteDifferences) {
  torch::manual_seed(17);
  QueryDecoder dec(8);
  dec->to(torch::kDouble);
  const auto q = torch::randn({1, 8, 4, 4}, kF64).requires_grad_(true);
  const auto wo = torch::randn({1, 4, 4}, kF64);
  const auto wb = torch::randn({1, 4, 4, 4}, kF64);
  auto fo = [&] { return (dec->objectness_head(q) * wo).sum(); };
  auto fb = [&] { return (dec->box_head(q) * wb).sum(); };
  auto inputs = parameters_of(*dec);
  inputs.emplace_back("queries", q);
  const auto ro = gradcheck(fo, {{"queries", q}, {"objectness.weight", dec->objectness->weight},
                                 {"objectness.bias", dec->objectness->bias}});
  EXPECT_LE(ro.worst, kGradTol) << ro.worst_input;
  const auto rb = gradcheck(fb, inputs);
  EXPECT_LE(rb.worst, kGradTol) << rb.worst_input;
}

struct PlantedMap {
  std::vector<float> objectness;
  std::vector<float> tlrb;
  int h;
  int w;
};

PlantedMap blank_map(int h, int w, float t) {
  return {std::vector<float>(static_cast<std::size_t>(h) * w, 0.0F),
          std::vector<float>(static_cast<std::size_t>(h) * w * 4, t), h, w};
}

void add_bump(PlantedMap& m, int r0, int c0, double peak, double sigma) {
  for (int r = 0; r < m.h; ++r) {
    for (int c = 0; c < m.w; ++c) {
      const double d2 = (r - r0) * (r - r0) + (c - c0) * (c - c0);
      auto& v = m.objectness[static_cast<std::size_t>(r) * m.w + c];
      v = std::max(v, static_cast<float>(peak * std::exp(-d2 / (2 * sigma * sigma))));
    }
  }
}

DetectionSet run(const PlantedMap& m, ImageSize image, double thr) {
  return extract_detections({m.h, m.w, {m.objectness.data(), m.objectness.size()}}, {m.tlrb.data(), m.tlrb.size()},
                            image, {thr, 0.5});
}

TEST(Extraction, SingleBump) {
  auto m = blank_map(32, 32, 0.02F);
  add_bump(m, 10, 20, 1.0, 1.5);
  const auto d = run(m, {64, 64}, 0.3);
  ASSERT_EQ(d.count(), 1u);
  EXPECT_DOUBLE_EQ(d.boxes[0].center_x(), 41.0);
  EXPECT_DOUBLE_EQ(d.boxes[0].center_y(), 21.0);
  EXPECT_DOUBLE_EQ(*d.boxes[0].score, 1.0);
}

TEST(Extraction, TwoBumps) {
  auto m = blank_map(32, 32, 0.02F);
  add_bump(m, 5, 5, 0.9, 1.0);
  add_bump(m, 25, 20, 0.8, 1.0);
  EXPECT_EQ(run(m, {64, 64}, 0.3).count(), 2u);
}

TEST(Extraction, PlantedPeaksRecovered) {
  std::mt19937_64 rng(18);
  const int h = 96, w = 96;
  auto m = blank_map(h, w, 0.0F);
  std::vector<Box> planted;
  std::vector<GridCell> cells;
  std::uniform_int_distribution<int> pos(2, 93);
  std::uniform_real_distribution<double> half(0.005, 0.015);
  while (cells.size() < 50) {
    const GridCell c{pos(rng), pos(rng)};
    const bool far = std::none_of(cells.begin(), cells.end(), [&](const GridCell& o) {
      return std::abs(o.row - c.row) < 9 && std::abs(o.col - c.col) < 9;
    });
    if (!far) continue;
    cells.push_back(c);
    const Tlrb t{half(rng), half(rng), half(rng), half(rng)};
    const std::size_t base = (static_cast<std::size_t>(c.row) * w + c.col) * 4;
    m.tlrb[base] = static_cast<float>(t.top);
    m.tlrb[base + 1] = static_cast<float>(t.left);
    m.tlrb[base + 2] = static_cast<float>(t.right);
    m.tlrb[base + 3] = static_cast<float>(t.bottom);
    add_bump(m, c.row, c.col, 0.6 + 0.4 * half(rng) / 0.015, 1.2);
    planted.push_back(decode_tlrb(c, t, {h, w}, {192, 192}));
  }
  const auto d = run(m, {192, 192}, 0.3);
  ASSERT_EQ(d.count(), 50u);
  for (const Box& p : planted) {
    double best = 0.0;
    for (const Box& b : d.boxes) best = std::max(best, iou(p, b));
    EXPECT_GE(best, 0.9);
  }
}

TEST(Extraction, ThresholdMonotoneAndDeterministic) {
  std::mt19937_64 rng(19);
  auto m = blank_map(24, 24, 0.03F);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  for (auto& v : m.objectness) v = u(rng);
  std::size_t previous = std::numeric_limits<std::size_t>::max();
  for (double thr = 0.0; thr < 1.0; thr += 0.1) {
    const auto d = run(m, {48, 48}, thr);
    EXPECT_LE(d.count(), previous);
    previous = d.count();
    EXPECT_EQ(d, run(m, {48, 48}, thr));
  }
}

TEST(Extraction, RefineIsIdentity) {
  DetectionSet d{"a", {{1, 2, 3, 4, 0.5}, {5, 6, 7, 8, 0.25}}};
  EXPECT_EQ(refine_boxes(d), d);
  EXPECT_TRUE(refine_boxes(DetectionSet{}).boxes.empty());
}

}  // namespace
}  // namespace geco2

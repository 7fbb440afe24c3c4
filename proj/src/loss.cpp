#include "geco2/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace geco2 {

TrainingTargets build_targets(const std::vector<Box>& gt_boxes, GridSize grid, ImageSize image,
                              double sigma_scale) {
  TrainingTargets t;
  t.grid = grid;
  t.image = image;
  t.gt_boxes = gt_boxes;
  t.objectness = torch::zeros({grid.height, grid.width}, torch::kFloat);
  t.box_tlrb = torch::zeros({grid.height, grid.width, 4}, torch::kFloat);
  t.positive = torch::zeros({grid.height, grid.width}, torch::kBool);

  auto obj = t.objectness.accessor<float, 2>();
  auto tlrb = t.box_tlrb.accessor<float, 3>();
  auto pos = t.positive.accessor<bool, 2>();
  std::vector<double> owner_area(static_cast<std::size_t>(grid.height) * grid.width, 0.0);

  const double gx = static_cast<double>(grid.width) / image.width;
  const double gy = static_cast<double>(grid.height) / image.height;
  for (const Box& b : gt_boxes) {
    const double cx = b.center_x() * gx;
    const double cy = b.center_y() * gy;
    const double sigma = std::max(0.25, sigma_scale * std::min(b.width() * gx, b.height() * gy) / 2.0);
    const int radius = static_cast<int>(std::ceil(3.0 * sigma)) + 1;
    const int c0 = std::max(0, static_cast<int>(cx) - radius);
    const int c1 = std::min(grid.width - 1, static_cast<int>(cx) + radius);
    const int r0 = std::max(0, static_cast<int>(cy) - radius);
    const int r1 = std::min(grid.height - 1, static_cast<int>(cy) + radius);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double dx = c + 0.5 - cx;
        const double dy = r + 0.5 - cy;
        const auto v = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
        obj[r][c] = std::max(obj[r][c], v);
      }
    }

    const EncodedBox enc = encode_tlrb(b, grid, image);
    const int r = enc.cell.row;
    const int c = enc.cell.col;
    auto& area = owner_area[static_cast<std::size_t>(r) * grid.width + c];
    if (!pos[r][c] || b.area() < area) {
      pos[r][c] = true;
      area = b.area();
      tlrb[r][c][0] = static_cast<float>(enc.tlrb.top);
      tlrb[r][c][1] = static_cast<float>(enc.tlrb.left);
      tlrb[r][c][2] = static_cast<float>(enc.tlrb.right);
      tlrb[r][c][3] = static_cast<float>(enc.tlrb.bottom);
    }
  }
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      if (pos[r][c]) obj[r][c] = 1.0F;
    }
  }
  return t;
}

std::vector<int64_t> select_hard_negatives(std::span<const double> errors,
                                           std::span<const bool> positive, int64_t count) {
  std::vector<int64_t> negatives;
  negatives.reserve(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!positive[i]) negatives.push_back(static_cast<int64_t>(i));
  }
  const auto k = std::clamp<int64_t>(count, 0, static_cast<int64_t>(negatives.size()));
  std::partial_sort(negatives.begin(), negatives.begin() + k, negatives.end(),
                    [&](int64_t a, int64_t b) {
                      if (errors[a] != errors[b]) return errors[a] > errors[b];
                      return a < b;
                    });
  negatives.resize(static_cast<std::size_t>(k));
  return negatives;
}

torch::Tensor giou_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  constexpr double eps = 1e-9;
  auto px1 = pred.select(1, 0), py1 = pred.select(1, 1), px2 = pred.select(1, 2), py2 = pred.select(1, 3);
  auto tx1 = target.select(1, 0), ty1 = target.select(1, 1), tx2 = target.select(1, 2), ty2 = target.select(1, 3);
  auto area_p = (px2 - px1).clamp_min(0) * (py2 - py1).clamp_min(0);
  auto area_t = (tx2 - tx1).clamp_min(0) * (ty2 - ty1).clamp_min(0);
  auto iw = (torch::min(px2, tx2) - torch::max(px1, tx1)).clamp_min(0);
  auto ih = (torch::min(py2, ty2) - torch::max(py1, ty1)).clamp_min(0);
  auto inter = iw * ih;
  auto uni = area_p + area_t - inter;
  auto iou = inter / (uni + eps);
  auto cw = torch::max(px2, tx2) - torch::min(px1, tx1);
  auto ch = torch::max(py2, ty2) - torch::min(py1, ty1);
  auto hull = cw * ch;
  auto giou = iou - (hull - uni) / (hull + eps);
  return 1.0 - giou;
}

namespace {

/// Image-space boxes from tlrb rows at the given flat cell indices.
torch::Tensor decode_rows(const torch::Tensor& tlrb, const torch::Tensor& cells, GridSize grid,
                          ImageSize image) {
  auto opts = tlrb.options();
  auto col = (cells.remainder(grid.width)).to(opts.dtype());
  auto row = (cells.div(grid.width, "floor")).to(opts.dtype());
  auto xc = (col + 0.5) * (static_cast<double>(image.width) / grid.width);
  auto yc = (row + 0.5) * (static_cast<double>(image.height) / grid.height);
  return torch::stack({xc - tlrb.select(1, 1) * image.width, yc - tlrb.select(1, 0) * image.height,
                       xc + tlrb.select(1, 2) * image.width, yc + tlrb.select(1, 3) * image.height},
                      1);
}

}  // namespace

LossTerms detection_loss(const torch::Tensor& objectness, const torch::Tensor& boxes,
                         const TrainingTargets& targets, const LossOptions& options) {
  const int64_t h = targets.grid.height;
  const int64_t w = targets.grid.width;
  if (objectness.sizes() != torch::IntArrayRef{h, w} || boxes.sizes() != torch::IntArrayRef{h, w, 4}) {
    throw std::invalid_argument("prediction shapes do not match the training targets");
  }
  const auto opts = objectness.options();
  auto err = (objectness - targets.objectness.to(opts)).pow(2).reshape({h * w});
  auto positive = targets.positive.reshape({h * w}).contiguous();
  auto pos_idx = positive.nonzero().flatten();
  const int64_t num_pos = pos_idx.numel();

  const int64_t want = num_pos > 0
                           ? static_cast<int64_t>(std::llround(options.mining_ratio * num_pos))
                           : options.mining_floor;
  auto err_cpu = err.detach().to(torch::kCPU, torch::kDouble).contiguous();
  const auto n = static_cast<std::size_t>(h * w);
  auto neg = select_hard_negatives({err_cpu.data_ptr<double>(), n}, {positive.data_ptr<bool>(), n}, want);
  auto neg_idx = torch::tensor(neg, torch::kLong);

  auto selected = torch::cat({pos_idx, neg_idx});
  LossTerms terms;
  terms.objectness = selected.numel() > 0 ? err.index_select(0, selected).mean()
                                          : torch::zeros({}, opts);
  if (num_pos > 0) {
    auto pred = boxes.reshape({h * w, 4}).index_select(0, pos_idx);
    auto tgt = targets.box_tlrb.to(opts).reshape({h * w, 4}).index_select(0, pos_idx);
    terms.box = giou_loss(decode_rows(pred, pos_idx, targets.grid, targets.image),
                          decode_rows(tgt, pos_idx, targets.grid, targets.image))
                    .mean();
  } else {
    terms.box = torch::zeros({}, opts);
  }
  terms.total = terms.objectness + options.box_weight * terms.box;
  return terms;
}

LossTerms detection_loss(const DenseOutputs& outs, const std::vector<TrainingTargets>& targets,
                         const LossOptions& options) {
  if (outs.objectness.size(0) != static_cast<int64_t>(targets.size())) {
    throw std::invalid_argument("batch size does not match the number of targets");
  }
  LossTerms sum;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto t = detection_loss(outs.objectness[i], outs.boxes[i], targets[i], options);
    if (i == 0) {
      sum = t;
    } else {
      sum.total = sum.total + t.total;
      sum.objectness = sum.objectness + t.objectness;
      sum.box = sum.box + t.box;
    }
  }
  const auto b = static_cast<double>(targets.size());
  return {sum.total / b, sum.objectness / b, sum.box / b};
}

double average_object_size(const std::vector<Box>& boxes) {
  if (boxes.empty()) return 0.0;
  double total = 0.0;
  for (const Box& b : boxes) total += std::max(b.width(), b.height());
  return total / static_cast<double>(boxes.size());
}

bool aux_gate_open(double avg_object_size, double theta_size) {
  return avg_object_size > 0.0 && avg_object_size < theta_size;
}

torch::Tensor total_loss(const torch::Tensor& main, const torch::Tensor& aux,
                         double avg_object_size, double alpha, double theta_size) {
  if (alpha == 0.0 || !aux_gate_open(avg_object_size, theta_size)) return main;
  return main + alpha * aux;
}

}  // namespace geco2

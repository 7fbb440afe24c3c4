#include "geco2/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace geco2 {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 <= x2 && y1 <= y2;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace {

bool nms_precedes(const Box& a, const Box& b) {
  const double sa = a.score.value_or(0.0);
  const double sb = b.score.value_or(0.0);
  if (sa != sb) return sa > sb;
  if (a.y1 != b.y1) return a.y1 < b.y1;
  if (a.x1 != b.x1) return a.x1 < b.x1;
  if (a.y2 != b.y2) return a.y2 < b.y2;
  return a.x2 < b.x2;
}

void check_grid(GridSize grid, ImageSize image) {
  if (grid.height <= 0 || grid.width <= 0 || image.height <= 0 || image.width <= 0) {
    throw std::invalid_argument("grid and image sizes must be positive");
  }
}

}  // namespace

DetectionSet nms(const DetectionSet& dets, double iou_threshold) {
  std::vector<Box> order = dets.boxes;
  std::stable_sort(order.begin(), order.end(), nms_precedes);

  DetectionSet out;
  out.image_id = dets.image_id;
  for (const Box& candidate : order) {
    const bool suppressed = std::any_of(out.boxes.begin(), out.boxes.end(), [&](const Box& kept) {
      return iou(kept, candidate) > iou_threshold;
    });
    if (!suppressed) out.boxes.push_back(candidate);
  }
  return out;
}

std::array<double, 2> cell_center(GridCell cell, GridSize grid, ImageSize image) {
  check_grid(grid, image);
  const double sx = static_cast<double>(image.width) / grid.width;
  const double sy = static_cast<double>(image.height) / grid.height;
  return {(cell.col + 0.5) * sx, (cell.row + 0.5) * sy};
}

Box decode_tlrb_unclamped(GridCell cell, const Tlrb& tlrb, GridSize grid, ImageSize image) {
  check_grid(grid, image);
  if (cell.row < 0 || cell.row >= grid.height || cell.col < 0 || cell.col >= grid.width) {
    throw std::out_of_range("grid cell (" + std::to_string(cell.row) + ", " +
                            std::to_string(cell.col) + ") outside " +
                            std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  const auto [xc, yc] = cell_center(cell, grid, image);
  Box b;
  b.x1 = xc - tlrb.left * image.width;
  b.y1 = yc - tlrb.top * image.height;
  b.x2 = xc + tlrb.right * image.width;
  b.y2 = yc + tlrb.bottom * image.height;
  return b;
}

Box decode_tlrb(GridCell cell, const Tlrb& tlrb, GridSize grid, ImageSize image) {
  Box b = decode_tlrb_unclamped(cell, tlrb, grid, image);
  b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(image.width));
  b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(image.width));
  b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(image.height));
  b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(image.height));
  return b;
}

EncodedBox encode_tlrb(const Box& box, GridSize grid, ImageSize image) {
  check_grid(grid, image);
  const double sx = static_cast<double>(image.width) / grid.width;
  const double sy = static_cast<double>(image.height) / grid.height;

  EncodedBox enc;
  enc.cell.col = std::clamp(static_cast<int>(std::floor(box.center_x() / sx)), 0, grid.width - 1);
  enc.cell.row = std::clamp(static_cast<int>(std::floor(box.center_y() / sy)), 0, grid.height - 1);
  if (box.area() <= 0.0) return enc;

  const auto [xc, yc] = cell_center(enc.cell, grid, image);
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  enc.tlrb.top = unit((yc - box.y1) / image.height);
  enc.tlrb.left = unit((xc - box.x1) / image.width);
  enc.tlrb.right = unit((box.x2 - xc) / image.width);
  enc.tlrb.bottom = unit((box.y2 - yc) / image.height);
  return enc;
}

std::vector<GridCell> local_maxima(const ScoreMapView& scores, double threshold) {
  std::vector<GridCell> out;
  for (int r = 0; r < scores.height; ++r) {
    for (int c = 0; c < scores.width; ++c) {
      const float v = scores.at(r, c);
      if (!(v > threshold)) continue;
      bool keep = true;
      for (int dr = -1; dr <= 1 && keep; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int nr = r + dr;
          const int nc = c + dc;
          if (nr < 0 || nr >= scores.height || nc < 0 || nc >= scores.width) continue;
          const float n = scores.at(nr, nc);
          // Equal neighbours earlier in raster order own the plateau.
          const bool earlier = dr < 0 || (dr == 0 && dc < 0);
          if (n > v || (n == v && earlier)) {
            keep = false;
            break;
          }
        }
      }
      if (keep) out.push_back({r, c});
    }
  }
  return out;
}

}  // namespace geco2

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geco2 {

/// Axis-aligned box in image pixel coordinates. Predicted boxes carry a score.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
  std::optional<double> score;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct DetectionSet {
  std::string image_id;
  std::vector<Box> boxes;

  std::size_t count() const { return boxes.size(); }

  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

struct GridSize {
  int height = 0;
  int width = 0;
};

struct ImageSize {
  int height = 0;
  int width = 0;
};

struct GridCell {
  int row = 0;
  int col = 0;

  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Distances from a cell center to the top/left/right/bottom box edges,
/// normalized by image height (t, b) and width (l, r).
struct Tlrb {
  double top = 0.0;
  double left = 0.0;
  double right = 0.0;
  double bottom = 0.0;
};

struct EncodedBox {
  GridCell cell;
  Tlrb tlrb;
};

/// Read-only row-major H x W score map.
struct ScoreMapView {
  int height = 0;
  int width = 0;
  std::span<const float> values;

  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

inline constexpr double kDefaultNmsIou = 0.5;

/// Intersection over union. Zero-area boxes yield 0 against anything.
double iou(const Box& a, const Box& b);

/// Greedy NMS ordered by (score desc, y1, x1, y2, x2 asc). A box is
/// suppressed when its IoU with an already kept box exceeds the threshold.
DetectionSet nms(const DetectionSet& dets, double iou_threshold = kDefaultNmsIou);

/// Image-space center of a query-grid cell.
std::array<double, 2> cell_center(GridCell cell, GridSize grid, ImageSize image);

Box decode_tlrb(GridCell cell, const Tlrb& tlrb, GridSize grid, ImageSize image);

/// Same as decode_tlrb but without clamping to image bounds.
Box decode_tlrb_unclamped(GridCell cell, const Tlrb& tlrb, GridSize grid, ImageSize image);

EncodedBox encode_tlrb(const Box& box, GridSize grid, ImageSize image);

/// Cells that dominate their in-bounds 8-neighbourhood with score > threshold.
/// On plateaus only cells with no equal-valued neighbour earlier in raster
/// order qualify. Output is in raster order.
std::vector<GridCell> local_maxima(const ScoreMapView& scores, double threshold);

}  // namespace geco2

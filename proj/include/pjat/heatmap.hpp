#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace pjat {

using Vec2 = std::array<double, 2>;

struct GridDims {
  int width = 0;
  int height = 0;
  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// W x H grid of confidences, row-major (index = y * width + x).
class Heatmap {
 public:
  Heatmap() = default;
  Heatmap(GridDims dims, double fill = 0.0);
  Heatmap(GridDims dims, std::vector<double> values);

  GridDims dims() const { return dims_; }
  int width() const { return dims_.width; }
  int height() const { return dims_.height; }
  std::size_t size() const { return values_.size(); }

  double at(int x, int y) const { return values_[index(x, y)]; }
  double& at(int x, int y) { return values_[index(x, y)]; }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(dims_.width) + static_cast<std::size_t>(x);
  }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  friend bool operator==(const Heatmap&, const Heatmap&) = default;

 private:
  GridDims dims_;
  std::vector<double> values_;
};

/// Default ground-truth sigma: 3 px on a 64-pixel-wide grid, scaled with width.
double default_sigma(GridDims dims);

/// Unnormalized Gaussian exp(-|p - c|^2 / (2 sigma^2)); peak 1 at integral centers.
/// Throws DataError when the center lies outside the grid or sigma <= 0.
Heatmap render_gaussian_gt(Vec2 center, double sigma, GridDims dims);

struct PeakPoint {
  Vec2 point;
  double value = 0.0;
};

/// Maximum pixel, ties resolved to the lowest row-major index.
PeakPoint argmax_point(const Heatmap& h);

/// Binary 8-bit PGM (P5); v -> floor(255 v + 0.5) after clamping to [0,1].
void write_pgm(const Heatmap& h, const std::filesystem::path& path);
Heatmap read_pgm(const std::filesystem::path& path);

/// Full-precision "x,y,value" dump.
void overlay_csv(const Heatmap& h, const std::filesystem::path& path);

}  // namespace pjat

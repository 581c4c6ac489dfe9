#include "pjat/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "pjat/error.hpp"

namespace pjat {

Heatmap::Heatmap(GridDims dims, double fill) : dims_(dims), values_(dims.pixels(), fill) {}

Heatmap::Heatmap(GridDims dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
  if (values_.size() != dims_.pixels()) throw DataError("heatmap: value count does not match dimensions");
}

double default_sigma(GridDims dims) { return 3.0 * static_cast<double>(dims.width) / 64.0; }

Heatmap render_gaussian_gt(Vec2 center, double sigma, GridDims dims) {
  if (!(sigma > 0.0)) throw DataError("render_gaussian_gt: sigma must be positive");
  if (!(center[0] >= 0.0 && center[0] < dims.width && center[1] >= 0.0 && center[1] < dims.height)) {
    throw DataError("render_gaussian_gt: center outside grid");
  }
  Heatmap h(dims);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < dims.height; ++y) {
    const double dy = y - center[1];
    for (int x = 0; x < dims.width; ++x) {
      const double dx = x - center[0];
      h.at(x, y) = std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return h;
}

PeakPoint argmax_point(const Heatmap& h) {
  const auto v = h.values();
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  const auto w = static_cast<std::size_t>(h.width());
  return {{static_cast<double>(best % w), static_cast<double>(best / w)}, v.empty() ? 0.0 : v[best]};
}

void write_pgm(const Heatmap& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P5\n" << h.width() << ' ' << h.height() << "\n255\n";
  std::string bytes(h.size(), '\0');
  const auto v = h.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double c = std::clamp(v[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::floor(255.0 * c + 0.5)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Heatmap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw DataError("unsupported PGM header in " + path.string());
  in.get();  // single whitespace after maxval
  std::string bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError("truncated PGM " + path.string());
  std::vector<double> values(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return Heatmap({w, h}, std::move(values));
}

void overlay_csv(const Heatmap& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "x,y,value\n";
  char buf[64];
  for (int y = 0; y < h.height(); ++y) {
    for (int x = 0; x < h.width(); ++x) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g\n", x, y, h.at(x, y));
      out << buf;
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace pjat

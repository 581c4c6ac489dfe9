#include "pjat/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "pjat/error.hpp"

namespace pjat {

CoordMlp::CoordMlp(const std::string& prefix, std::size_t cond, std::size_t feat, std::size_t hid)
    : cond_dim(cond),
      feat_dim(feat),
      hidden(hid),
      w1(prefix + ".0.W", {cond + feat, hid}),
      b1(prefix + ".0.b", {hid}),
      w2(prefix + ".1.W", {hid, hid}),
      b2(prefix + ".1.b", {hid}),
      w3(prefix + ".2.W", {hid, 1}),
      b3(prefix + ".2.b", {1}) {}

void CoordMlp::init(std::mt19937_64& rng) {
  init_glorot_uniform(w1, cond_dim + feat_dim, hidden, rng);
  init_glorot_uniform(w2, hidden, hidden, rng);
  init_glorot_uniform(w3, hidden, 1, rng);
}

ParamList CoordMlp::params() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

namespace kernels {

namespace {

void check_shapes(const CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::size_t out_size) {
  if (cond.size() != m.cond_dim || feats.cols != m.feat_dim || out_size != feats.rows) {
    throw DataError("coord_mlp '" + m.w1.name + "': shape mismatch");
  }
}

// Layer-1 pre-activation shared by all pixels: b1 + cond^T W1[:cond].
std::vector<double> cond_base(const CoordMlp& m, std::span<const double> cond) {
  const std::size_t h = m.hidden;
  std::vector<double> base(m.b1.value);
  for (std::size_t c = 0; c < m.cond_dim; ++c) {
    const double v = cond[c];
    const double* w = m.w1.value.data() + c * h;
    for (std::size_t j = 0; j < h; ++j) base[j] += v * w[j];
  }
  return base;
}

struct PixelScratch {
  std::vector<double> z1, z2;
  explicit PixelScratch(std::size_t h) : z1(h), z2(h) {}
};

// Fills s.z1 / s.z2 with post-ReLU activations and returns the sigmoid output.
inline double forward_pixel(const CoordMlp& m, const std::vector<double>& base, const double* feat, PixelScratch& s) {
  const std::size_t h = m.hidden;
  const double* w1f = m.w1.value.data() + m.cond_dim * h;
  std::copy(base.begin(), base.end(), s.z1.begin());
  for (std::size_t f = 0; f < m.feat_dim; ++f) {
    const double v = feat[f];
    const double* w = w1f + f * h;
    for (std::size_t j = 0; j < h; ++j) s.z1[j] += v * w[j];
  }
  for (auto& v : s.z1) v = v < 0.0 ? 0.0 : v;

  std::copy(m.b2.value.begin(), m.b2.value.end(), s.z2.begin());
  const double* w2 = m.w2.value.data();
  for (std::size_t i = 0; i < h; ++i) {
    const double a = s.z1[i];
    if (a == 0.0) continue;
    const double* w = w2 + i * h;
    for (std::size_t j = 0; j < h; ++j) s.z2[j] += a * w[j];
  }
  double z3 = m.b3.value[0];
  const double* w3 = m.w3.value.data();
  for (std::size_t i = 0; i < h; ++i) {
    s.z2[i] = s.z2[i] < 0.0 ? 0.0 : s.z2[i];
    z3 += s.z2[i] * w3[i];
  }
  return sigmoid(z3);
}

struct BlockGrads {
  std::vector<double> w1f, sum_dz1, w2, b2, w3;
  double b3 = 0.0;
  BlockGrads(std::size_t feat, std::size_t h) : w1f(feat * h), sum_dz1(h), w2(h * h), b2(h), w3(h) {}
};

}  // namespace

void coord_mlp_forward(const CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::span<double> out) {
  check_shapes(m, cond, feats, out.size());
  const auto base = cond_base(m, cond);
  const auto n = static_cast<std::ptrdiff_t>(feats.rows);
  const bool probe = kink_probe::enabled();
  // Same site numbering as the reference path: one site per ReLU layer.
  const std::uint64_t site1 = probe ? kink_probe::next_site() : 0;
  const std::uint64_t site2 = probe ? kink_probe::next_site() : 0;
#pragma omp parallel
  {
    PixelScratch s(m.hidden);
    std::uint64_t acc = 0;
#pragma omp for schedule(static)
    for (std::ptrdiff_t p = 0; p < n; ++p) {
      const auto pu = static_cast<std::size_t>(p);
      out[pu] = forward_pixel(m, base, feats.data.data() + pu * m.feat_dim, s);
      if (probe) {
        for (std::size_t j = 0; j < m.hidden; ++j) {
          acc += kink_probe::mix(site1, pu * m.hidden + j, s.z1[j] > 0.0);
          acc += kink_probe::mix(site2, pu * m.hidden + j, s.z2[j] > 0.0);
        }
      }
    }
    if (probe) kink_probe::add(acc);
  }
}

void coord_mlp_backward(CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::span<const double> d_out,
                        std::span<double> d_cond) {
  check_shapes(m, cond, feats, d_out.size());
  const std::size_t h = m.hidden;
  const std::size_t n_pix = feats.rows;
  const std::size_t n_blocks = (n_pix + kPixelBlock - 1) / kPixelBlock;
  const auto base = cond_base(m, cond);
  std::vector<BlockGrads> blocks(n_blocks, BlockGrads(m.feat_dim, h));

#pragma omp parallel
  {
    PixelScratch s(h);
    std::vector<double> dz2(h), dz1(h);
#pragma omp for schedule(static)
    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(n_blocks); ++bi) {
      BlockGrads& g = blocks[static_cast<std::size_t>(bi)];
      const std::size_t begin = static_cast<std::size_t>(bi) * kPixelBlock;
      const std::size_t end = std::min(begin + kPixelBlock, n_pix);
      for (std::size_t p = begin; p < end; ++p) {
        if (d_out[p] == 0.0) continue;
        const double* feat = feats.data.data() + p * m.feat_dim;
        const double y = forward_pixel(m, base, feat, s);
        const double dz3 = d_out[p] * y * (1.0 - y);
        g.b3 += dz3;
        const double* w3 = m.w3.value.data();
        for (std::size_t j = 0; j < h; ++j) {
          g.w3[j] += dz3 * s.z2[j];
          dz2[j] = s.z2[j] > 0.0 ? dz3 * w3[j] : 0.0;
          g.b2[j] += dz2[j];
        }
        const double* w2 = m.w2.value.data();
        for (std::size_t i = 0; i < h; ++i) {
          const double a = s.z1[i];
          if (a == 0.0) {
            dz1[i] = 0.0;
            continue;
          }
          const double* w = w2 + i * h;
          double* gw = g.w2.data() + i * h;
          double acc = 0.0;
          for (std::size_t j = 0; j < h; ++j) {
            gw[j] += a * dz2[j];
            acc += w[j] * dz2[j];
          }
          dz1[i] = acc;
        }
        for (std::size_t f = 0; f < m.feat_dim; ++f) {
          const double v = feat[f];
          double* gw = g.w1f.data() + f * h;
          for (std::size_t j = 0; j < h; ++j) gw[j] += v * dz1[j];
        }
        for (std::size_t j = 0; j < h; ++j) g.sum_dz1[j] += dz1[j];
      }
    }
  }

  std::vector<double> sum_dz1(h, 0.0);
  double* gw1f = m.w1.grad.data() + m.cond_dim * h;
  for (const auto& g : blocks) {
    for (std::size_t i = 0; i < g.w1f.size(); ++i) gw1f[i] += g.w1f[i];
    for (std::size_t i = 0; i < h * h; ++i) m.w2.grad[i] += g.w2[i];
    for (std::size_t j = 0; j < h; ++j) {
      sum_dz1[j] += g.sum_dz1[j];
      m.b2.grad[j] += g.b2[j];
      m.w3.grad[j] += g.w3[j];
    }
    m.b3.grad[0] += g.b3;
  }
  for (std::size_t j = 0; j < h; ++j) m.b1.grad[j] += sum_dz1[j];
  for (std::size_t c = 0; c < m.cond_dim; ++c) {
    double* gw = m.w1.grad.data() + c * h;
    const double* w = m.w1.value.data() + c * h;
    double acc = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
      gw[j] += cond[c] * sum_dz1[j];
      acc += w[j] * sum_dz1[j];
    }
    if (!d_cond.empty()) d_cond[c] += acc;
  }
}

namespace reference {

namespace {

Matrix concat_inputs(std::span<const double> cond, const Matrix& feats) {
  Matrix x(feats.rows, cond.size() + feats.cols);
  for (std::size_t p = 0; p < feats.rows; ++p) {
    auto r = x.row(p);
    std::copy(cond.begin(), cond.end(), r.begin());
    const auto f = feats.row(p);
    std::copy(f.begin(), f.end(), r.begin() + static_cast<std::ptrdiff_t>(cond.size()));
  }
  return x;
}

}  // namespace

void coord_mlp_forward(const CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::span<double> out) {
  check_shapes(m, cond, feats, out.size());
  const Matrix x = concat_inputs(cond, feats);
  const Matrix a1 = relu(dense_forward(x, m.w1, &m.b1));
  const Matrix a2 = relu(dense_forward(a1, m.w2, &m.b2));
  const Matrix y = sigmoid(dense_forward(a2, m.w3, &m.b3));
  std::copy(y.data.begin(), y.data.end(), out.begin());
}

void coord_mlp_backward(CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::span<const double> d_out,
                        std::span<double> d_cond) {
  check_shapes(m, cond, feats, d_out.size());
  const Matrix x = concat_inputs(cond, feats);
  const Matrix z1 = dense_forward(x, m.w1, &m.b1);
  const Matrix a1 = relu(z1);
  const Matrix z2 = dense_forward(a1, m.w2, &m.b2);
  const Matrix a2 = relu(z2);
  const Matrix y = sigmoid(dense_forward(a2, m.w3, &m.b3));
  Matrix dy(y.rows, 1);
  std::copy(d_out.begin(), d_out.end(), dy.data.begin());
  const Matrix dz3 = sigmoid_backward(y, dy);
  const Matrix da2 = dense_backward(a2, dz3, m.w3, &m.b3);
  const Matrix da1 = dense_backward(a1, relu_backward(z2, da2), m.w2, &m.b2);
  const Matrix dx = dense_backward(x, relu_backward(z1, da1), m.w1, &m.b1);
  if (!d_cond.empty()) {
    for (std::size_t p = 0; p < dx.rows; ++p) {
      for (std::size_t c = 0; c < m.cond_dim; ++c) d_cond[c] += dx(p, c);
    }
  }
}

}  // namespace reference
}  // namespace kernels
}  // namespace pjat

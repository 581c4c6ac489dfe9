#pragma once

#include <random>
#include <span>
#include <string>

#include "pjat/autodiff.hpp"
#include "pjat/matrix.hpp"

namespace pjat {

/// Coordinate-conditioned MLP evaluated once per pixel:
///   sigmoid(W3 relu(W2 relu(W1 [cond, feat_p] + b1) + b2) + b3)
/// `cond` is shared by every pixel; `feat_p` is row p of a per-pixel feature
/// matrix. W1 rows are ordered cond first, then features.
struct CoordMlp {
  std::size_t cond_dim = 0;
  std::size_t feat_dim = 0;
  std::size_t hidden = 0;
  Param w1, b1, w2, b2, w3, b3;

  CoordMlp() = default;
  CoordMlp(const std::string& prefix, std::size_t cond, std::size_t feat, std::size_t hid);

  void init(std::mt19937_64& rng);
  ParamList params();
};

namespace kernels {

/// Pixels per reduction block in the parallel backward pass. Blocks are
/// reduced in index order, so results do not depend on the thread count.
inline constexpr std::size_t kPixelBlock = 256;

void coord_mlp_forward(const CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::span<double> out);

/// Accumulates parameter gradients given dL/d(out). `d_cond`, when non-empty,
/// receives += dL/d(cond).
void coord_mlp_backward(CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::span<const double> d_out,
                        std::span<double> d_cond);

namespace reference {

// Serial versions built from the generic dense/relu/sigmoid ops. Kept for
// testing and benchmarking the parallel kernels.
void coord_mlp_forward(const CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::span<double> out);
void coord_mlp_backward(CoordMlp& m, std::span<const double> cond, const Matrix& feats, std::span<const double> d_out,
                        std::span<double> d_cond);

}  // namespace reference
}  // namespace kernels
}  // namespace pjat

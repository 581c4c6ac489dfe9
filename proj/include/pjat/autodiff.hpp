#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pjat/heatmap.hpp"
#include "pjat/matrix.hpp"

namespace pjat {

/// A learnable tensor with its accumulated gradient. 2-D tensors are [in, out].
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> s);

  std::size_t size() const { return value.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  void zero_grad();
};

using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);
void init_glorot_uniform(Param& p, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
void init_normal(Param& p, double stddev, std::mt19937_64& rng);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_bt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_at(const Matrix& a, const Matrix& b);  // a^T * b

/// y = x W + b. `b` may be null.
Matrix dense_forward(const Matrix& x, const Param& W, const Param* b);
/// Accumulates dW, db and returns dx.
Matrix dense_backward(const Matrix& x, const Matrix& dy, Param& W, Param* b);

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& dy);

double sigmoid(double x);
Matrix sigmoid(const Matrix& x);
Matrix sigmoid_backward(const Matrix& y, const Matrix& dy);

Matrix softmax_rows(const Matrix& x);
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

/// Per-row normalization over columns with learnable scale/shift.
Matrix layer_norm(const Matrix& x, const Param& gamma, const Param& beta, LayerNormCache* cache);
Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& dy, Param& gamma, Param& beta);

/// Sum (not mean) of squared differences.
double mse_sum(std::span<const double> pred, std::span<const double> target);
double mse_sum(const Heatmap& pred, const Heatmap& target);
/// d_pred += scale * 2 (pred - target)
void mse_sum_backward(std::span<const double> pred, std::span<const double> target, double scale,
                      std::span<double> d_pred);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg = {});

  /// Applies one update from the current gradients, then zeroes them.
  void step();
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Activation-pattern probe for finite differences. While enabled, every
/// piecewise-linear op (ReLU, clamp) adds a hash of which side of its kink
/// each element fell on; two evaluations with equal signatures ran through
/// the same linear pieces. Sites are numbered in call order, so evaluations
/// must issue their ops in the same sequence.
namespace kink_probe {
void begin();
std::uint64_t end();
bool enabled();
/// Id of the next recording op; call from serial code.
std::uint64_t next_site();
/// Adds a precomputed partial signature (thread-safe).
void add(std::uint64_t partial);
std::uint64_t mix(std::uint64_t site, std::uint64_t element, bool positive);
}  // namespace kink_probe

struct GradCheckOptions {
  double h = 1e-5;
  /// 0 checks every entry; otherwise a seeded random subsample per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Skip entries whose +h and -h evaluations take different piecewise-linear
  /// branches; the central difference does not estimate the derivative there.
  bool skip_kinks = true;
};

struct TensorGradCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  // entry with the largest relative error
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<TensorGradCheck> tensors;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// `model_fn(true)` must return the loss and accumulate analytic gradients into
/// the params; `model_fn(false)` returns the loss only. Central differences,
/// relative error |ga - gfd| / max(|ga|, |gfd|, 1e-8).
GradCheckReport grad_check(const std::function<double(bool)>& model_fn, const ParamList& params,
                           const GradCheckOptions& opts = {});

}  // namespace pjat

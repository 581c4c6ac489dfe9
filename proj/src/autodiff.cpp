#include "pjat/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "pjat/error.hpp"

namespace pjat {

Param::Param(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
  const std::size_t count = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  value.assign(count, 0.0);
  grad.assign(count, 0.0);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

void init_glorot_uniform(Param& p, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : p.value) v = dist(rng);
}

void init_normal(Param& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : p.value) v = dist(rng);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw DataError("matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* ci = c.data.data() + i * c.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      const double* bk = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw DataError("matmul_bt: inner dimensions differ");
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw DataError("matmul_at: inner dimensions differ");
  Matrix c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = a(k, i);
      double* ci = c.data.data() + i * c.cols;
      const double* bk = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix dense_forward(const Matrix& x, const Param& W, const Param* b) {
  if (W.shape.size() != 2 || x.cols != W.rows()) {
    throw DataError("dense '" + W.name + "': input width " + std::to_string(x.cols) + " does not match weight rows " +
                    std::to_string(W.rows()));
  }
  const std::size_t out = W.cols();
  if (b && b->size() != out) throw DataError("dense '" + W.name + "': bias width mismatch");
  Matrix y(x.rows, out);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* yi = y.data.data() + i * out;
    if (b) std::copy(b->value.begin(), b->value.end(), yi);
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double xik = x(i, k);
      if (xik == 0.0) continue;
      const double* wk = W.value.data() + k * out;
      for (std::size_t j = 0; j < out; ++j) yi[j] += xik * wk[j];
    }
  }
  return y;
}

Matrix dense_backward(const Matrix& x, const Matrix& dy, Param& W, Param* b) {
  const std::size_t out = W.cols();
  if (dy.cols != out || dy.rows != x.rows || x.cols != W.rows()) throw DataError("dense_backward '" + W.name + "': shape mismatch");
  Matrix dx(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* dyi = dy.data.data() + i * out;
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double xik = x(i, k);
      double* gk = W.grad.data() + k * out;
      const double* wk = W.value.data() + k * out;
      double s = 0.0;
      for (std::size_t j = 0; j < out; ++j) {
        gk[j] += xik * dyi[j];
        s += wk[j] * dyi[j];
      }
      dx(i, k) = s;
    }
    if (b) {
      for (std::size_t j = 0; j < out; ++j) b->grad[j] += dyi[j];
    }
  }
  return dx;
}

namespace kink_probe {

namespace {
std::atomic<bool> g_enabled{false};
std::atomic<std::uint64_t> g_site{0};
std::atomic<std::uint64_t> g_sum{0};
}  // namespace

void begin() {
  g_site.store(0);
  g_sum.store(0);
  g_enabled.store(true);
}

std::uint64_t end() {
  g_enabled.store(false);
  return g_sum.load();
}

bool enabled() { return g_enabled.load(std::memory_order_relaxed); }

std::uint64_t next_site() { return g_site.fetch_add(1); }

void add(std::uint64_t partial) { g_sum.fetch_add(partial, std::memory_order_relaxed); }

std::uint64_t mix(std::uint64_t site, std::uint64_t element, bool positive) {
  // splitmix64 finalizer over (site, element, side)
  std::uint64_t z = site * 0x9E3779B97F4A7C15ULL + element * 0xBF58476D1CE4E5B9ULL + (positive ? 0x94D049BB133111EBULL : 0);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace kink_probe

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (auto& v : y.data) v = v < 0.0 ? 0.0 : v;  // keeps NaN
  if (kink_probe::enabled()) {
    const std::uint64_t site = kink_probe::next_site();
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += kink_probe::mix(site, i, x.data[i] > 0.0);
    kink_probe::add(acc);
  }
  return y;
}

Matrix relu_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
  return dx;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
  Matrix y = x;
  for (auto& v : y.data) v = sigmoid(v);
  return y;
}

Matrix sigmoid_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx(y.rows, y.cols);
  for (std::size_t i = 0; i < y.size(); ++i) dx.data[i] = dy.data[i] * y.data[i] * (1.0 - y.data[i]);
  return dx;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto xi = x.row(i);
    auto yi = y.row(i);
    const double m = *std::max_element(xi.begin(), xi.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      yi[j] = std::exp(xi[j] - m);
      sum += yi[j];
    }
    for (auto& v : yi) v /= sum;
  }
  return y;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx(y.rows, y.cols);
  for (std::size_t i = 0; i < y.rows; ++i) {
    const auto yi = y.row(i);
    const auto gi = dy.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) dot += yi[j] * gi[j];
    auto di = dx.row(i);
    for (std::size_t j = 0; j < y.cols; ++j) di[j] = yi[j] * (gi[j] - dot);
  }
  return dx;
}

Matrix layer_norm(const Matrix& x, const Param& gamma, const Param& beta, LayerNormCache* cache) {
  if (gamma.size() != x.cols || beta.size() != x.cols) throw DataError("layer_norm '" + gamma.name + "': width mismatch");
  const double n = static_cast<double>(x.cols);
  Matrix y(x.rows, x.cols);
  Matrix xhat(x.rows, x.cols);
  std::vector<double> inv_std(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto xi = x.row(i);
    const double mean = std::accumulate(xi.begin(), xi.end(), 0.0) / n;
    double var = 0.0;
    for (double v : xi) var += (v - mean) * (v - mean);
    var /= n;
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < x.cols; ++j) {
      xhat(i, j) = (xi[j] - mean) * inv_std[i];
      y(i, j) = gamma.value[j] * xhat(i, j) + beta.value[j];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& dy, Param& gamma, Param& beta) {
  const auto& xhat = cache.xhat;
  const double n = static_cast<double>(xhat.cols);
  Matrix dx(xhat.rows, xhat.cols);
  std::vector<double> dxhat(xhat.cols);
  for (std::size_t i = 0; i < xhat.rows; ++i) {
    double sum = 0.0, sum_x = 0.0;
    for (std::size_t j = 0; j < xhat.cols; ++j) {
      gamma.grad[j] += dy(i, j) * xhat(i, j);
      beta.grad[j] += dy(i, j);
      dxhat[j] = dy(i, j) * gamma.value[j];
      sum += dxhat[j];
      sum_x += dxhat[j] * xhat(i, j);
    }
    for (std::size_t j = 0; j < xhat.cols; ++j) {
      dx(i, j) = cache.inv_std[i] / n * (n * dxhat[j] - sum - xhat(i, j) * sum_x);
    }
  }
  return dx;
}

double mse_sum(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw DataError("mse_sum: size mismatch");
  // Neumaier-compensated: finite-difference checks resolve loss changes
  // near the rounding error of a plain running sum.
  double s = 0.0, c = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    const double x = d * d;
    const double t = s + x;
    c += std::abs(s) >= x ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

double mse_sum(const Heatmap& pred, const Heatmap& target) {
  if (pred.dims() != target.dims()) throw DataError("mse_sum: heatmap dimensions differ");
  return mse_sum(pred.values(), target.values());
}

void mse_sum_backward(std::span<const double> pred, std::span<const double> target, double scale,
                      std::span<double> d_pred) {
  for (std::size_t i = 0; i < pred.size(); ++i) d_pred[i] += scale * 2.0 * (pred[i] - target[i]);
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p.value[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
    p.zero_grad();
  }
}

GradCheckReport grad_check(const std::function<double(bool)>& model_fn, const ParamList& params,
                           const GradCheckOptions& opts) {
  zero_grads(params);
  const double base = model_fn(true);
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");
  std::vector<std::vector<double>> analytic;
  for (const auto* p : params) analytic.push_back(p->grad);
  zero_grads(params);

  std::mt19937_64 rng(opts.seed);
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    std::vector<std::size_t> entries(p.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.max_entries_per_tensor != 0 && entries.size() > opts.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    TensorGradCheck t;
    t.name = p.name;
    t.checked = entries.size();
    for (std::size_t i : entries) {
      const double saved = p.value[i];
      if (opts.skip_kinks) kink_probe::begin();
      p.value[i] = saved + opts.h;
      const double up = model_fn(false);
      const std::uint64_t sig_up = opts.skip_kinks ? kink_probe::end() : 0;
      if (opts.skip_kinks) kink_probe::begin();
      p.value[i] = saved - opts.h;
      const double down = model_fn(false);
      const std::uint64_t sig_down = opts.skip_kinks ? kink_probe::end() : 0;
      p.value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss at " + p.name);
      if (sig_up != sig_down) {
        ++t.skipped_kinks;
        continue;
      }
      const double fd = (up - down) / (2.0 * opts.h);
      const double ga = analytic[k][i];
      const double abs_err = std::abs(ga - fd);
      const double rel = abs_err / std::max({std::abs(ga), std::abs(fd), 1e-8});
      t.max_abs_error = std::max(t.max_abs_error, abs_err);
      if (rel > t.max_rel_error || (rel == t.max_rel_error && i == entries.front())) {
        t.max_rel_error = rel;
        t.worst_index = i;
        t.worst_analytic = ga;
        t.worst_numeric = fd;
      }
    }
    t.checked -= t.skipped_kinks;
    report.checked += t.checked;
    report.skipped_kinks += t.skipped_kinks;
    report.max_rel_error = std::max(report.max_rel_error, t.max_rel_error);
    report.tensors.push_back(std::move(t));
  }
  return report;
}

}  // namespace pjat

#include "pjat/pjat_model.hpp"

#include <cmath>

#include "pjat/error.hpp"

namespace pjat {

namespace {

constexpr double kTokenInitStd = 0.02;

Matrix slice_cols(const Matrix& m, std::size_t c0, std::size_t width) {
  Matrix out(m.rows, width);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out(r, c) = m(r, c0 + c);
  }
  return out;
}

void add_cols(Matrix& dst, std::size_t c0, const Matrix& src) {
  for (std::size_t r = 0; r < src.rows; ++r) {
    for (std::size_t c = 0; c < src.cols; ++c) dst(r, c0 + c) += src(r, c);
  }
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

Matrix row_matrix(std::span<const double> v) {
  Matrix m(1, v.size());
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

}  // namespace

std::string to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::j_ja_only: return "j_ja_only";
    case HeadVariant::f_ja_only: return "f_ja_only";
    case HeadVariant::f_ja_and_j_ja: return "f_ja_and_j_ja";
    case HeadVariant::imagewise: return "imagewise";
  }
  return "?";
}

HeadVariant head_variant_from_string(const std::string& s) {
  for (auto v : {HeadVariant::j_ja_only, HeadVariant::f_ja_only, HeadVariant::f_ja_and_j_ja, HeadVariant::imagewise}) {
    if (to_string(v) == s) return v;
  }
  throw UsageError("unknown head variant '" + s + "' (expected j_ja_only, f_ja_only, f_ja_and_j_ja, imagewise)");
}

void validate(const PjatConfig& c) {
  if (c.d_model <= 0 || c.n_heads <= 0 || c.d_model % c.n_heads != 0) throw UsageError("d_model must be a positive multiple of n_heads");
  if (c.n_layers < 1) throw UsageError("n_layers must be >= 1");
  if (c.head_hidden <= 0) throw UsageError("head_hidden must be positive");
  if (c.n_actions < 1) throw UsageError("n_actions must be positive");
  if (c.grid_w <= 0 || c.grid_h <= 0) throw UsageError("grid dimensions must be positive");
}

nlohmann::json to_json(const PjatConfig& c) {
  return {{"d_model", c.d_model},       {"n_heads", c.n_heads},           {"n_layers", c.n_layers},
          {"head_hidden", c.head_hidden}, {"n_actions", c.n_actions},     {"grid", {c.grid_w, c.grid_h}},
          {"variant", to_string(c.variant)}, {"use_location", c.use_location}, {"use_gaze", c.use_gaze},
          {"use_action", c.use_action}};
}

PjatConfig pjat_config_from_json(const nlohmann::json& j) {
  PjatConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.n_actions = j.at("n_actions").get<int>();
  c.grid_w = j.at("grid").at(0).get<int>();
  c.grid_h = j.at("grid").at(1).get<int>();
  c.variant = head_variant_from_string(j.at("variant").get<std::string>());
  c.use_location = j.at("use_location").get<bool>();
  c.use_gaze = j.at("use_gaze").get<bool>();
  c.use_action = j.at("use_action").get<bool>();
  return c;
}

ParamList EncoderLayer::params() {
  return {&ln1_gamma, &ln1_beta, &wq, &wk, &wv, &wo, &bo, &ln2_gamma, &ln2_beta, &ff1_w, &ff1_b, &ff2_w, &ff2_b};
}

PjatModel::PjatModel(const PjatConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto in = cfg_.input_dim();
  const auto hh = static_cast<std::size_t>(cfg_.head_hidden);
  std::mt19937_64 rng(seed);

  fe_w1_ = Param("pjat.fe.0.W", {in, d});
  fe_b1_ = Param("pjat.fe.0.b", {d});
  fe_w2_ = Param("pjat.fe.1.W", {d, d});
  fe_b2_ = Param("pjat.fe.1.b", {d});
  init_glorot_uniform(fe_w1_, in, d, rng);
  init_glorot_uniform(fe_w2_, d, d, rng);

  ja_token_ = Param("pjat.ja_token", {1, d});
  init_normal(ja_token_, kTokenInitStd, rng);

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "pjat.encoder." + std::to_string(l) + ".";
    EncoderLayer e{Param(p + "ln1.gamma", {d}), Param(p + "ln1.beta", {d}),
                   Param(p + "attn.Wq", {d, d}),  Param(p + "attn.Wk", {d, d}),
                   Param(p + "attn.Wv", {d, d}),  Param(p + "attn.Wo", {d, d}),
                   Param(p + "attn.bo", {d}),     Param(p + "ln2.gamma", {d}),
                   Param(p + "ln2.beta", {d}),    Param(p + "ffn.0.W", {d, 4 * d}),
                   Param(p + "ffn.0.b", {4 * d}), Param(p + "ffn.1.W", {4 * d, d}),
                   Param(p + "ffn.1.b", {d})};
    std::fill(e.ln1_gamma.value.begin(), e.ln1_gamma.value.end(), 1.0);
    std::fill(e.ln2_gamma.value.begin(), e.ln2_gamma.value.end(), 1.0);
    for (Param* w : {&e.wq, &e.wk, &e.wv, &e.wo}) init_glorot_uniform(*w, d, d, rng);
    init_glorot_uniform(e.ff1_w, d, 4 * d, rng);
    init_glorot_uniform(e.ff2_w, 4 * d, d, rng);
    layers_.push_back(std::move(e));
  }
  lnf_gamma_ = Param("pjat.encoder.final_ln.gamma", {d});
  lnf_beta_ = Param("pjat.encoder.final_ln.beta", {d});
  std::fill(lnf_gamma_.value.begin(), lnf_gamma_.value.end(), 1.0);

  const GridDims g = grid();
  if (cfg_.variant == HeadVariant::imagewise) {
    const std::size_t out = g.pixels();
    img_w1_ = Param("pjat.img_head.0.W", {d, hh});
    img_b1_ = Param("pjat.img_head.0.b", {hh});
    img_w2_ = Param("pjat.img_head.1.W", {hh, hh});
    img_b2_ = Param("pjat.img_head.1.b", {hh});
    img_w3_ = Param("pjat.img_head.2.W", {hh, out});
    img_b3_ = Param("pjat.img_head.2.b", {out});
    init_glorot_uniform(img_w1_, d, hh, rng);
    init_glorot_uniform(img_w2_, hh, hh, rng);
    init_glorot_uniform(img_w3_, hh, out, rng);
  } else {
    const std::size_t cond = cfg_.variant == HeadVariant::f_ja_and_j_ja ? 2 * d : d;
    head_ = CoordMlp("pjat.head", cond, 2, hh);
    head_.init(rng);
    // Coordinate rows of the first head layer use the small-normal scheme.
    std::normal_distribution<double> coord_init(0.0, kTokenInitStd);
    for (std::size_t i = cond * hh; i < head_.w1.size(); ++i) head_.w1.value[i] = coord_init(rng);
  }

  coords_ = Matrix(g.pixels(), 2);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(g.width) + static_cast<std::size_t>(x);
      coords_(p, 0) = x / static_cast<double>(g.width) * 2.0 - 1.0;
      coords_(p, 1) = y / static_cast<double>(g.height) * 2.0 - 1.0;
    }
  }
}

ParamList PjatModel::params() {
  ParamList out{&fe_w1_, &fe_b1_, &fe_w2_, &fe_b2_, &ja_token_};
  for (auto& l : layers_) {
    for (auto* p : l.params()) out.push_back(p);
  }
  out.push_back(&lnf_gamma_);
  out.push_back(&lnf_beta_);
  if (cfg_.variant == HeadVariant::imagewise) {
    for (Param* p : {&img_w1_, &img_b1_, &img_w2_, &img_b2_, &img_w3_, &img_b3_}) out.push_back(p);
  } else {
    for (auto* p : head_.params()) out.push_back(p);
  }
  return out;
}

std::vector<double> PjatModel::input_vector(const PersonAttributes& p) const {
  std::vector<double> v(cfg_.input_dim(), 0.0);
  if (cfg_.use_location) {
    v[0] = p.location[0] / cfg_.grid_w * 2.0 - 1.0;
    v[1] = p.location[1] / cfg_.grid_h * 2.0 - 1.0;
  }
  const auto na = static_cast<std::size_t>(cfg_.n_actions);
  if (cfg_.use_action) {
    for (std::size_t k = 0; k < na; ++k) v[2 + k] = p.action[k];
  }
  if (cfg_.use_gaze) {
    v[2 + na] = p.gaze[0];
    v[3 + na] = p.gaze[1];
  }
  return v;
}

std::vector<double> PjatModel::embed_person(const PersonAttributes& p) const {
  const Matrix x = row_matrix(input_vector(p));
  const Matrix f = dense_forward(relu(dense_forward(x, fe_w1_, &fe_b1_)), fe_w2_, &fe_b2_);
  return f.data;
}

Encoding PjatModel::encode(const Matrix& features) const {
  if (features.rows == 0) throw DataError("encode: empty person list");
  const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
  const std::size_t n_heads = static_cast<std::size_t>(cfg_.n_heads);
  const std::size_t dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Encoding enc;
  enc.tokens = Matrix(features.rows + 1, d);
  std::copy(features.data.begin(), features.data.end(), enc.tokens.data.begin());
  std::copy(ja_token_.value.begin(), ja_token_.value.end(), enc.tokens.row(features.rows).begin());

  Matrix x = enc.tokens;
  for (const auto& layer : layers_) {
    EncoderLayerCache c;
    c.x_in = x;
    c.h1 = layer_norm(x, layer.ln1_gamma, layer.ln1_beta, &c.ln1);
    c.q = dense_forward(c.h1, layer.wq, nullptr);
    c.k = dense_forward(c.h1, layer.wk, nullptr);
    c.v = dense_forward(c.h1, layer.wv, nullptr);
    c.heads = Matrix(x.rows, d);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const Matrix qh = slice_cols(c.q, h * dh, dh);
      const Matrix kh = slice_cols(c.k, h * dh, dh);
      const Matrix vh = slice_cols(c.v, h * dh, dh);
      Matrix scores = matmul_bt(qh, kh);
      for (auto& s : scores.data) s *= scale;
      c.probs.push_back(softmax_rows(scores));
      add_cols(c.heads, h * dh, matmul(c.probs.back(), vh));
    }
    c.x_mid = x;
    add_into(c.x_mid, dense_forward(c.heads, layer.wo, &layer.bo));
    c.h2 = layer_norm(c.x_mid, layer.ln2_gamma, layer.ln2_beta, &c.ln2);
    c.ff_pre = dense_forward(c.h2, layer.ff1_w, &layer.ff1_b);
    c.ff_act = relu(c.ff_pre);
    x = c.x_mid;
    add_into(x, dense_forward(c.ff_act, layer.ff2_w, &layer.ff2_b));
    enc.layers.push_back(std::move(c));
  }
  enc.pre_final = x;
  enc.out = layer_norm(x, lnf_gamma_, lnf_beta_, &enc.final_ln);
  return enc;
}

Matrix PjatModel::encode_backward(const Encoding& enc, Matrix d_out) {
  const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
  const std::size_t n_heads = static_cast<std::size_t>(cfg_.n_heads);
  const std::size_t dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix dx = layer_norm_backward(enc.final_ln, d_out, lnf_gamma_, lnf_beta_);
  for (std::size_t li = layers_.size(); li-- > 0;) {
    EncoderLayer& layer = layers_[li];
    const EncoderLayerCache& c = enc.layers[li];

    const Matrix d_ff_act = dense_backward(c.ff_act, dx, layer.ff2_w, &layer.ff2_b);
    const Matrix d_h2 = dense_backward(c.h2, relu_backward(c.ff_pre, d_ff_act), layer.ff1_w, &layer.ff1_b);
    Matrix d_mid = dx;
    add_into(d_mid, layer_norm_backward(c.ln2, d_h2, layer.ln2_gamma, layer.ln2_beta));

    const Matrix d_heads = dense_backward(c.heads, d_mid, layer.wo, &layer.bo);
    Matrix dq(c.q.rows, d), dk(c.k.rows, d), dv(c.v.rows, d);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const Matrix qh = slice_cols(c.q, h * dh, dh);
      const Matrix kh = slice_cols(c.k, h * dh, dh);
      const Matrix vh = slice_cols(c.v, h * dh, dh);
      const Matrix d_oh = slice_cols(d_heads, h * dh, dh);
      const Matrix& probs = c.probs[h];
      add_cols(dv, h * dh, matmul_at(probs, d_oh));
      Matrix d_scores = softmax_rows_backward(probs, matmul_bt(d_oh, vh));
      for (auto& s : d_scores.data) s *= scale;
      add_cols(dq, h * dh, matmul(d_scores, kh));
      add_cols(dk, h * dh, matmul_at(d_scores, qh));
    }
    Matrix d_h1 = dense_backward(c.h1, dq, layer.wq, nullptr);
    add_into(d_h1, dense_backward(c.h1, dk, layer.wk, nullptr));
    add_into(d_h1, dense_backward(c.h1, dv, layer.wv, nullptr));
    dx = std::move(d_mid);
    add_into(dx, layer_norm_backward(c.ln1, d_h1, layer.ln1_gamma, layer.ln1_beta));
  }
  return dx;
}

double PjatModel::pixel_confidence(std::span<const double> cond, double x, double y) const {
  if (cfg_.variant == HeadVariant::imagewise) throw DataError("pixel_confidence: imagewise model has no pixelwise head");
  Matrix feat(1, 2);
  feat(0, 0) = x;
  feat(0, 1) = y;
  double out = 0.0;
  kernels::coord_mlp_forward(head_, cond, feat, std::span<double>(&out, 1));
  return out;
}

void PjatModel::check_scene(const Scene& scene) const {
  if (scene.grid != grid()) {
    throw DataError("scene grid " + std::to_string(scene.grid.width) + "x" + std::to_string(scene.grid.height) +
                    " does not match model grid " + std::to_string(cfg_.grid_w) + "x" + std::to_string(cfg_.grid_h));
  }
  if (scene.people.empty()) throw DataError("scene has no people");
  for (const auto& p : scene.people) {
    if (p.action.size() != static_cast<std::size_t>(cfg_.n_actions)) throw DataError("action vector length does not match model n_actions");
  }
}

PjatForward PjatModel::forward(const Scene& scene) const {
  check_scene(scene);
  PjatForward f;
  const std::size_t n = scene.people.size();
  f.inputs = Matrix(n, cfg_.input_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = input_vector(scene.people[i]);
    std::copy(v.begin(), v.end(), f.inputs.row(i).begin());
  }
  f.embed_pre = dense_forward(f.inputs, fe_w1_, &fe_b1_);
  f.features = dense_forward(relu(f.embed_pre), fe_w2_, &fe_b2_);
  f.enc = encode(f.features);

  const GridDims g = grid();
  f.hja = Heatmap(g);
  switch (cfg_.variant) {
    case HeadVariant::j_ja_only: {
      const auto j = f.enc.j_ja();
      f.conds.emplace_back(j.begin(), j.end());
      kernels::coord_mlp_forward(head_, f.conds[0], coords_, f.hja.values());
      break;
    }
    case HeadVariant::f_ja_only:
    case HeadVariant::f_ja_and_j_ja: {
      const bool with_token = cfg_.variant == HeadVariant::f_ja_and_j_ja;
      for (std::size_t i = 0; i < n; ++i) {
        const auto fi = f.enc.f_ja(i);
        std::vector<double> cond(fi.begin(), fi.end());
        if (with_token) {
          const auto j = f.enc.j_ja();
          cond.insert(cond.end(), j.begin(), j.end());
        }
        Heatmap m(g);
        kernels::coord_mlp_forward(head_, cond, coords_, m.values());
        f.conds.push_back(std::move(cond));
        f.person_maps.push_back(std::move(m));
      }
      auto out = f.hja.values();
      for (const auto& m : f.person_maps) {
        const auto v = m.values();
        for (std::size_t p = 0; p < out.size(); ++p) out[p] += v[p];
      }
      for (auto& v : out) v /= static_cast<double>(n);
      break;
    }
    case HeadVariant::imagewise: {
      const Matrix j = row_matrix(f.enc.j_ja());
      f.img_z1 = dense_forward(j, img_w1_, &img_b1_);
      f.img_z2 = dense_forward(relu(f.img_z1), img_w2_, &img_b2_);
      const Matrix y = sigmoid(dense_forward(relu(f.img_z2), img_w3_, &img_b3_));
      std::copy(y.data.begin(), y.data.end(), f.hja.values().begin());
      break;
    }
  }
  return f;
}

void PjatModel::backward(const PjatForward& f, std::span<const double> d_hja) {
  const std::size_t n = f.inputs.rows;
  const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
  if (d_hja.size() != f.hja.size()) throw DataError("pjat backward: gradient size mismatch");
  Matrix d_out(n + 1, d);
  switch (cfg_.variant) {
    case HeadVariant::j_ja_only:
      kernels::coord_mlp_backward(head_, f.conds[0], coords_, d_hja, d_out.row(n));
      break;
    case HeadVariant::f_ja_only:
    case HeadVariant::f_ja_and_j_ja: {
      std::vector<double> d_map(d_hja.begin(), d_hja.end());
      for (auto& v : d_map) v /= static_cast<double>(n);
      std::vector<double> d_cond(head_.cond_dim);
      for (std::size_t i = 0; i < n; ++i) {
        std::fill(d_cond.begin(), d_cond.end(), 0.0);
        kernels::coord_mlp_backward(head_, f.conds[i], coords_, d_map, d_cond);
        for (std::size_t k = 0; k < d; ++k) d_out(i, k) += d_cond[k];
        if (cfg_.variant == HeadVariant::f_ja_and_j_ja) {
          for (std::size_t k = 0; k < d; ++k) d_out(n, k) += d_cond[d + k];
        }
      }
      break;
    }
    case HeadVariant::imagewise: {
      const auto y = f.hja.values();
      Matrix dz3(1, y.size());
      for (std::size_t p = 0; p < y.size(); ++p) dz3.data[p] = d_hja[p] * y[p] * (1.0 - y[p]);
      const Matrix a2 = relu(f.img_z2);
      const Matrix da2 = dense_backward(a2, dz3, img_w3_, &img_b3_);
      const Matrix a1 = relu(f.img_z1);
      const Matrix da1 = dense_backward(a1, relu_backward(f.img_z2, da2), img_w2_, &img_b2_);
      const Matrix dj = dense_backward(row_matrix(f.enc.j_ja()), relu_backward(f.img_z1, da1), img_w1_, &img_b1_);
      for (std::size_t k = 0; k < d; ++k) d_out(n, k) += dj.data[k];
      break;
    }
  }

  const Matrix d_tokens = encode_backward(f.enc, std::move(d_out));
  for (std::size_t k = 0; k < d; ++k) ja_token_.grad[k] += d_tokens(n, k);
  Matrix d_features(n, d);
  std::copy(d_tokens.data.begin(), d_tokens.data.begin() + static_cast<std::ptrdiff_t>(n * d), d_features.data.begin());
  const Matrix d_act = dense_backward(relu(f.embed_pre), d_features, fe_w2_, &fe_b2_);
  dense_backward(f.inputs, relu_backward(f.embed_pre, d_act), fe_w1_, &fe_b1_);
}

std::vector<double> PjatModel::ja_attention_row(const Scene& scene, std::size_t layer) const {
  if (layer >= layers_.size()) {
    throw UsageError("attention layer " + std::to_string(layer) + " out of range (model has " +
                     std::to_string(layers_.size()) + " layers)");
  }
  check_scene(scene);
  Matrix inputs(scene.people.size(), cfg_.input_dim());
  for (std::size_t i = 0; i < scene.people.size(); ++i) {
    const auto v = input_vector(scene.people[i]);
    std::copy(v.begin(), v.end(), inputs.row(i).begin());
  }
  const Matrix features = dense_forward(relu(dense_forward(inputs, fe_w1_, &fe_b1_)), fe_w2_, &fe_b2_);
  const Encoding enc = encode(features);
  const std::size_t n_tok = features.rows + 1;
  std::vector<double> row(n_tok, 0.0);
  for (std::size_t h = 0; h < static_cast<std::size_t>(cfg_.n_heads); ++h) {
    const auto r = enc.attention(layer, h).row(n_tok - 1);
    for (std::size_t j = 0; j < n_tok; ++j) row[j] += r[j];
  }
  for (auto& v : row) v /= static_cast<double>(cfg_.n_heads);
  return row;
}

std::vector<double> PjatModel::extract_ja_attention(const Scene& scene, std::size_t layer) const {
  auto row = ja_attention_row(scene, layer);
  row.pop_back();
  return row;
}

}  // namespace pjat

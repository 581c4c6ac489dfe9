#include "pjat/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "pjat/checkpoint.hpp"
#include "pjat/error.hpp"

namespace pjat {

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void check_same_dims(const Heatmap& a, const Heatmap& b, const char* what) {
  if (a.dims() != b.dims()) throw DataError(std::string(what) + ": heatmap dimensions differ");
}

}  // namespace

SceneBranch::SceneBranch(GridDims grid, int hidden, std::uint64_t seed)
    : grid_(grid), mlp_("branch.mlp", kCondDim, kFeatDim, static_cast<std::size_t>(hidden)) {
  if (hidden <= 0) throw UsageError("branch hidden width must be positive");
  std::mt19937_64 rng(seed);
  mlp_.init(rng);
}

std::vector<double> SceneBranch::person_cond(const PersonAttributes& p) const {
  return {p.location[0] / grid_.width * 2.0 - 1.0, p.location[1] / grid_.height * 2.0 - 1.0, p.gaze[0], p.gaze[1]};
}

Matrix SceneBranch::pixel_features(const Scene& scene, std::size_t person) const {
  const auto& p = scene.people[person];
  Matrix f(grid_.pixels(), kFeatDim);
  std::size_t row = 0;
  for (int y = 0; y < grid_.height; ++y) {
    for (int x = 0; x < grid_.width; ++x, ++row) {
      const double dx = x - p.location[0], dy = y - p.location[1];
      const double r = std::hypot(dx, dy);
      f(row, 0) = x / static_cast<double>(grid_.width) * 2.0 - 1.0;
      f(row, 1) = y / static_cast<double>(grid_.height) * 2.0 - 1.0;
      f(row, 2) = scene.saliency.at(x, y);
      f(row, 3) = r > 1e-9 ? (dx * p.gaze[0] + dy * p.gaze[1]) / r : 1.0;
      f(row, 4) = r / grid_.width;
    }
  }
  return f;
}

Heatmap SceneBranch::person_map(const Scene& scene, std::size_t person) const {
  if (scene.grid != grid_) throw DataError("scene branch: scene grid does not match model grid");
  if (scene.saliency.dims() != grid_) throw DataError("scene branch: scene has no rendered saliency");
  Heatmap h(grid_);
  kernels::coord_mlp_forward(mlp_, person_cond(scene.people[person]), pixel_features(scene, person), h.values());
  return h;
}

void SceneBranch::person_backward(const Scene& scene, std::size_t person, std::span<const double> d_map) {
  kernels::coord_mlp_backward(mlp_, person_cond(scene.people[person]), pixel_features(scene, person), d_map, {});
}

BranchOutputs render_hat(const Scene& scene, const SceneBranch& branch) {
  BranchOutputs out;
  out.mean = Heatmap(branch.grid());
  auto mean = out.mean.values();
  for (std::size_t i = 0; i < scene.people.size(); ++i) {
    out.per_person.push_back(branch.person_map(scene, i));
    const auto v = out.per_person.back().values();
    for (std::size_t p = 0; p < mean.size(); ++p) mean[p] += v[p];
  }
  for (auto& v : mean) v /= static_cast<double>(scene.people.size());
  return out;
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::weighted: return "weighted";
    case FusionMode::average: return "average";
    case FusionMode::cnn: return "cnn";
  }
  return "?";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  for (auto m : {FusionMode::weighted, FusionMode::average, FusionMode::cnn}) {
    if (to_string(m) == s) return m;
  }
  throw UsageError("unknown fusion mode '" + s + "' (expected weighted, average, cnn)");
}

Fusion::Fusion(FusionMode mode, std::uint64_t seed)
    : mode_(mode), w_ja_("fusion.w_ja", {1}), w_at_("fusion.w_at", {1}) {
  w_ja_.value[0] = 0.5;
  w_at_.value[0] = 0.5;
  if (mode_ == FusionMode::cnn) {
    const std::size_t c = kCnnChannels;
    conv1_w_ = Param("fusion.conv.0.W", {c, 2, 3, 3});
    conv1_b_ = Param("fusion.conv.0.b", {c});
    conv2_w_ = Param("fusion.conv.1.W", {1, c, 3, 3});
    conv2_b_ = Param("fusion.conv.1.b", {1});
    std::mt19937_64 rng(seed);
    init_glorot_uniform(conv1_w_, 2 * 9, c * 9, rng);
    init_glorot_uniform(conv2_w_, c * 9, 9, rng);
  }
}

void Fusion::set_weights(double w_ja, double w_at) {
  w_ja_.value[0] = w_ja;
  w_at_.value[0] = w_at;
}

ParamList Fusion::params() {
  switch (mode_) {
    case FusionMode::weighted: return {&w_ja_, &w_at_};
    case FusionMode::average: return {};
    case FusionMode::cnn: return {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_};
  }
  return {};
}

ParamList Fusion::stored_params() {
  ParamList out{&w_ja_, &w_at_};
  if (mode_ == FusionMode::cnn) {
    for (Param* p : {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_}) out.push_back(p);
  }
  return out;
}

Heatmap Fusion::fuse(const Heatmap& h_ja, const Heatmap& h_at, FusionCache* cache) const {
  check_same_dims(h_ja, h_at, "fuse");
  const GridDims g = h_ja.dims();
  const std::size_t n = g.pixels();
  Heatmap out(g);
  auto hf = out.values();
  const auto a = h_ja.values();
  const auto b = h_at.values();
  std::vector<double> pre(n);

  if (mode_ != FusionMode::cnn) {
    const double wa = mode_ == FusionMode::weighted ? w_ja() : 0.5;
    const double wb = mode_ == FusionMode::weighted ? w_at() : 0.5;
    for (std::size_t p = 0; p < n; ++p) {
      pre[p] = wa * a[p] + wb * b[p];
      hf[p] = std::clamp(pre[p], 0.0, 1.0);
    }
    if (kink_probe::enabled()) {
      const std::uint64_t lo = kink_probe::next_site(), hi = kink_probe::next_site();
      std::uint64_t acc = 0;
      for (std::size_t p = 0; p < n; ++p) acc += kink_probe::mix(lo, p, pre[p] > 0.0) + kink_probe::mix(hi, p, pre[p] < 1.0);
      kink_probe::add(acc);
    }
    if (cache) cache->pre = std::move(pre);
    return out;
  }

  const int w = g.width, h = g.height;
  const std::size_t c_out = kCnnChannels;
  Matrix z1(c_out, n);
  const std::span<const double> in[2] = {a, b};
  for (std::size_t c = 0; c < c_out; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = conv1_b_.value[c];
        for (std::size_t ch = 0; ch < 2; ++ch) {
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int xx = x + kx - 1;
              if (xx < 0 || xx >= w) continue;
              s += conv1_w_.value[((c * 2 + ch) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] *
                   in[ch][static_cast<std::size_t>(yy * w + xx)];
            }
          }
        }
        z1(c, static_cast<std::size_t>(y * w + x)) = s;
      }
    }
  }
  if (kink_probe::enabled()) {
    const std::uint64_t site = kink_probe::next_site();
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < z1.size(); ++i) acc += kink_probe::mix(site, i, z1.data[i] > 0.0);
    kink_probe::add(acc);
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = conv2_b_.value[0];
      for (std::size_t c = 0; c < c_out; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          if (yy < 0 || yy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xx = x + kx - 1;
            if (xx < 0 || xx >= w) continue;
            const double act = std::max(z1(c, static_cast<std::size_t>(yy * w + xx)), 0.0);
            s += conv2_w_.value[(c * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] * act;
          }
        }
      }
      const auto p = static_cast<std::size_t>(y * w + x);
      pre[p] = s;
      hf[p] = sigmoid(s);
    }
  }
  if (cache) {
    cache->pre = std::move(pre);
    cache->conv1_pre = std::move(z1);
  }
  return out;
}

void Fusion::backward(const Heatmap& h_ja, const Heatmap& h_at, const Heatmap& h_f, const FusionCache& cache,
                      std::span<const double> d_hf, std::span<double> d_hja, std::span<double> d_hat) {
  const GridDims g = h_ja.dims();
  const std::size_t n = g.pixels();
  const auto a = h_ja.values();
  const auto b = h_at.values();

  if (mode_ != FusionMode::cnn) {
    const bool weighted = mode_ == FusionMode::weighted;
    const double wa = weighted ? w_ja() : 0.5;
    const double wb = weighted ? w_at() : 0.5;
    double g_wa = 0.0, g_wb = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double pre = cache.pre[p];
      if (pre < 0.0 || pre > 1.0) continue;  // clamped
      const double d = d_hf[p];
      g_wa += d * a[p];
      g_wb += d * b[p];
      if (!d_hja.empty()) d_hja[p] += wa * d;
      if (!d_hat.empty()) d_hat[p] += wb * d;
    }
    if (weighted) {
      w_ja_.grad[0] += g_wa;
      w_at_.grad[0] += g_wb;
    }
    return;
  }

  const int w = g.width, h = g.height;
  const std::size_t c_out = kCnnChannels;
  const auto hf = h_f.values();
  std::vector<double> dz2(n);
  for (std::size_t p = 0; p < n; ++p) dz2[p] = d_hf[p] * hf[p] * (1.0 - hf[p]);
  const Matrix& z1 = cache.conv1_pre;
  Matrix dz1(c_out, n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double d = dz2[static_cast<std::size_t>(y * w + x)];
      conv2_b_.grad[0] += d;
      for (std::size_t c = 0; c < c_out; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          if (yy < 0 || yy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xx = x + kx - 1;
            if (xx < 0 || xx >= w) continue;
            const auto q = static_cast<std::size_t>(yy * w + xx);
            const std::size_t wi = (c * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx);
            const double act = std::max(z1(c, q), 0.0);
            conv2_w_.grad[wi] += d * act;
            if (z1(c, q) > 0.0) dz1(c, q) += conv2_w_.value[wi] * d;
          }
        }
      }
    }
  }
  const std::span<const double> in[2] = {a, b};
  const std::span<double> d_in[2] = {d_hja, d_hat};
  for (std::size_t c = 0; c < c_out; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double d = dz1(c, static_cast<std::size_t>(y * w + x));
        if (d == 0.0) continue;
        conv1_b_.grad[c] += d;
        for (std::size_t ch = 0; ch < 2; ++ch) {
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int xx = x + kx - 1;
              if (xx < 0 || xx >= w) continue;
              const auto q = static_cast<std::size_t>(yy * w + xx);
              const std::size_t wi = ((c * 2 + ch) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx);
              conv1_w_.grad[wi] += d * in[ch][q];
              if (!d_in[ch].empty()) d_in[ch][q] += conv1_w_.value[wi] * d;
            }
          }
        }
      }
    }
  }
}

nlohmann::json to_json(const JointConfig& c) {
  return {{"pjat", to_json(c.pjat)}, {"branch_hidden", c.branch_hidden}, {"fusion", to_string(c.fusion)}, {"gt_sigma", c.gt_sigma}};
}

JointConfig joint_config_from_json(const nlohmann::json& j) {
  JointConfig c;
  c.pjat = pjat_config_from_json(j.at("pjat"));
  c.branch_hidden = j.at("branch_hidden").get<int>();
  c.fusion = fusion_mode_from_string(j.at("fusion").get<std::string>());
  c.gt_sigma = j.at("gt_sigma").get<double>();
  return c;
}

JointModel::JointModel(const JointConfig& cfg, std::uint64_t seed)
    : config(cfg),
      pjat(cfg.pjat, sub_seed(seed, 0)),
      branch(cfg.pjat.grid(), cfg.branch_hidden, sub_seed(seed, 1)),
      fusion(cfg.fusion, sub_seed(seed, 2)) {}

ParamList JointModel::all_params() {
  ParamList out = pjat.params();
  for (auto* p : branch.params()) out.push_back(p);
  for (auto* p : fusion.params()) out.push_back(p);
  return out;
}

ParamList JointModel::stored_params() {
  ParamList out = pjat.params();
  for (auto* p : branch.params()) out.push_back(p);
  for (auto* p : fusion.stored_params()) out.push_back(p);
  return out;
}

JointOutputs forward(const JointModel& model, const Scene& scene) {
  JointOutputs out;
  out.pjat = model.pjat.forward(scene);
  out.branch = render_hat(scene, model.branch);
  out.hf = model.fusion.fuse(out.pjat.hja, out.branch.mean, &out.fusion_cache);
  return out;
}

GroundTruth ground_truth(const Scene& scene, double sigma) {
  GroundTruth gt;
  gt.g_ja = scene.joint_ap ? render_gaussian_gt(*scene.joint_ap, sigma, scene.grid) : Heatmap(scene.grid);
  for (const auto& ap : scene.private_aps) gt.g_at.push_back(render_gaussian_gt(ap, sigma, scene.grid));
  return gt;
}

Losses compute_losses(const JointOutputs& out, const GroundTruth& gt) {
  Losses l;
  l.ja = mse_sum(out.hja(), gt.g_ja);
  for (std::size_t i = 0; i < gt.g_at.size(); ++i) l.at += mse_sum(out.branch.per_person[i], gt.g_at[i]);
  l.at /= static_cast<double>(gt.g_at.size());
  l.f = mse_sum(out.hf, gt.g_ja);
  l.all = l.ja + l.at + l.f;
  return l;
}

Losses total_loss(const JointModel& model, const Scene& scene) {
  const auto out = forward(model, scene);
  return compute_losses(out, ground_truth(scene, model.config.sigma()));
}

Losses total_loss(JointModel& model, const Scene& scene, LossTarget target, double scale) {
  const auto out = forward(model, scene);
  const auto gt = ground_truth(scene, model.config.sigma());
  const Losses losses = compute_losses(out, gt);

  const std::size_t n_pix = model.grid().pixels();
  const std::size_t n_people = scene.people.size();
  const bool want_ja = target == LossTarget::ja || target == LossTarget::all;
  const bool want_at = target == LossTarget::at || target == LossTarget::all;
  const bool want_f = target == LossTarget::f || target == LossTarget::all;
  const bool through = target == LossTarget::all;  // L_F reaches both branches

  std::vector<double> d_hja(n_pix, 0.0), d_hat(n_pix, 0.0);
  if (want_ja) mse_sum_backward(out.hja().values(), gt.g_ja.values(), scale, d_hja);
  if (want_f) {
    std::vector<double> d_hf(n_pix, 0.0);
    mse_sum_backward(out.hf.values(), gt.g_ja.values(), scale, d_hf);
    model.fusion.backward(out.hja(), out.hat(), out.hf, out.fusion_cache, d_hf, through ? std::span<double>(d_hja) : std::span<double>(),
                          through ? std::span<double>(d_hat) : std::span<double>());
  }
  if (want_ja || through) model.pjat.backward(out.pjat, d_hja);
  if (want_at || through) {
    std::vector<double> d_map(n_pix);
    const double inv_n = 1.0 / static_cast<double>(n_people);
    for (std::size_t i = 0; i < n_people; ++i) {
      for (std::size_t p = 0; p < n_pix; ++p) d_map[p] = d_hat[p] * inv_n;
      if (want_at) mse_sum_backward(out.branch.per_person[i].values(), gt.g_at[i].values(), scale * inv_n, d_map);
      model.branch.person_backward(scene, i, d_map);
    }
  }
  return losses;
}

void save_model(const JointModel& model, const std::filesystem::path& path, const nlohmann::json& extra_meta) {
  nlohmann::json meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  meta["model"] = to_json(model.config);
  save_params(path, meta, const_cast<JointModel&>(model).stored_params());
}

JointModel load_model(const std::filesystem::path& path) {
  const ParamFile file = load_param_file(path);
  JointConfig cfg;
  try {
    cfg = joint_config_from_json(file.meta.at("model"));
    validate(cfg.pjat);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("invalid model config: ") + e.what());
  } catch (const UsageError& e) {
    throw CheckpointError(std::string("invalid model config: ") + e.what());
  }
  JointModel model(cfg, 0);
  assign_params(file, model.stored_params());
  return model;
}

}  // namespace pjat

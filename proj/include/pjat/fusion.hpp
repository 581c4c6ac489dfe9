#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pjat/autodiff.hpp"
#include "pjat/heatmap.hpp"
#include "pjat/kernels.hpp"
#include "pjat/pjat_model.hpp"
#include "pjat/scene.hpp"

namespace pjat {

/// Per-person scene branch: a coordinate MLP over
///   cond  = (l_x, l_y, g_x, g_y)                (person, normalized)
///   pixel = (x, y, saliency, cos_to_gaze, dist)  (per pixel)
/// where cos_to_gaze is the cosine between the gaze and the person->pixel
/// direction and dist is |pixel - person| / grid width.
class SceneBranch {
 public:
  static constexpr std::size_t kCondDim = 4;
  static constexpr std::size_t kFeatDim = 5;

  SceneBranch() = default;
  SceneBranch(GridDims grid, int hidden, std::uint64_t seed);

  GridDims grid() const { return grid_; }
  int hidden() const { return static_cast<int>(mlp_.hidden); }
  ParamList params() { return mlp_.params(); }

  std::vector<double> person_cond(const PersonAttributes& p) const;
  Matrix pixel_features(const Scene& scene, std::size_t person) const;

  Heatmap person_map(const Scene& scene, std::size_t person) const;
  void person_backward(const Scene& scene, std::size_t person, std::span<const double> d_map);

 private:
  GridDims grid_;
  CoordMlp mlp_;
};

struct BranchOutputs {
  std::vector<Heatmap> per_person;  // H_AT^i
  Heatmap mean;                     // H_AT
};

BranchOutputs render_hat(const Scene& scene, const SceneBranch& branch);

enum class FusionMode { weighted, average, cnn };

std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& s);

struct FusionCache {
  std::vector<double> pre;  // weighted/average: pre-clamp values; cnn: final logits
  Matrix conv1_pre;         // cnn: channels x pixels
};

class Fusion {
 public:
  static constexpr int kCnnChannels = 4;

  Fusion() = default;
  Fusion(FusionMode mode, std::uint64_t seed);

  FusionMode mode() const { return mode_; }
  double w_ja() const { return w_ja_.value[0]; }
  double w_at() const { return w_at_.value[0]; }
  void set_weights(double w_ja, double w_at);

  /// Trainable parameters for the current mode (none for average).
  ParamList params();
  /// Everything that is persisted (w_ja/w_at always, conv weights for cnn).
  ParamList stored_params();

  Heatmap fuse(const Heatmap& h_ja, const Heatmap& h_at, FusionCache* cache = nullptr) const;
  /// Accumulates parameter gradients; adds dL/dH_JA and dL/dH_AT into the outputs when non-empty.
  void backward(const Heatmap& h_ja, const Heatmap& h_at, const Heatmap& h_f, const FusionCache& cache,
                std::span<const double> d_hf, std::span<double> d_hja, std::span<double> d_hat);

 private:
  FusionMode mode_ = FusionMode::weighted;
  Param w_ja_, w_at_;
  Param conv1_w_, conv1_b_, conv2_w_, conv2_b_;
};

struct JointConfig {
  PjatConfig pjat;
  int branch_hidden = 16;
  FusionMode fusion = FusionMode::weighted;
  double gt_sigma = 0.0;  // 0 selects default_sigma(grid)

  double sigma() const { return gt_sigma > 0.0 ? gt_sigma : default_sigma(pjat.grid()); }
};

nlohmann::json to_json(const JointConfig& c);
JointConfig joint_config_from_json(const nlohmann::json& j);

/// PJAT branch, scene branch and fusion module.
struct JointModel {
  JointConfig config;
  PjatModel pjat;
  SceneBranch branch;
  Fusion fusion;

  JointModel() = default;
  JointModel(const JointConfig& cfg, std::uint64_t seed);

  GridDims grid() const { return config.pjat.grid(); }
  ParamList pjat_params() { return pjat.params(); }
  ParamList branch_params() { return branch.params(); }
  ParamList fusion_params() { return fusion.params(); }
  ParamList all_params();
  ParamList stored_params();
};

struct JointOutputs {
  PjatForward pjat;
  BranchOutputs branch;
  FusionCache fusion_cache;
  Heatmap hf;

  const Heatmap& hja() const { return pjat.hja; }
  const Heatmap& hat() const { return branch.mean; }
};

JointOutputs forward(const JointModel& model, const Scene& scene);

struct Losses {
  double all = 0.0, ja = 0.0, at = 0.0, f = 0.0;
};

/// Which objective drives gradients.
///   ja:  L_JA into PJAT only          at:  L_AT into the scene branch only
///   f:   L_F into fusion params only  all: L_ALL into everything
enum class LossTarget { ja, at, f, all };

struct GroundTruth {
  Heatmap g_ja;               // all zero when the scene has no joint AP
  std::vector<Heatmap> g_at;  // one per person, centered at private_aps
};

GroundTruth ground_truth(const Scene& scene, double sigma);

Losses compute_losses(const JointOutputs& out, const GroundTruth& gt);

/// Forward only.
Losses total_loss(const JointModel& model, const Scene& scene);
/// Forward plus backward of the selected objective, gradients scaled by `scale`.
Losses total_loss(JointModel& model, const Scene& scene, LossTarget target, double scale = 1.0);

/// Checkpoint (config in meta, all stored params).
void save_model(const JointModel& model, const std::filesystem::path& path, const nlohmann::json& extra_meta = {});
/// Throws CheckpointError; never returns a partially restored model.
JointModel load_model(const std::filesystem::path& path);

}  // namespace pjat

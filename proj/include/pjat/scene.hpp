#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pjat/heatmap.hpp"

namespace pjat {

struct PersonAttributes {
  Vec2 location{};             // grid pixel coordinates
  Vec2 gaze{};                 // unit vector
  std::vector<double> action;  // probability vector over N_a classes
  bool is_attender = false;    // ground truth only; never a model input

  friend bool operator==(const PersonAttributes&, const PersonAttributes&) = default;
};

struct SaliencyBump {
  double x = 0.0, y = 0.0, sigma = 1.0, amp = 1.0;
  friend bool operator==(const SaliencyBump&, const SaliencyBump&) = default;
};

struct Scene {
  GridDims grid;
  std::vector<PersonAttributes> people;
  std::optional<Vec2> joint_ap;
  std::vector<Vec2> private_aps;
  std::vector<SaliencyBump> saliency_points;
  Heatmap saliency;  // rendered from saliency_points

  std::size_t n_people() const { return people.size(); }
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct SceneGenConfig {
  int grid_w = 64;
  int grid_h = 64;
  IntRange n_people{6, 10};
  double distractor_fraction = 0.25;
  double gaze_noise_std_rad = 0.1;
  double no_ap_scene_fraction = 0.1;
  int n_actions = 4;
  int saliency_clutter_count = 3;
  std::uint64_t seed = 0;
};

/// The action class attenders concentrate on.
inline constexpr int kEngagedAction = 0;
/// People are never generated closer than this to their attention point.
inline constexpr double kMinPersonToApDistance = 3.0;

/// Unit vector from `from` toward `to`, rotated by `noise_angle` radians.
Vec2 gaze_toward(Vec2 from, Vec2 to, double noise_angle = 0.0);

/// Throws UsageError naming the first invalid field.
void validate(const SceneGenConfig& cfg);

/// Sum of bumps normalized to a maximum of 1 (all-zero if there are none).
Heatmap render_saliency(const std::vector<SaliencyBump>& points, GridDims dims);

/// Draws one scene; a pure function of (cfg, rng state).
Scene generate_scene(const SceneGenConfig& cfg, std::mt19937_64& rng);

/// Convenience: `count` scenes from a single engine seeded with cfg.seed.
std::vector<Scene> generate_scenes(const SceneGenConfig& cfg, std::size_t count);

/// Throws DataError naming the violated field.
void validate(const Scene& scene);

std::string scene_to_json_line(const Scene& scene);
/// `line_no` is only used in error messages.
Scene scene_from_json_line(const std::string& line, std::size_t line_no = 1);

void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& path);
std::vector<Scene> read_dataset(const std::filesystem::path& path);

}  // namespace pjat

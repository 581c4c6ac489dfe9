#pragma once

#include <string>
#include <vector>

#include "pjat/fusion.hpp"
#include "pjat/metrics.hpp"
#include "pjat/scene.hpp"

namespace pjat {

/// Which heatmap is read out as the final estimate.
enum class OutputBranch { ja, at, fused };

std::string to_string(OutputBranch b);

struct ScenePeaks {
  PeakPoint ja, at, fused;
  const PeakPoint& get(OutputBranch b) const;
};

/// Argmax of H_JA, H_AT and H_F for every scene (parallel over scenes).
std::vector<ScenePeaks> predict_peaks(const JointModel& model, const std::vector<Scene>& scenes);

/// Distances on scenes with a joint AP; presence metrics when both splits hold both classes.
MetricsReport make_report(const std::string& label, const std::vector<Scene>& val, const std::vector<PeakPoint>& val_peaks,
                          const std::vector<Scene>& test, const std::vector<PeakPoint>& test_peaks,
                          const std::vector<double>& thresholds);

/// Distance-only report for point estimators without a confidence score.
MetricsReport make_point_report(const std::string& label, const std::vector<Scene>& test, const std::vector<Vec2>& points,
                                const std::vector<double>& thresholds);

MetricsReport evaluate(const JointModel& model, const std::vector<Scene>& val, const std::vector<Scene>& test,
                       OutputBranch branch, const std::vector<double>& thresholds, const std::string& label);

/// Least-squares intersection of every person's gaze line (attenders and
/// distractors alike), clamped into the grid. Falls back to the point 1/4 of
/// the grid width along the gaze when the lines are (near) parallel.
Vec2 gaze_ray_intersection(const Scene& scene);

}  // namespace pjat

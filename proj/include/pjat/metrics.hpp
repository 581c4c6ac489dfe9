#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pjat/heatmap.hpp"

namespace pjat {

struct DistanceMetrics {
  double dist_x = 0.0;
  double dist_y = 0.0;
  double dist = 0.0;
  std::vector<double> per_sample;  // Euclidean distance of each pair
};

/// Mean |dx|, |dy| and Euclidean distance. Throws DataError on empty or unequal input.
DistanceMetrics distance_metrics(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt);

/// Fraction of distances strictly below each threshold.
std::map<double, double> detection_rate(const std::vector<double>& dists, const std::vector<double>& thresholds);

struct BinaryCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy() const;
  /// 0 when there are no true positives.
  double f_score() const;
};

/// Scores strictly greater than `threshold` are predicted positive.
BinaryCounts classify(const std::vector<double>& scores, const std::vector<bool>& labels, double threshold);

/// Threshold maximizing F-score over the sorted unique scores plus -inf/+inf;
/// ties go to the lowest threshold. Throws DataError for single-class labels.
double select_threshold(const std::vector<double>& scores, const std::vector<bool>& labels);

/// Rank-based (Mann-Whitney) AUC; tied scores count half. Throws DataError for single-class labels.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels);

struct PresenceResult {
  double accuracy = 0.0;
  double f_score = 0.0;
  double auc = 0.0;
  double threshold = 0.0;
};

PresenceResult presence_classification(const std::vector<double>& val_scores, const std::vector<bool>& val_labels,
                                       const std::vector<double>& test_scores, const std::vector<bool>& test_labels);

struct MetricsReport {
  std::string label;
  std::size_t n_scenes = 0;
  std::size_t n_with_ap = 0;
  double dist_x = 0.0, dist_y = 0.0, dist = 0.0;
  std::map<double, double> detection_rate;
  std::optional<PresenceResult> presence;  // absent when a split is single-class
};

/// Grid-proportional detection thresholds: {3, 6, 9} px at width 64.
std::vector<double> default_thresholds(GridDims grid);

nlohmann::json to_json(const MetricsReport& r);
/// Aligned text table: Method, Dist(x), Dist(y), Dist, Thr=..., Accuracy, F-score, AUC.
std::string format_table(const std::vector<MetricsReport>& rows);

}  // namespace pjat

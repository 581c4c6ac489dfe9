#include "pjat/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "pjat/error.hpp"

namespace pjat {

std::string to_string(OutputBranch b) {
  switch (b) {
    case OutputBranch::ja: return "H_JA";
    case OutputBranch::at: return "H_AT";
    case OutputBranch::fused: return "H_F";
  }
  return "?";
}

const PeakPoint& ScenePeaks::get(OutputBranch b) const {
  switch (b) {
    case OutputBranch::ja: return ja;
    case OutputBranch::at: return at;
    case OutputBranch::fused: return fused;
  }
  return fused;
}

std::vector<ScenePeaks> predict_peaks(const JointModel& model, const std::vector<Scene>& scenes) {
  std::vector<ScenePeaks> out(scenes.size());
  const auto n = static_cast<std::ptrdiff_t>(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto o = forward(model, scenes[static_cast<std::size_t>(i)]);
    out[static_cast<std::size_t>(i)] = {argmax_point(o.hja()), argmax_point(o.hat()), argmax_point(o.hf)};
  }
  return out;
}

namespace {

void fill_distances(MetricsReport& r, const std::vector<Scene>& test, const std::vector<Vec2>& points,
                    const std::vector<double>& thresholds) {
  std::vector<Vec2> pred, gt;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!test[i].joint_ap) continue;
    pred.push_back(points[i]);
    gt.push_back(*test[i].joint_ap);
  }
  r.n_scenes = test.size();
  r.n_with_ap = gt.size();
  const auto d = distance_metrics(pred, gt);
  r.dist_x = d.dist_x;
  r.dist_y = d.dist_y;
  r.dist = d.dist;
  r.detection_rate = detection_rate(d.per_sample, thresholds);
}

bool two_classes(const std::vector<bool>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), true);
  return pos > 0 && pos < static_cast<std::ptrdiff_t>(labels.size());
}

}  // namespace

MetricsReport make_report(const std::string& label, const std::vector<Scene>& val, const std::vector<PeakPoint>& val_peaks,
                          const std::vector<Scene>& test, const std::vector<PeakPoint>& test_peaks,
                          const std::vector<double>& thresholds) {
  if (test.empty()) throw DataError("evaluation: test set is empty");
  MetricsReport r;
  r.label = label;
  std::vector<Vec2> points;
  for (const auto& p : test_peaks) points.push_back(p.point);
  fill_distances(r, test, points, thresholds);

  std::vector<double> vs, ts;
  std::vector<bool> vl, tl;
  for (std::size_t i = 0; i < val.size(); ++i) {
    vs.push_back(val_peaks[i].value);
    vl.push_back(val[i].joint_ap.has_value());
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    ts.push_back(test_peaks[i].value);
    tl.push_back(test[i].joint_ap.has_value());
  }
  if (two_classes(vl) && two_classes(tl)) r.presence = presence_classification(vs, vl, ts, tl);
  return r;
}

MetricsReport make_point_report(const std::string& label, const std::vector<Scene>& test, const std::vector<Vec2>& points,
                                const std::vector<double>& thresholds) {
  if (test.empty()) throw DataError("evaluation: test set is empty");
  MetricsReport r;
  r.label = label;
  fill_distances(r, test, points, thresholds);
  return r;
}

MetricsReport evaluate(const JointModel& model, const std::vector<Scene>& val, const std::vector<Scene>& test,
                       OutputBranch branch, const std::vector<double>& thresholds, const std::string& label) {
  if (test.empty()) throw DataError("evaluation: test set is empty");
  const auto vp = predict_peaks(model, val);
  const auto tp = predict_peaks(model, test);
  std::vector<PeakPoint> v, t;
  for (const auto& p : vp) v.push_back(p.get(branch));
  for (const auto& p : tp) t.push_back(p.get(branch));
  return make_report(label, val, v, test, t, thresholds);
}

Vec2 gaze_ray_intersection(const Scene& scene) {
  // Minimize sum_i |(I - g g^T)(p - l_i)|^2  =>  A p = b.
  double a00 = 0.0, a01 = 0.0, a11 = 0.0, b0 = 0.0, b1 = 0.0;
  for (const auto& person : scene.people) {
    const double gx = person.gaze[0], gy = person.gaze[1];
    const double m00 = 1.0 - gx * gx, m01 = -gx * gy, m11 = 1.0 - gy * gy;
    a00 += m00;
    a01 += m01;
    a11 += m11;
    b0 += m00 * person.location[0] + m01 * person.location[1];
    b1 += m01 * person.location[0] + m11 * person.location[1];
  }
  const double det = a00 * a11 - a01 * a01;
  Vec2 p{};
  if (std::abs(det) > 1e-9 * std::max(1.0, a00 * a11)) {
    p = {(a11 * b0 - a01 * b1) / det, (a00 * b1 - a01 * b0) / det};
  } else {
    const auto& first = scene.people.front();
    const double step = scene.grid.width / 4.0;
    p = {first.location[0] + step * first.gaze[0], first.location[1] + step * first.gaze[1]};
  }
  p[0] = std::clamp(p[0], 0.0, scene.grid.width - 1.0);
  p[1] = std::clamp(p[1], 0.0, scene.grid.height - 1.0);
  return p;
}

}  // namespace pjat

#include "pjat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "pjat/error.hpp"

namespace pjat {

DistanceMetrics distance_metrics(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt) {
  if (pred.empty()) throw DataError("distance_metrics: no samples with a ground-truth attention point");
  if (pred.size() != gt.size()) throw DataError("distance_metrics: prediction and ground-truth counts differ");
  DistanceMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = std::abs(pred[i][0] - gt[i][0]);
    const double dy = std::abs(pred[i][1] - gt[i][1]);
    const double d = std::sqrt(dx * dx + dy * dy);
    m.dist_x += dx;
    m.dist_y += dy;
    m.dist += d;
    m.per_sample.push_back(d);
  }
  const double n = static_cast<double>(pred.size());
  m.dist_x /= n;
  m.dist_y /= n;
  m.dist /= n;
  return m;
}

std::map<double, double> detection_rate(const std::vector<double>& dists, const std::vector<double>& thresholds) {
  std::map<double, double> out;
  for (double t : thresholds) {
    if (!(t > 0.0)) throw UsageError("detection thresholds must be positive");
    const auto hits = std::count_if(dists.begin(), dists.end(), [t](double d) { return d < t; });
    out[t] = dists.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(dists.size());
  }
  return out;
}

double BinaryCounts::accuracy() const {
  const std::size_t n = tp + fp + tn + fn;
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

double BinaryCounts::f_score() const {
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

BinaryCounts classify(const std::vector<double>& scores, const std::vector<bool>& labels, double threshold) {
  if (scores.size() != labels.size()) throw DataError("classify: score and label counts differ");
  BinaryCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pos = scores[i] > threshold;
    if (pos && labels[i]) ++c.tp;
    else if (pos) ++c.fp;
    else if (labels[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {

void require_two_classes(const std::vector<bool>& labels, const char* what) {
  const auto pos = std::count(labels.begin(), labels.end(), true);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) {
    throw DataError(std::string(what) + ": labels contain a single class");
  }
}

}  // namespace

double select_threshold(const std::vector<double>& scores, const std::vector<bool>& labels) {
  require_two_classes(labels, "select_threshold");
  std::vector<double> cands = scores;
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  cands.insert(cands.begin(), -std::numeric_limits<double>::infinity());
  cands.push_back(std::numeric_limits<double>::infinity());

  // Sweep ascending: a candidate t predicts positive for every score > t.
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  const std::size_t total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));

  std::size_t tp = total_pos, fp = scores.size() - total_pos, k = 0;
  double best_f = -1.0, best_t = cands.front();
  for (double t : cands) {
    while (k < idx.size() && scores[idx[k]] <= t) {
      if (labels[idx[k]]) --tp;
      else --fp;
      ++k;
    }
    const std::size_t fn = total_pos - tp;
    const double f = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    if (f > best_f) {
      best_f = f;
      best_t = t;
    }
  }
  return best_t;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw DataError("roc_auc: score and label counts differ");
  require_two_classes(labels, "roc_auc");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average 1-based ranks over tie groups.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[idx[k]]) pos_rank_sum += rank;
    }
    i = j + 1;
  }
  const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), true));
  const double n_neg = static_cast<double>(labels.size()) - n_pos;
  return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

PresenceResult presence_classification(const std::vector<double>& val_scores, const std::vector<bool>& val_labels,
                                       const std::vector<double>& test_scores, const std::vector<bool>& test_labels) {
  PresenceResult r;
  r.threshold = select_threshold(val_scores, val_labels);
  const auto c = classify(test_scores, test_labels, r.threshold);
  r.accuracy = c.accuracy();
  r.f_score = c.f_score();
  r.auc = roc_auc(test_scores, test_labels);
  return r;
}

std::vector<double> default_thresholds(GridDims grid) {
  const double s = static_cast<double>(grid.width) / 64.0;
  return {3.0 * s, 6.0 * s, 9.0 * s};
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json rates = nlohmann::json::object();
  for (const auto& [t, v] : r.detection_rate) {
    char key[32];
    std::snprintf(key, sizeof key, "%g", t);
    rates[key] = v;
  }
  nlohmann::json j = {{"label", r.label},   {"n_scenes", r.n_scenes}, {"n_with_ap", r.n_with_ap},
                      {"dist_x", r.dist_x}, {"dist_y", r.dist_y},     {"dist", r.dist},
                      {"detection_rate", rates}};
  if (r.presence) {
    j["accuracy"] = r.presence->accuracy;
    j["f_score"] = r.presence->f_score;
    j["auc"] = r.presence->auc;
    j["chosen_presence_threshold"] = r.presence->threshold;
  } else {
    j["accuracy"] = nullptr;
    j["f_score"] = nullptr;
    j["auc"] = nullptr;
    j["chosen_presence_threshold"] = nullptr;
  }
  return j;
}

std::string format_table(const std::vector<MetricsReport>& rows) {
  std::vector<double> thresholds;
  for (const auto& r : rows) {
    for (const auto& [t, v] : r.detection_rate) {
      if (std::find(thresholds.begin(), thresholds.end(), t) == thresholds.end()) thresholds.push_back(t);
    }
  }
  std::sort(thresholds.begin(), thresholds.end());

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Method", "Dist(x)", "Dist(y)", "Dist"};
  char buf[64];
  for (double t : thresholds) {
    std::snprintf(buf, sizeof buf, "Thr=%g", t);
    header.emplace_back(buf);
  }
  for (const char* h : {"Accuracy", "F-score", "AUC"}) header.emplace_back(h);
  cells.push_back(header);

  const auto num = [&buf](double v, const char* fmt = "%.2f") {
    std::snprintf(buf, sizeof buf, fmt, v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    std::vector<std::string> line{r.label, num(r.dist_x), num(r.dist_y), num(r.dist)};
    for (double t : thresholds) {
      auto it = r.detection_rate.find(t);
      line.push_back(it == r.detection_rate.end() ? "-" : num(100.0 * it->second, "%.1f"));
    }
    if (r.presence) {
      line.push_back(num(100.0 * r.presence->accuracy, "%.1f"));
      line.push_back(num(100.0 * r.presence->f_score, "%.1f"));
      line.push_back(num(100.0 * r.presence->auc, "%.1f"));
    } else {
      line.insert(line.end(), {"-", "-", "-"});
    }
    cells.push_back(std::move(line));
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const auto& s = cells[r][c];
      if (c == 0) os << s << std::string(width[c] - s.size(), ' ');
      else os << "  " << std::string(width[c] - s.size(), ' ') << s;
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace pjat

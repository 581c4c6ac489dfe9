#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "pjat/error.hpp"
#include "pjat/evaluate.hpp"
#include "pjat/metrics.hpp"
#include "support/oracles.hpp"

using namespace pjat;

TEST_CASE("distance examples") {
  const auto m = distance_metrics({{10, 10}}, {{13, 14}});
  CHECK(m.dist_x == 3.0);
  CHECK(m.dist_y == 4.0);
  CHECK(m.dist == 5.0);

  const auto same = distance_metrics({{1, 2}, {3, 4}}, {{1, 2}, {3, 4}});
  CHECK(same.dist == 0.0);
  CHECK(same.dist_x == 0.0);

  const auto two = distance_metrics({{0, 0}, {0, 0}}, {{0, 0}, {6, 8}});
  CHECK(two.dist == 5.0);

  CHECK_THROWS_AS(distance_metrics({}, {}), DataError);
  CHECK_THROWS_AS(distance_metrics({{0, 0}}, {}), DataError);
}

TEST_CASE("per-sample distances satisfy d^2 = dx^2 + dy^2") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 64.0);
  std::vector<Vec2> a, b;
  for (int i = 0; i < 200; ++i) {
    a.push_back({u(rng), u(rng)});
    b.push_back({u(rng), u(rng)});
  }
  const auto m = distance_metrics(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dx = a[i][0] - b[i][0], dy = a[i][1] - b[i][1];
    CHECK(std::abs(m.per_sample[i] * m.per_sample[i] - (dx * dx + dy * dy)) < 1e-9);
  }
}

TEST_CASE("detection rate examples") {
  CHECK(detection_rate({5, 25, 40}, {30}).at(30) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(detection_rate({5, 25, 40}, {100}).at(100) == 1.0);
  CHECK(detection_rate({3.0, 2.0}, {3.0}).at(3.0) == 0.5);
  CHECK_THROWS_AS(detection_rate({1.0}, {0.0}), UsageError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  std::vector<double> d(100);
  for (auto& v : d) v = u(rng);
  std::vector<double> thr;
  for (int t = 1; t <= 25; ++t) thr.push_back(t);
  const auto rates = detection_rate(d, thr);
  double prev = 0.0;
  for (const auto& [t, r] : rates) {
    CHECK(r >= prev);
    CHECK(r <= 1.0);
    prev = r;
  }
}

TEST_CASE("binary counts") {
  const auto c = classify({0.1, 0.5, 0.9, 0.5}, {false, true, true, false}, 0.5);
  CHECK(c.tp == 1);
  CHECK(c.fp == 0);
  CHECK(c.fn == 1);
  CHECK(c.tn == 2);
  CHECK(c.accuracy() == 0.75);
  CHECK(c.f_score() == doctest::Approx(2.0 / 3.0));
  CHECK(classify({0.1}, {true}, 0.5).f_score() == 0.0);
}

TEST_CASE("presence classification examples") {
  const std::vector<double> val{0.1, 0.2, 0.8, 0.9};
  const std::vector<bool> lab{false, false, true, true};
  const auto r = presence_classification(val, lab, val, lab);
  CHECK(r.auc == 1.0);
  CHECK(r.f_score == 1.0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.threshold == 0.2);

  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {true, false, true, false}) == 0.5);
  CHECK_THROWS_AS(select_threshold({0.1, 0.2}, {true, true}), DataError);
  CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {false, false}), DataError);
  // all-positive labels: predicting everything positive is optimal
  CHECK(select_threshold({0.3, 0.4, 0.1}, {true, true, false}) == 0.1);
  CHECK(select_threshold({0.9, 0.2}, {false, true}) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("threshold selection matches a brute-force sweep") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(50);
    std::vector<bool> l(50);
    // coarse scores force plenty of ties
    std::uniform_int_distribution<int> level(0, trial % 2 == 0 ? 12 : 1000);
    std::bernoulli_distribution coin(0.4);
    for (std::size_t i = 0; i < 50; ++i) {
      l[i] = coin(rng);
      s[i] = level(rng) / 12.0 + (l[i] ? 0.1 : 0.0);
    }
    l[0] = true;
    l[1] = false;
    CHECK(select_threshold(s, l) == oracle::best_threshold(s, l));
    CHECK(std::abs(roc_auc(s, l) - oracle::pairwise_auc(s, l)) < 1e-12);
  }
}

TEST_CASE("AUC is invariant under strictly monotone transforms") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> s(80), t(80);
  std::vector<bool> l(80);
  for (std::size_t i = 0; i < s.size(); ++i) {
    l[i] = i % 3 == 0;
    s[i] = std::round(n(rng) * 4.0) / 4.0 + (l[i] ? 0.5 : 0.0);
    t[i] = std::exp(3.0 * s[i]) - 7.0;
  }
  CHECK(roc_auc(s, l) == roc_auc(t, l));
}

TEST_CASE("default thresholds scale with the grid") {
  CHECK(default_thresholds({64, 64}) == std::vector<double>{3, 6, 9});
  CHECK(default_thresholds({128, 64}) == std::vector<double>{6, 12, 18});
}

TEST_CASE("report serialization") {
  MetricsReport r;
  r.label = "H_F";
  r.n_scenes = 10;
  r.n_with_ap = 9;
  r.dist = 4.25;
  r.detection_rate = {{3.0, 0.5}, {6.0, 0.75}};
  auto j = to_json(r);
  CHECK(j["label"] == "H_F");
  CHECK(j["chosen_presence_threshold"].is_null());
  r.presence = PresenceResult{0.9, 0.8, 0.95, 0.4};
  j = to_json(r);
  CHECK(j["chosen_presence_threshold"] == 0.4);
  CHECK(j["auc"] == 0.95);
  const auto table = format_table({r});
  CHECK(table.find("Dist(x)") != std::string::npos);
  CHECK(table.find("Thr=3") != std::string::npos);
  CHECK(table.find("H_F") != std::string::npos);
}

TEST_CASE("gaze-ray intersection baseline") {
  Scene s;
  s.grid = {64, 64};
  const Vec2 target{30.0, 20.0};
  for (Vec2 l : {Vec2{5, 5}, Vec2{60, 10}, Vec2{40, 60}}) {
    s.people.push_back({l, gaze_toward(l, target), {1, 0, 0, 0}, true});
  }
  const auto p = gaze_ray_intersection(s);
  CHECK(std::abs(p[0] - 30.0) < 1e-9);
  CHECK(std::abs(p[1] - 20.0) < 1e-9);

  Scene parallel = s;
  parallel.people.resize(1);
  parallel.people[0] = {{10, 10}, {1, 0}, {1, 0, 0, 0}, true};
  const auto q = gaze_ray_intersection(parallel);
  CHECK(q[0] == 26.0);
  CHECK(q[1] == 10.0);
}

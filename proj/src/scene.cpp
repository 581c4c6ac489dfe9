#include "pjat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "pjat/error.hpp"

namespace pjat {

namespace {

using nlohmann::json;

double saliency_sigma(GridDims dims) { return default_sigma(dims); }

Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1]};
}

Vec2 unit_toward(Vec2 from, Vec2 to) {
  const double dx = to[0] - from[0], dy = to[1] - from[1];
  const double n = std::hypot(dx, dy);
  return {dx / n, dy / n};
}

double distance(Vec2 a, Vec2 b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

// Dirichlet draw with concentration `focus` on one class and 1 elsewhere.
std::vector<double> draw_action(int n_actions, int focal, std::mt19937_64& rng) {
  constexpr double kFocus = 8.0;
  std::vector<double> a(static_cast<std::size_t>(n_actions));
  for (int k = 0; k < n_actions; ++k) {
    std::gamma_distribution<double> gamma(k == focal ? kFocus : 1.0, 1.0);
    a[static_cast<std::size_t>(k)] = gamma(rng);
  }
  const double sum = std::accumulate(a.begin(), a.end(), 0.0);
  for (auto& v : a) v /= sum;
  return a;
}

bool inside(Vec2 p, GridDims g) { return p[0] >= 0.0 && p[0] < g.width && p[1] >= 0.0 && p[1] < g.height; }

[[noreturn]] void field_error(std::size_t line, const std::string& field, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": field '" + field + "': " + what);
}

Vec2 read_vec2(const json& j, std::size_t line, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    field_error(line, field, "expected [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

const json& require(const json& obj, const char* key, std::size_t line, const std::string& prefix = "") {
  auto it = obj.find(key);
  if (it == obj.end()) field_error(line, prefix + key, "missing");
  return *it;
}

}  // namespace

Vec2 gaze_toward(Vec2 from, Vec2 to, double noise_angle) {
  const Vec2 u = unit_toward(from, to);
  return noise_angle == 0.0 ? u : rotate(u, noise_angle);
}

void validate(const SceneGenConfig& cfg) {
  if (cfg.grid_w <= 0 || cfg.grid_h <= 0) throw UsageError("grid dimensions must be positive");
  if (cfg.n_people.lo < 1 || cfg.n_people.hi < cfg.n_people.lo) throw UsageError("n_people range must satisfy 1 <= lo <= hi");
  if (!(cfg.distractor_fraction >= 0.0 && cfg.distractor_fraction <= 1.0)) throw UsageError("distractor fraction must lie in [0, 1]");
  if (!(cfg.no_ap_scene_fraction >= 0.0 && cfg.no_ap_scene_fraction <= 1.0)) throw UsageError("no-AP scene fraction must lie in [0, 1]");
  if (!(cfg.gaze_noise_std_rad >= 0.0) || !std::isfinite(cfg.gaze_noise_std_rad)) throw UsageError("gaze noise must be finite and >= 0");
  if (cfg.n_actions < 2) throw UsageError("n_actions must be >= 2");
  if (cfg.saliency_clutter_count < 0) throw UsageError("saliency clutter count must be >= 0");
  // A person must fit at kMinPersonToApDistance from some point of the grid.
  if (std::hypot(cfg.grid_w - 1.0, cfg.grid_h - 1.0) < 2.0 * kMinPersonToApDistance) throw UsageError("grid too small");
}

Heatmap render_saliency(const std::vector<SaliencyBump>& points, GridDims dims) {
  Heatmap h(dims);
  for (const auto& b : points) {
    const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
    for (int y = 0; y < dims.height; ++y) {
      for (int x = 0; x < dims.width; ++x) {
        const double dx = x - b.x, dy = y - b.y;
        h.at(x, y) += b.amp * std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  const auto v = h.values();
  const double peak = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  if (peak > 0.0) {
    for (auto& x : h.values()) x /= peak;
  }
  return h;
}

Scene generate_scene(const SceneGenConfig& cfg, std::mt19937_64& rng) {
  const GridDims grid{cfg.grid_w, cfg.grid_h};
  std::uniform_real_distribution<double> ux(0.0, cfg.grid_w), uy(0.0, cfg.grid_h);
  std::uniform_real_distribution<double> ap_x(0.0, cfg.grid_w - 1.0), ap_y(0.0, cfg.grid_h - 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Scene s;
  s.grid = grid;
  const int n_people = std::uniform_int_distribution<int>(cfg.n_people.lo, cfg.n_people.hi)(rng);
  const bool no_ap = unit(rng) < cfg.no_ap_scene_fraction;
  if (!no_ap) s.joint_ap = Vec2{ap_x(rng), ap_y(rng)};

  const int n_distractors =
      no_ap ? n_people : static_cast<int>(std::lround(cfg.distractor_fraction * static_cast<double>(n_people)));
  std::vector<int> order(static_cast<std::size_t>(n_people));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> distractor(order.size(), false);
  for (int k = 0; k < n_distractors; ++k) distractor[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = true;

  std::uniform_int_distribution<int> other_action(1, cfg.n_actions - 1);
  for (int i = 0; i < n_people; ++i) {
    PersonAttributes p;
    Vec2 target{};
    if (!distractor[static_cast<std::size_t>(i)]) {
      target = *s.joint_ap;
      do {
        p.location = {ux(rng), uy(rng)};
      } while (distance(p.location, target) < kMinPersonToApDistance);
      p.is_attender = true;
      p.action = draw_action(cfg.n_actions, kEngagedAction, rng);
    } else {
      p.location = {ux(rng), uy(rng)};
      do {
        target = {ap_x(rng), ap_y(rng)};
      } while (distance(p.location, target) < kMinPersonToApDistance);
      p.action = draw_action(cfg.n_actions, other_action(rng), rng);
    }
    p.gaze = gaze_toward(p.location, target, cfg.gaze_noise_std_rad * normal(rng));
    s.people.push_back(std::move(p));
    s.private_aps.push_back(target);
  }

  const double sigma = saliency_sigma(grid);
  if (s.joint_ap) s.saliency_points.push_back({(*s.joint_ap)[0], (*s.joint_ap)[1], sigma, 1.0});
  std::uniform_real_distribution<double> clutter_amp(0.5, 1.0);
  for (int k = 0; k < cfg.saliency_clutter_count; ++k) {
    const double x = ap_x(rng), y = ap_y(rng);
    s.saliency_points.push_back({x, y, sigma, clutter_amp(rng)});
  }
  s.saliency = render_saliency(s.saliency_points, grid);
  return s;
}

std::vector<Scene> generate_scenes(const SceneGenConfig& cfg, std::size_t count) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(cfg, rng));
  return out;
}

void validate(const Scene& s) {
  const auto fail = [](const std::string& field, const std::string& what) {
    throw DataError("field '" + field + "': " + what);
  };
  if (s.grid.width <= 0 || s.grid.height <= 0) fail("grid", "dimensions must be positive");
  if (s.people.empty()) fail("people", "at least one person required");
  if (s.private_aps.size() != s.people.size()) fail("private_aps", "length must equal number of people");
  for (std::size_t i = 0; i < s.people.size(); ++i) {
    const auto& p = s.people[i];
    const std::string pre = "people[" + std::to_string(i) + "].";
    if (!inside(p.location, s.grid)) fail(pre + "loc", "outside grid");
    const double n = std::hypot(p.gaze[0], p.gaze[1]);
    if (!(std::abs(n - 1.0) <= 1e-9)) fail(pre + "gaze", "norm must be 1 (got " + std::to_string(n) + ")");
    if (p.action.empty()) fail(pre + "action", "empty");
    double sum = 0.0;
    for (double a : p.action) {
      if (!(a >= 0.0) || !std::isfinite(a)) fail(pre + "action", "entries must be finite and >= 0");
      sum += a;
    }
    if (!(std::abs(sum - 1.0) <= 1e-9)) fail(pre + "action", "must sum to 1");
    if (p.action.size() != s.people.front().action.size()) fail(pre + "action", "inconsistent length");
    if (!inside(s.private_aps[i], s.grid)) fail("private_aps[" + std::to_string(i) + "]", "outside grid");
    if (s.joint_ap && p.is_attender && s.private_aps[i] != *s.joint_ap) {
      fail("private_aps[" + std::to_string(i) + "]", "attender must share joint_ap");
    }
  }
  if (s.joint_ap && !inside(*s.joint_ap, s.grid)) fail("joint_ap", "outside grid");
  for (std::size_t k = 0; k < s.saliency_points.size(); ++k) {
    const auto& b = s.saliency_points[k];
    if (!(b.sigma > 0.0) || !std::isfinite(b.amp) || !std::isfinite(b.x) || !std::isfinite(b.y)) {
      fail("saliency.points[" + std::to_string(k) + "]", "invalid bump");
    }
  }
}

std::string scene_to_json_line(const Scene& s) {
  json people = json::array();
  for (const auto& p : s.people) {
    people.push_back({{"loc", {p.location[0], p.location[1]}},
                      {"gaze", {p.gaze[0], p.gaze[1]}},
                      {"action", p.action},
                      {"attender", p.is_attender}});
  }
  json aps = json::array();
  for (const auto& a : s.private_aps) aps.push_back({a[0], a[1]});
  json points = json::array();
  for (const auto& b : s.saliency_points) points.push_back({b.x, b.y, b.sigma, b.amp});
  json j = {{"grid", {s.grid.width, s.grid.height}},
            {"people", std::move(people)},
            {"joint_ap", s.joint_ap ? json{(*s.joint_ap)[0], (*s.joint_ap)[1]} : json(nullptr)},
            {"private_aps", std::move(aps)},
            {"saliency", {{"points", std::move(points)}}}};
  return j.dump();
}

Scene scene_from_json_line(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw DataError("line " + std::to_string(line_no) + ": expected a JSON object");

  Scene s;
  const auto& grid = require(j, "grid", line_no);
  if (!grid.is_array() || grid.size() != 2 || !grid[0].is_number_integer() || !grid[1].is_number_integer()) {
    field_error(line_no, "grid", "expected [W, H] integers");
  }
  s.grid = {grid[0].get<int>(), grid[1].get<int>()};
  if (s.grid.width <= 0 || s.grid.height <= 0) field_error(line_no, "grid", "dimensions must be positive");

  const auto& people = require(j, "people", line_no);
  if (!people.is_array()) field_error(line_no, "people", "expected array");
  for (std::size_t i = 0; i < people.size(); ++i) {
    const std::string pre = "people[" + std::to_string(i) + "].";
    const auto& pj = people[i];
    if (!pj.is_object()) field_error(line_no, "people[" + std::to_string(i) + "]", "expected object");
    PersonAttributes p;
    p.location = read_vec2(require(pj, "loc", line_no, pre), line_no, pre + "loc");
    p.gaze = read_vec2(require(pj, "gaze", line_no, pre), line_no, pre + "gaze");
    const auto& action = require(pj, "action", line_no, pre);
    if (!action.is_array()) field_error(line_no, pre + "action", "expected array");
    for (const auto& a : action) {
      if (!a.is_number()) field_error(line_no, pre + "action", "expected numbers");
      p.action.push_back(a.get<double>());
    }
    const auto& att = require(pj, "attender", line_no, pre);
    if (!att.is_boolean()) field_error(line_no, pre + "attender", "expected bool");
    p.is_attender = att.get<bool>();
    s.people.push_back(std::move(p));
  }

  const auto& jap = require(j, "joint_ap", line_no);
  if (!jap.is_null()) s.joint_ap = read_vec2(jap, line_no, "joint_ap");

  const auto& aps = require(j, "private_aps", line_no);
  if (!aps.is_array()) field_error(line_no, "private_aps", "expected array");
  for (std::size_t i = 0; i < aps.size(); ++i) {
    s.private_aps.push_back(read_vec2(aps[i], line_no, "private_aps[" + std::to_string(i) + "]"));
  }

  const auto& sal = require(j, "saliency", line_no);
  if (!sal.is_object()) field_error(line_no, "saliency", "expected object");
  const auto& pts = require(sal, "points", line_no, "saliency.");
  if (!pts.is_array()) field_error(line_no, "saliency.points", "expected array");
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const auto& b = pts[k];
    if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const json& v) { return v.is_number(); })) {
      field_error(line_no, "saliency.points[" + std::to_string(k) + "]", "expected [x, y, sigma, amp]");
    }
    s.saliency_points.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
  }

  try {
    validate(s);
  } catch (const DataError& e) {
    throw DataError("line " + std::to_string(line_no) + ": invariant violation: " + e.what());
  }
  s.saliency = render_saliency(s.saliency_points, s.grid);
  return s;
}

void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& s : scenes) out << scene_to_json_line(s) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<Scene> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::vector<Scene> scenes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    scenes.push_back(scene_from_json_line(line, line_no));
  }
  return scenes;
}

}  // namespace pjat

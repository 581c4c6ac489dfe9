#include "pjat/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pjat/error.hpp"
#include "pjat/evaluate.hpp"
#include "pjat/run_dir.hpp"
#include "pjat/trainer.hpp"

namespace pjat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// printf-style output through std::cout, so all output shares one stream.
[[gnu::format(printf, 1, 2)]] void say(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  std::cout << buf;
}

// JSON config files. Top-level keys apply to the subcommand being run;
// an object keyed by a subcommand name applies to that subcommand only.
// Keys may use '_' or '-'.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const auto name = opt->get_lnames()[0];
      if (opt->count() > 0) {
        const auto& res = opt->results();
        j[name] = res.size() == 1 ? json(res[0]) : json(res);
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config file must hold a JSON object");
    std::vector<std::string> active;
    for (const CLI::App* sub : root_->get_subcommands()) active.push_back(sub->get_name());

    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        for (const auto& [k2, v2] : value.items()) add_item(items, {key}, k2, v2);
      } else {
        add_item(items, active, key, value);
      }
    }
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void add_item(std::vector<CLI::ConfigItem>& items, std::vector<std::string> parents, std::string name,
                       const json& v) {
    if (v.is_null()) return;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::ConfigItem item;
    item.parents = std::move(parents);
    item.name = name;
    if (v.is_array()) {
      for (const auto& e : v) item.inputs.push_back(scalar(e));
    } else {
      item.inputs.push_back(scalar(v));
    }
    items.push_back(std::move(item));
  }

  const CLI::App* root_;
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct LoadedSet {
  std::string role;
  fs::path path;
  std::vector<Scene> scenes;
  std::string digest;
};

LoadedSet load_set(const std::string& role, const fs::path& path) {
  LoadedSet s{role, path, read_dataset(path), file_digest(path)};
  return s;
}

json describe(const LoadedSet& s) { return {{"path", s.path.string()}, {"fnv1a64", s.digest}, {"scenes", s.scenes.size()}}; }

void check_dataset_shape(const LoadedSet& s, GridDims grid, int n_actions) {
  for (std::size_t i = 0; i < s.scenes.size(); ++i) {
    const Scene& sc = s.scenes[i];
    if (sc.grid != grid) {
      throw DataError(s.role + " scene " + std::to_string(i + 1) + ": grid " + std::to_string(sc.grid.width) + "x" +
                      std::to_string(sc.grid.height) + " does not match model grid " + std::to_string(grid.width) + "x" +
                      std::to_string(grid.height));
    }
    for (const auto& p : sc.people) {
      if (p.action.size() != static_cast<std::size_t>(n_actions)) {
        throw DataError(s.role + " scene " + std::to_string(i + 1) + ": action vector length " +
                        std::to_string(p.action.size()) + " does not match model n_actions " + std::to_string(n_actions));
      }
    }
  }
}

std::vector<double> resolve_thresholds(const std::vector<double>& flags, GridDims grid) {
  return flags.empty() ? default_thresholds(grid) : flags;
}

void set_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

// ---------------------------------------------------------------- model flags

struct ModelFlags {
  std::string variant = "j_ja_only";
  std::string fusion = "weighted";
  int d_model = 64;
  int heads = 2;
  int layers = 2;
  int head_hidden = 64;
  int branch_hidden = 16;
  double sigma = 0.0;
  bool no_location = false;
  bool no_gaze = false;
  bool no_action = false;
};

void add_model_options(CLI::App* app, ModelFlags& f) {
  app->add_option("--variant", f.variant, "PJAT head: j_ja_only, f_ja_only, f_ja_and_j_ja, imagewise")->capture_default_str();
  app->add_option("--fusion", f.fusion, "fusion module: weighted, average, cnn")->capture_default_str();
  app->add_option("--d-model", f.d_model, "transformer width D")->capture_default_str();
  app->add_option("--heads", f.heads, "attention heads")->capture_default_str();
  app->add_option("--layers", f.layers, "encoder layers")->capture_default_str();
  app->add_option("--head-hidden", f.head_hidden, "hidden width of the pixelwise head")->capture_default_str();
  app->add_option("--branch-hidden", f.branch_hidden, "hidden width of the scene branch")->capture_default_str();
  app->add_option("--sigma", f.sigma, "ground-truth Gaussian sigma in px (0: 3 px per 64 px of width)")->capture_default_str();
  app->add_flag("--no-location", f.no_location, "zero the location inputs of PJAT");
  app->add_flag("--no-gaze", f.no_gaze, "zero the gaze inputs of PJAT");
  app->add_flag("--no-action", f.no_action, "zero the action inputs of PJAT");
}

JointConfig joint_config(const ModelFlags& f, GridDims grid, int n_actions) {
  JointConfig c;
  c.pjat.d_model = f.d_model;
  c.pjat.n_heads = f.heads;
  c.pjat.n_layers = f.layers;
  c.pjat.head_hidden = f.head_hidden;
  c.pjat.n_actions = n_actions;
  c.pjat.grid_w = grid.width;
  c.pjat.grid_h = grid.height;
  c.pjat.variant = head_variant_from_string(f.variant);
  c.pjat.use_location = !f.no_location;
  c.pjat.use_gaze = !f.no_gaze;
  c.pjat.use_action = !f.no_action;
  c.branch_hidden = f.branch_hidden;
  c.fusion = fusion_mode_from_string(f.fusion);
  if (f.sigma < 0.0) throw UsageError("--sigma must be >= 0");
  c.gt_sigma = f.sigma;
  validate(c.pjat);
  if (c.branch_hidden <= 0) throw UsageError("--branch-hidden must be positive");
  return c;
}

struct ReportSet {
  std::vector<MetricsReport> rows;
  json to_json() const {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(pjat::to_json(r));
    return arr;
  }
};

/// H_JA, H_AT and H_F rows plus the gaze-ray intersection baseline.
ReportSet branch_reports(const JointModel& model, const std::vector<Scene>& val, const std::vector<Scene>& test,
                         const std::vector<double>& thresholds, const std::vector<OutputBranch>& branches) {
  if (test.empty()) throw DataError("evaluation: test set is empty");
  const auto vp = predict_peaks(model, val);
  const auto tp = predict_peaks(model, test);
  ReportSet out;
  for (const auto b : branches) {
    std::vector<PeakPoint> v, t;
    for (const auto& p : vp) v.push_back(p.get(b));
    for (const auto& p : tp) t.push_back(p.get(b));
    out.rows.push_back(make_report(to_string(b), val, v, test, t, thresholds));
  }
  std::vector<Vec2> ls;
  for (const auto& s : test) ls.push_back(gaze_ray_intersection(s));
  out.rows.push_back(make_point_report("gaze-ray LS", test, ls, thresholds));
  return out;
}

// ------------------------------------------------------------------------ gen

struct GenFlags {
  fs::path out;
  std::uint64_t seed = 0;
  std::vector<int> grid{64, 64};
  std::vector<int> n_people{6, 10};
  double distractor_frac = 0.25;
  double gaze_noise = 0.1;
  double no_ap_frac = 0.1;
  int n_actions = 4;
  int clutter = 3;
  std::size_t count = 2000;
  std::size_t val_count = 200;
  std::size_t test_count = 500;
};

void cmd_gen(const GenFlags& f) {
  SceneGenConfig cfg;
  cfg.grid_w = f.grid[0];
  cfg.grid_h = f.grid[1];
  cfg.n_people = {f.n_people[0], f.n_people[1]};
  cfg.distractor_fraction = f.distractor_frac;
  cfg.gaze_noise_std_rad = f.gaze_noise;
  cfg.no_ap_scene_fraction = f.no_ap_frac;
  cfg.n_actions = f.n_actions;
  cfg.saliency_clutter_count = f.clutter;
  validate(cfg);
  if (f.count == 0) throw UsageError("--count must be positive");

  std::error_code ec;
  fs::create_directories(f.out, ec);
  if (ec) throw DataError("cannot create " + f.out.string() + ": " + ec.message());

  // Splits use disjoint seed streams derived from --seed.
  const struct {
    const char* name;
    std::size_t count;
    std::uint64_t stream;
  } splits[] = {{"train", f.count, 0}, {"val", f.val_count, 1}, {"test", f.test_count, 2}};
  json files = json::object();
  for (const auto& s : splits) {
    if (s.count == 0) continue;
    SceneGenConfig c = cfg;
    c.seed = fnv1a64(std::to_string(f.seed) + "/" + s.name);
    const fs::path path = f.out / (std::string(s.name) + ".jsonl");
    write_dataset(generate_scenes(c, s.count), path);
    files[s.name] = {{"path", path.filename().string()}, {"scenes", s.count}, {"fnv1a64", file_digest(path)}};
    std::cout << "wrote " << path.string() << " (" << s.count << " scenes)\n";
  }
  const json meta = {{"seed", f.seed},
                     {"grid", f.grid},
                     {"n_people", f.n_people},
                     {"distractor_frac", f.distractor_frac},
                     {"gaze_noise", f.gaze_noise},
                     {"no_ap_frac", f.no_ap_frac},
                     {"n_actions", f.n_actions},
                     {"clutter", f.clutter},
                     {"files", files}};
  write_text_file(f.out / "dataset.json", meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------- train

struct TrainFlags {
  fs::path train, val, test;
  fs::path runs_dir = "runs";
  fs::path out;
  ModelFlags model;
  std::string stages = "default";
  std::uint64_t seed = 0;
  int batch_size = 1;
  int eval_every = 0;
  int threads = 0;
  std::vector<double> thresholds;
};

constexpr double kTrainBudgetSeconds = 600.0;

void cmd_train(const TrainFlags& f, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  set_threads(f.threads);
  const LoadedSet train_set = load_set("train", f.train);
  if (train_set.scenes.empty()) throw DataError("training set " + f.train.string() + " is empty");
  const GridDims grid = train_set.scenes.front().grid;
  const int n_actions = static_cast<int>(train_set.scenes.front().people.front().action.size());
  const JointConfig jc = joint_config(f.model, grid, n_actions);
  check_dataset_shape(train_set, grid, n_actions);

  TrainConfig tc;
  tc.stages = parse_stages(f.stages);
  tc.seed = f.seed;
  tc.batch_size = f.batch_size;
  tc.eval_every = f.eval_every;
  validate(tc);

  std::optional<LoadedSet> val_set, test_set;
  if (!f.val.empty()) {
    val_set = load_set("val", f.val);
    check_dataset_shape(*val_set, grid, n_actions);
  }
  if (!f.test.empty()) {
    test_set = load_set("test", f.test);
    check_dataset_shape(*test_set, grid, n_actions);
  }

  const json config = {{"model", to_json(jc)},
                       {"stages", format_stages(tc.stages)},
                       {"seed", tc.seed},
                       {"batch_size", tc.batch_size},
                       {"eval_every", tc.eval_every}};
  json datasets = {{"train", describe(train_set)}};
  if (val_set) datasets["val"] = describe(*val_set);
  if (test_set) datasets["test"] = describe(*test_set);
  const RunDir run = create_run_dir(f.runs_dir, "train", config.dump() + datasets.dump(), f.out);
  std::cout << "run " << run.run_id << " -> " << run.path.string() << "\n";

  JointModel model(jc, f.seed);
  TrainCallbacks cb;
  cb.on_eval = [&](int step, JointModel& m) {
    if (!val_set || val_set->scenes.empty()) {
      std::cout << "step " << step << "\n";
      return;
    }
    double sum = 0.0;
    for (const auto& s : val_set->scenes) sum += total_loss(m, s).all;
    say("step %d  val L_ALL %.6g\n", step, sum / static_cast<double>(val_set->scenes.size()));
    std::fflush(stdout);
  };
  cb.on_stage_end = [&](std::size_t i, const Stage& s, JointModel&) {
    std::cout << "finished stage " << i + 1 << "/" << tc.stages.size() << " (" << to_string(s.target) << ", " << s.steps
              << " steps)\n";
  };
  tc.checkpoint_path = run.path / "checkpoint.json";
  const auto records = train(train_set.scenes, model, tc, cb);
  write_loss_log(records, run.path / "loss.csv");

  json metrics_path = nullptr;
  if (test_set) {
    const auto reports = branch_reports(model, val_set ? val_set->scenes : std::vector<Scene>{}, test_set->scenes,
                                        resolve_thresholds(f.thresholds, grid),
                                        {OutputBranch::ja, OutputBranch::at, OutputBranch::fused});
    write_text_file(run.path / "metrics.json", json{{"reports", reports.to_json()}}.dump(2) + "\n");
    const std::string table = format_table(reports.rows);
    write_text_file(run.path / "metrics.txt", table);
    std::cout << table;
    metrics_path = (run.path / "metrics.json").string();
  }

  const auto& last = records.back().losses;
  say("final step %d  L_JA %.6g  L_AT %.6g  L_F %.6g  L_ALL %.6g\n", records.back().step, last.ja, last.at, last.f,
              last.all);
  const double duration = seconds_since(t0);
  write_manifest(run, {{"run_id", run.run_id},
                       {"command", "train"},
                       {"argv", argv},
                       {"created_utc", utc_now()},
                       {"config", config},
                       {"datasets", datasets},
                       {"checkpoint", tc.checkpoint_path.string()},
                       {"loss_log", (run.path / "loss.csv").string()},
                       {"metrics", metrics_path},
                       {"duration_s", duration},
                       {"time_budget_s", kTrainBudgetSeconds},
                       {"within_budget", duration < kTrainBudgetSeconds}});
}

// ----------------------------------------------------------------------- eval

struct EvalFlags {
  fs::path checkpoint, test, val;
  fs::path runs_dir = "runs";
  fs::path out;
  bool per_branch = false;
  std::string branch = "fused";
  std::vector<double> thresholds;
  int threads = 0;
};

OutputBranch output_branch_from_string(const std::string& s) {
  if (s == "ja") return OutputBranch::ja;
  if (s == "at") return OutputBranch::at;
  if (s == "fused") return OutputBranch::fused;
  throw UsageError("unknown branch '" + s + "' (expected ja, at, fused)");
}

void cmd_eval(const EvalFlags& f, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  set_threads(f.threads);
  const JointModel model = load_model(f.checkpoint);
  const GridDims grid = model.grid();
  const LoadedSet test_set = load_set("test", f.test);
  if (test_set.scenes.empty()) throw DataError("test set " + f.test.string() + " is empty");
  check_dataset_shape(test_set, grid, model.config.pjat.n_actions);
  std::optional<LoadedSet> val_set;
  if (!f.val.empty()) {
    val_set = load_set("val", f.val);
    check_dataset_shape(*val_set, grid, model.config.pjat.n_actions);
  }
  const auto thresholds = resolve_thresholds(f.thresholds, grid);
  for (double t : thresholds) {
    if (!(t > 0.0)) throw UsageError("--thresholds must be positive");
  }
  std::vector<OutputBranch> branches{output_branch_from_string(f.branch)};
  if (f.per_branch) branches = {OutputBranch::ja, OutputBranch::at, OutputBranch::fused};

  const json config = {{"branches", f.per_branch ? "per-branch" : f.branch}, {"thresholds", thresholds}};
  json datasets = {{"test", describe(test_set)}};
  if (val_set) datasets["val"] = describe(*val_set);
  const std::string ckpt_digest = file_digest(f.checkpoint);
  const RunDir run = create_run_dir(f.runs_dir, "eval", config.dump() + datasets.dump() + ckpt_digest, f.out);

  const auto reports =
      branch_reports(model, val_set ? val_set->scenes : std::vector<Scene>{}, test_set.scenes, thresholds, branches);
  const std::string table = format_table(reports.rows);
  write_text_file(run.path / "metrics.json", json{{"reports", reports.to_json()}}.dump(2) + "\n");
  write_text_file(run.path / "metrics.txt", table);
  std::cout << table;
  write_manifest(run, {{"run_id", run.run_id},
                       {"command", "eval"},
                       {"argv", argv},
                       {"created_utc", utc_now()},
                       {"config", config},
                       {"datasets", datasets},
                       {"checkpoint", f.checkpoint.string()},
                       {"checkpoint_fnv1a64", ckpt_digest},
                       {"metrics", (run.path / "metrics.json").string()},
                       {"duration_s", seconds_since(t0)}});
}

// ---------------------------------------------------------------------- infer

struct InferFlags {
  fs::path checkpoint, scene, out;
  std::size_t index = 0;
};

void cmd_infer(const InferFlags& f) {
  const JointModel model = load_model(f.checkpoint);
  const auto scenes = read_dataset(f.scene);
  if (f.index >= scenes.size()) {
    throw UsageError("--index " + std::to_string(f.index) + " out of range (" + std::to_string(scenes.size()) + " scenes)");
  }
  const Scene& scene = scenes[f.index];
  LoadedSet one{"scene", f.scene, {scene}, ""};
  check_dataset_shape(one, model.grid(), model.config.pjat.n_actions);

  std::error_code ec;
  fs::create_directories(f.out, ec);
  if (ec) throw DataError("cannot create " + f.out.string() + ": " + ec.message());
  const auto out = forward(model, scene);
  write_pgm(out.hja(), f.out / "H_JA.pgm");
  write_pgm(out.hat(), f.out / "H_AT.pgm");
  write_pgm(out.hf, f.out / "H_F.pgm");

  const std::size_t n_layers = static_cast<std::size_t>(model.config.pjat.n_layers);
  std::vector<std::vector<double>> att;
  for (std::size_t l = 0; l < n_layers; ++l) att.push_back(model.pjat.extract_ja_attention(scene, l));
  std::ostringstream csv;
  csv << "person,x,y";
  for (std::size_t l = 0; l < n_layers; ++l) csv << ",layer" << l;
  csv << "\n";
  char buf[64];
  for (std::size_t i = 0; i < scene.people.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g", i, scene.people[i].location[0], scene.people[i].location[1]);
    csv << buf;
    for (const auto& row : att) {
      std::snprintf(buf, sizeof buf, ",%.17g", row[i]);
      csv << buf;
    }
    csv << "\n";
  }
  write_text_file(f.out / "attention.csv", csv.str());

  json peaks = json::object();
  for (const auto& [name, h] : {std::pair<const char*, const Heatmap*>{"H_JA", &out.hja()}, {"H_AT", &out.hat()}, {"H_F", &out.hf}}) {
    const auto p = argmax_point(*h);
    peaks[name] = {{"x", p.point[0]}, {"y", p.point[1]}, {"value", p.value}};
  }
  write_text_file(f.out / "argmax.json", peaks.dump(2) + "\n");
  const auto p = argmax_point(out.hf);
  say("H_F argmax: x=%d y=%d value=%.6f\n", static_cast<int>(p.point[0]), static_cast<int>(p.point[1]), p.value);
}

// --------------------------------------------------------------------- ablate

const std::vector<std::string> kCells{"full", "wo_l", "wo_g", "wo_a", "wo_alpha", "wo_beta"};

struct AblateFlags {
  fs::path train, val, test;
  fs::path runs_dir = "runs";
  fs::path out;
  ModelFlags model;
  std::vector<std::string> cells = kCells;
  std::vector<std::string> variants{"f_ja_only", "f_ja_and_j_ja", "j_ja_only", "imagewise"};
  std::vector<std::string> fusions{"cnn", "average", "weighted"};
  std::string stages = "default";
  std::uint64_t seed = 0;
  std::vector<double> thresholds;
  int threads = 0;
};

struct CellPlan {
  JointConfig config;
  std::vector<Stage> stages;
  OutputBranch report;
};

// Knockouts act on the PJAT inputs; w/o alpha keeps only the scene-branch
// stages and reports H_AT, w/o beta keeps only the PJAT stages and reports H_JA.
CellPlan plan_cell(const std::string& cell, JointConfig cfg, const std::vector<Stage>& schedule) {
  CellPlan plan{cfg, schedule, OutputBranch::fused};
  auto keep_only = [&](StageTarget t) {
    plan.stages.clear();
    for (const auto& s : schedule) {
      if (s.target == t) plan.stages.push_back(s);
    }
    if (plan.stages.empty()) throw UsageError("stage schedule has no " + to_string(t) + " stage for cell " + cell);
  };
  if (cell == "full") {
  } else if (cell == "wo_l") {
    plan.config.pjat.use_location = false;
  } else if (cell == "wo_g") {
    plan.config.pjat.use_gaze = false;
  } else if (cell == "wo_a") {
    plan.config.pjat.use_action = false;
  } else if (cell == "wo_alpha") {
    keep_only(StageTarget::beta);
    plan.report = OutputBranch::at;
  } else if (cell == "wo_beta") {
    keep_only(StageTarget::alpha);
    plan.report = OutputBranch::ja;
  }
  return plan;
}

// Settings that cannot influence the reported heatmap are normalized so
// equivalent cells share one training run.
std::string plan_key(const CellPlan& p) {
  JointConfig c = p.config;
  if (p.report == OutputBranch::at) {
    c.pjat = PjatConfig{};
    c.fusion = FusionMode::weighted;
  } else if (p.report == OutputBranch::ja) {
    c.branch_hidden = 0;
    c.fusion = FusionMode::weighted;
  }
  return to_json(c).dump() + format_stages(p.stages) + to_string(p.report);
}

void cmd_ablate(const AblateFlags& f, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  set_threads(f.threads);
  const LoadedSet train_set = load_set("train", f.train);
  const LoadedSet val_set = load_set("val", f.val);
  const LoadedSet test_set = load_set("test", f.test);
  if (train_set.scenes.empty()) throw DataError("training set " + f.train.string() + " is empty");
  if (test_set.scenes.empty()) throw DataError("test set " + f.test.string() + " is empty");
  const GridDims grid = train_set.scenes.front().grid;
  const int n_actions = static_cast<int>(train_set.scenes.front().people.front().action.size());
  for (const auto* s : {&train_set, &val_set, &test_set}) check_dataset_shape(*s, grid, n_actions);
  const auto schedule = parse_stages(f.stages);
  const auto thresholds = resolve_thresholds(f.thresholds, grid);

  struct Cell {
    std::string name, cell, variant, fusion;
    std::optional<CellPlan> plan;
    std::string error;
  };
  for (const auto& cell : f.cells) {
    if (std::find(kCells.begin(), kCells.end(), cell) == kCells.end()) {
      throw UsageError("unknown ablation cell '" + cell + "' (expected full, wo_l, wo_g, wo_a, wo_alpha, wo_beta)");
    }
  }
  std::vector<Cell> cells;
  for (const auto& cell : f.cells) {
    for (const auto& variant : f.variants) {
      for (const auto& fusion : f.fusions) {
        Cell c{cell + "/" + variant + "/" + fusion, cell, variant, fusion, std::nullopt, ""};
        try {
          ModelFlags mf = f.model;
          mf.variant = variant;
          mf.fusion = fusion;
          c.plan = plan_cell(cell, joint_config(mf, grid, n_actions), schedule);
        } catch (const Error& e) {
          c.error = e.what();
        }
        cells.push_back(std::move(c));
      }
    }
  }

  const json config = {{"cells", f.cells},       {"variants", f.variants}, {"fusions", f.fusions},
                       {"stages", format_stages(schedule)}, {"seed", f.seed},  {"thresholds", thresholds},
                       {"base_model", to_json(joint_config(f.model, grid, n_actions))}};
  const json datasets = {{"train", describe(train_set)}, {"val", describe(val_set)}, {"test", describe(test_set)}};
  const RunDir run = create_run_dir(f.runs_dir, "ablate", config.dump() + datasets.dump(), f.out);
  std::cout << "run " << run.run_id << " -> " << run.path.string() << " (" << cells.size() << " cells)\n";

  std::map<std::string, MetricsReport> done;
  std::vector<std::pair<MetricsReport, const Cell*>> ok;
  json cell_json = json::array();
  for (auto& c : cells) {
    json entry = {{"cell", c.cell}, {"variant", c.variant}, {"fusion", c.fusion}};
    if (c.plan) {
      entry["reported_branch"] = to_string(c.plan->report);
      try {
        const std::string key = plan_key(*c.plan);
        auto it = done.find(key);
        if (it == done.end()) {
          JointModel model(c.plan->config, f.seed);
          TrainConfig tc;
          tc.stages = c.plan->stages;
          tc.seed = f.seed;
          train(train_set.scenes, model, tc);
          it = done.emplace(key, evaluate(model, val_set.scenes, test_set.scenes, c.plan->report, thresholds, c.name)).first;
        }
        MetricsReport r = it->second;
        r.label = c.name;
        entry["metrics"] = to_json(r);
        ok.emplace_back(r, &c);
        say("%-36s %s dist %.3f\n", c.name.c_str(), to_string(c.plan->report).c_str(), r.dist);
      } catch (const std::exception& e) {
        c.error = e.what();
      }
    }
    if (!c.error.empty()) {
      entry["error"] = c.error;
      say("%-36s FAILED: %s\n", c.name.c_str(), c.error.c_str());
    }
    std::cout.flush();
    cell_json.push_back(entry);
  }

  std::stable_sort(ok.begin(), ok.end(), [](const auto& a, const auto& b) { return a.first.dist < b.first.dist; });
  std::vector<MetricsReport> ranked;
  for (std::size_t i = 0; i < ok.size(); ++i) {
    MetricsReport r = ok[i].first;
    r.label = "#" + std::to_string(i + 1) + " " + r.label + " [" + to_string(ok[i].second->plan->report) + "]";
    ranked.push_back(r);
  }
  std::string table = ranked.empty() ? std::string("no successful cells\n") : format_table(ranked);
  for (const auto& c : cells) {
    if (!c.error.empty()) table += "FAILED " + c.name + ": " + c.error + "\n";
  }
  write_text_file(run.path / "ablation.json", json{{"cells", cell_json}}.dump(2) + "\n");
  write_text_file(run.path / "ablation.txt", table);
  std::cout << table;
  write_manifest(run, {{"run_id", run.run_id},
                       {"command", "ablate"},
                       {"argv", argv},
                       {"created_utc", utc_now()},
                       {"config", config},
                       {"datasets", datasets},
                       {"checkpoint", nullptr},
                       {"metrics", (run.path / "ablation.json").string()},
                       {"cells_failed", static_cast<int>(cells.size() - ok.size())},
                       {"duration_s", seconds_since(t0)}});
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"PJAT: joint attention estimation with a position-embedded transformer", "pjat"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "JSON file with option values; command-line flags take precedence");
  app.config_formatter(std::make_shared<JsonConfig>(&app));

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate train/val/test scene datasets");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
  gen_cmd->add_option("--grid", gen.grid, "grid width and height")->expected(2)->capture_default_str();
  gen_cmd->add_option("--n-people", gen.n_people, "inclusive range of people per scene")->expected(2)->capture_default_str();
  gen_cmd->add_option("--distractor-frac", gen.distractor_frac, "fraction of people looking elsewhere")->capture_default_str();
  gen_cmd->add_option("--gaze-noise", gen.gaze_noise, "gaze angle noise std in radians")->capture_default_str();
  gen_cmd->add_option("--no-ap-frac", gen.no_ap_frac, "fraction of scenes without a joint attention point")->capture_default_str();
  gen_cmd->add_option("--n-actions", gen.n_actions, "number of action classes")->capture_default_str();
  gen_cmd->add_option("--clutter", gen.clutter, "distractor saliency bumps per scene")->capture_default_str();
  gen_cmd->add_option("--count", gen.count, "training scenes")->capture_default_str();
  gen_cmd->add_option("--val-count", gen.val_count, "validation scenes (0 skips the file)")->capture_default_str();
  gen_cmd->add_option("--test-count", gen.test_count, "test scenes (0 skips the file)")->capture_default_str();

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
  train_cmd->add_option("--train", tr.train, "training dataset (JSONL)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--val", tr.val, "validation dataset, used for periodic losses and presence thresholds")->check(CLI::ExistingFile);
  train_cmd->add_option("--test", tr.test, "test dataset; when given, metrics are written after training")->check(CLI::ExistingFile);
  train_cmd->add_option("--runs-dir", tr.runs_dir, "parent of new run directories")->capture_default_str();
  train_cmd->add_option("--out", tr.out, "explicit run directory (must not exist)");
  train_cmd->add_option("--stages", tr.stages, "default, alpha-only, beta-only, gamma-only or name:steps[@lr],...")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "seed for initialization and data order")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size, "scenes per update")->capture_default_str();
  train_cmd->add_option("--eval-every", tr.eval_every, "report validation loss every N steps (0: off)")->capture_default_str();
  train_cmd->add_option("--threads", tr.threads, "OpenMP threads (0: runtime default)")->capture_default_str();
  train_cmd->add_option("--thresholds", tr.thresholds, "detection thresholds in px")->delimiter(',');
  add_model_options(train_cmd, tr.model);

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--test", ev.test, "test dataset")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--val", ev.val, "validation dataset for the presence threshold")->check(CLI::ExistingFile);
  eval_cmd->add_flag("--per-branch", ev.per_branch, "report H_JA, H_AT and H_F rows");
  eval_cmd->add_option("--branch", ev.branch, "single output to report: ja, at, fused")->capture_default_str();
  eval_cmd->add_option("--thresholds", ev.thresholds, "detection thresholds in px (default 3,6,9 per 64 px of width)")->delimiter(',');
  eval_cmd->add_option("--runs-dir", ev.runs_dir, "parent of new run directories")->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "explicit run directory (must not exist)");
  eval_cmd->add_option("--threads", ev.threads, "OpenMP threads (0: runtime default)")->capture_default_str();

  InferFlags inf;
  auto* infer_cmd = app.add_subcommand("infer", "write heatmaps and attention weights for one scene");
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--scene", inf.scene, "JSONL file holding the scene")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--index", inf.index, "0-based line of the scene within the file")->capture_default_str();
  infer_cmd->add_option("--out", inf.out, "output directory")->required();

  AblateFlags ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate a grid of ablations");
  ablate_cmd->add_option("--train", ab.train, "training dataset")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--val", ab.val, "validation dataset")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--test", ab.test, "test dataset")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--cells", ab.cells, "full, wo_l, wo_g, wo_a, wo_alpha, wo_beta")->delimiter(',')->capture_default_str();
  ablate_cmd->add_option("--variants", ab.variants, "PJAT head variants")->delimiter(',')->capture_default_str();
  ablate_cmd->add_option("--fusions", ab.fusions, "fusion modules")->delimiter(',')->capture_default_str();
  ablate_cmd->add_option("--stages", ab.stages, "stage schedule shared by all cells")->capture_default_str();
  ablate_cmd->add_option("--seed", ab.seed, "seed shared by all cells")->capture_default_str();
  ablate_cmd->add_option("--thresholds", ab.thresholds, "detection thresholds in px")->delimiter(',');
  ablate_cmd->add_option("--runs-dir", ab.runs_dir, "parent of new run directories")->capture_default_str();
  ablate_cmd->add_option("--out", ab.out, "explicit run directory (must not exist)");
  ablate_cmd->add_option("--threads", ab.threads, "OpenMP threads (0: runtime default)")->capture_default_str();
  ModelFlags& abm = ab.model;
  ablate_cmd->add_option("--d-model", abm.d_model, "transformer width D")->capture_default_str();
  ablate_cmd->add_option("--heads", abm.heads, "attention heads")->capture_default_str();
  ablate_cmd->add_option("--layers", abm.layers, "encoder layers")->capture_default_str();
  ablate_cmd->add_option("--head-hidden", abm.head_hidden, "hidden width of the pixelwise head")->capture_default_str();
  ablate_cmd->add_option("--branch-hidden", abm.branch_hidden, "hidden width of the scene branch")->capture_default_str();
  ablate_cmd->add_option("--sigma", abm.sigma, "ground-truth Gaussian sigma in px")->capture_default_str();

  const std::vector<std::string> args(argv, argv + argc);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (gen_cmd->parsed()) cmd_gen(gen);
    if (train_cmd->parsed()) cmd_train(tr, args);
    if (eval_cmd->parsed()) cmd_eval(ev, args);
    if (infer_cmd->parsed()) cmd_infer(inf);
    if (ablate_cmd->parsed()) cmd_ablate(ab, args);
  } catch (const Error& e) {
    std::cout.flush();
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cout.flush();
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
  return 0;
}

}  // namespace pjat

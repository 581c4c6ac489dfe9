#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "pjat/cli.hpp"
#include "pjat/fusion.hpp"
#include "pjat/heatmap.hpp"

using namespace pjat;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "pjat");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Result r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

const std::vector<std::string> kSmallModel{"--d-model", "8",  "--heads",         "2", "--layers", "1",
                                           "--head-hidden", "8", "--branch-hidden", "4"};
const std::string kShortSchedule = "alpha:6,beta:6,gamma:3,all:3";

std::vector<std::string> with_model(std::vector<std::string> args) {
  args.insert(args.end(), kSmallModel.begin(), kSmallModel.end());
  return args;
}

// One temporary workspace with a small generated dataset per test binary.
struct Workspace {
  fs::path root;
  fs::path data;
  Workspace() {
    root = fs::temp_directory_path() / ("pjat_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "data";
    const auto r = run({"gen", "--out", data.string(), "--seed", "11", "--grid", "16", "16", "--n-people", "2", "5",
                        "--count", "24", "--val-count", "8", "--test-count", "10"});
    REQUIRE(r.code == 0);
  }
  ~Workspace() { fs::remove_all(root); }
  fs::path train() const { return data / "train.jsonl"; }
  fs::path val() const { return data / "val.jsonl"; }
  fs::path test() const { return data / "test.jsonl"; }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

// Trains a small full-schedule model once and returns its run directory.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const fs::path d = ws().root / "trained";
    const auto r = run(with_model({"train", "--train", ws().train().string(), "--val", ws().val().string(), "--stages",
                                   kShortSchedule, "--seed", "3", "--out", d.string()}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen writes the requested splits deterministically") {
  auto& w = ws();
  CHECK(count_lines(w.train()) == 24);
  CHECK(count_lines(w.val()) == 8);
  CHECK(count_lines(w.test()) == 10);
  const json meta = json::parse(slurp(w.data / "dataset.json"));
  CHECK(meta["files"]["train"]["scenes"] == 24);

  const fs::path again = w.root / "gen_again";
  REQUIRE(run({"gen", "--out", again.string(), "--seed", "11", "--grid", "16", "16", "--n-people", "2", "5", "--count",
               "24", "--val-count", "8", "--test-count", "10"})
              .code == 0);
  CHECK(slurp(again / "train.jsonl") == slurp(w.train()));
  CHECK(slurp(again / "test.jsonl") == slurp(w.test()));
  CHECK(slurp(again / "train.jsonl") != slurp(again / "test.jsonl"));

  const fs::path other = w.root / "gen_other";
  REQUIRE(run({"gen", "--out", other.string(), "--seed", "12", "--grid", "16", "16", "--count", "24", "--val-count", "0",
               "--test-count", "0"})
              .code == 0);
  CHECK(slurp(other / "train.jsonl") != slurp(w.train()));
  CHECK_FALSE(fs::exists(other / "val.jsonl"));
}

TEST_CASE("usage errors exit with 1") {
  auto& w = ws();
  CHECK(run({"gen", "--out", (w.root / "bad").string(), "--distractor-frac", "1.5"}).code == 1);
  CHECK(run({"train", "--train", (w.root / "missing.jsonl").string()}).code == 1);
  CHECK(run({"train", "--train", w.train().string(), "--stages", "delta:3"}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("alpha-only training leaves the scene branch and fusion at their initial values") {
  auto& w = ws();
  const fs::path dir = w.root / "alpha_only";
  const auto r = run(with_model({"train", "--train", w.train().string(), "--stages", "alpha:8", "--seed", "4", "--out",
                                 dir.string()}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  JointModel trained = load_model(dir / "checkpoint.json");
  JointModel fresh(trained.config, 4);

  auto same = [](const ParamList& a, const ParamList& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->value != b[i]->value) return false;
    }
    return true;
  };
  CHECK(same(trained.branch_params(), fresh.branch_params()));
  CHECK(same(trained.fusion_params(), fresh.fusion_params()));
  CHECK_FALSE(same(trained.pjat_params(), fresh.pjat_params()));
  CHECK(count_lines(dir / "loss.csv") == 9);

  const json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["config"]["stages"] == "alpha:8@0.001");
  CHECK(manifest["datasets"]["train"]["scenes"] == 24);
}

TEST_CASE("eval --per-branch reports three heatmaps and the gaze-ray baseline") {
  auto& w = ws();
  const fs::path dir = w.root / "eval_per_branch";
  const auto r = run({"eval", "--checkpoint", (trained_run() / "checkpoint.json").string(), "--test", w.test().string(),
                      "--val", w.val().string(), "--per-branch", "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json m = json::parse(slurp(dir / "metrics.json"));
  REQUIRE(m["reports"].size() == 4);
  CHECK(m["reports"][0]["label"] == "H_JA");
  CHECK(m["reports"][1]["label"] == "H_AT");
  CHECK(m["reports"][2]["label"] == "H_F");
  CHECK(m["reports"][3]["label"] == "gaze-ray LS");
  CHECK(r.out.find("gaze-ray LS") != std::string::npos);
  CHECK(fs::exists(dir / "manifest.json"));

  const fs::path empty = w.root / "empty.jsonl";
  std::ofstream(empty).close();
  const auto e = run({"eval", "--checkpoint", (trained_run() / "checkpoint.json").string(), "--test", empty.string(),
                      "--out", (w.root / "eval_empty").string()});
  CHECK(e.code == 2);
  CHECK(e.err.find("empty") != std::string::npos);
}

TEST_CASE("infer writes heatmaps, attention rows and the fused argmax") {
  auto& w = ws();
  const fs::path dir = w.root / "infer";
  const auto r = run({"infer", "--checkpoint", (trained_run() / "checkpoint.json").string(), "--scene",
                      w.test().string(), "--index", "3", "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"H_JA.pgm", "H_AT.pgm", "H_F.pgm"}) CHECK(fs::file_size(dir / f) > 16u * 16u);

  const Scene scene = read_dataset(w.test())[3];
  CHECK(count_lines(dir / "attention.csv") == scene.people.size() + 1);

  const JointModel model = load_model(trained_run() / "checkpoint.json");
  const auto out = forward(model, scene);
  const auto p = argmax_point(out.hf);
  const std::string expect = "H_F argmax: x=" + std::to_string(static_cast<int>(p.point[0])) +
                             " y=" + std::to_string(static_cast<int>(p.point[1]));
  CHECK(r.out.find(expect) != std::string::npos);

  CHECK(run({"infer", "--checkpoint", (trained_run() / "checkpoint.json").string(), "--scene", w.test().string(),
             "--index", "99", "--out", dir.string()})
            .code == 1);
}

TEST_CASE("ablate reports one row per cell and reruns bitwise") {
  auto& w = ws();
  auto sweep = [&](const fs::path& out) {
    return run(with_model({"ablate", "--train", w.train().string(), "--val", w.val().string(), "--test",
                           w.test().string(), "--cells", "full,wo_g,wo_alpha,wo_beta", "--variants", "j_ja_only",
                           "--fusions", "weighted", "--stages", kShortSchedule, "--seed", "2", "--out", out.string()}));
  };
  const auto a = sweep(w.root / "ablate_a");
  REQUIRE_MESSAGE(a.code == 0, a.err);
  const json ja = json::parse(slurp(w.root / "ablate_a" / "ablation.json"));
  REQUIRE(ja["cells"].size() == 4);
  CHECK(ja["cells"][0]["reported_branch"] == "H_F");
  CHECK(ja["cells"][2]["cell"] == "wo_alpha");
  CHECK(ja["cells"][2]["reported_branch"] == "H_AT");
  CHECK(ja["cells"][3]["reported_branch"] == "H_JA");
  CHECK(a.out.find("#1 ") != std::string::npos);
  CHECK(a.out.find("#4 ") != std::string::npos);

  const auto b = sweep(w.root / "ablate_b");
  REQUIRE(b.code == 0);
  CHECK(slurp(w.root / "ablate_b" / "ablation.json") == slurp(w.root / "ablate_a" / "ablation.json"));

  CHECK(run({"ablate", "--train", w.train().string(), "--val", w.val().string(), "--test", w.test().string(), "--cells",
             "wo_x", "--out", (w.root / "ablate_bad").string()})
            .code == 1);
}

TEST_CASE("config files supply flags and the command line overrides them") {
  auto& w = ws();
  const fs::path cfg = w.root / "train_config.json";
  std::ofstream(cfg) << json{{"train", {{"stages", "alpha:3"}, {"seed", 5}, {"d_model", 8}, {"head-hidden", 8}}},
                             {"layers", 1}}
                            .dump();
  const fs::path dir = w.root / "from_config";
  const auto r = run({"train", "--config", cfg.string(), "--train", w.train().string(), "--seed", "6", "--out",
                      dir.string(), "--branch-hidden", "4"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json m = json::parse(slurp(dir / "manifest.json"));
  CHECK(m["config"]["seed"] == 6);
  CHECK(m["config"]["stages"] == "alpha:3@0.001");
  CHECK(m["config"]["model"]["pjat"]["d_model"] == 8);
  CHECK(m["config"]["model"]["pjat"]["n_layers"] == 1);

  const fs::path bad = w.root / "bad_config.json";
  std::ofstream(bad) << "{ not json";
  CHECK(run({"train", "--config", bad.string(), "--train", w.train().string()}).code == 1);
}

TEST_CASE("run directories are never reused") {
  auto& w = ws();
  const fs::path dir = trained_run();
  const std::string before = slurp(dir / "manifest.json");
  const auto r = run(with_model({"train", "--train", w.train().string(), "--stages", "alpha:2", "--out", dir.string()}));
  CHECK(r.code == 1);
  CHECK(slurp(dir / "manifest.json") == before);

  const fs::path runs = w.root / "runs";
  const std::vector<std::string> args = with_model(
      {"train", "--train", w.train().string(), "--stages", "alpha:2", "--runs-dir", runs.string()});
  REQUIRE(run(args).code == 0);
  REQUIRE(run(args).code == 0);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(runs)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  REQUIRE(names.size() == 2);
  CHECK(names[0].rfind("train-", 0) == 0);
  CHECK(names[1] == names[0] + "-2");
  CHECK(slurp(runs / names[0] / "checkpoint.json") == slurp(runs / names[1] / "checkpoint.json"));
}

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "pjat/checkpoint.hpp"
#include "pjat/error.hpp"
#include "pjat/trainer.hpp"

using namespace pjat;

namespace {

JointConfig small_joint() {
  JointConfig c;
  c.pjat.d_model = 8;
  c.pjat.n_heads = 2;
  c.pjat.n_layers = 1;
  c.pjat.head_hidden = 8;
  c.pjat.grid_w = 16;
  c.pjat.grid_h = 16;
  c.branch_hidden = 8;
  return c;
}

const std::vector<Scene>& dataset() {
  static const auto scenes = [] {
    SceneGenConfig g;
    g.grid_w = 16;
    g.grid_h = 16;
    g.n_people = {3, 5};
    g.seed = 77;
    return generate_scenes(g, 24);
  }();
  return scenes;
}

std::vector<std::vector<double>> values(const ParamList& ps) {
  std::vector<std::vector<double>> out;
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

TrainConfig short_schedule(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.stages = {{StageTarget::alpha, 30, 1e-3}, {StageTarget::beta, 30, 1e-3}, {StageTarget::gamma, 10, 1e-3},
                {StageTarget::all, 10, 1e-3}};
  return cfg;
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "pjat_test_trainer";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("stage parsing") {
  const auto s = parse_stages("alpha:20,beta:10@0.0005");
  REQUIRE(s.size() == 2);
  CHECK(s[0].target == StageTarget::alpha);
  CHECK(s[0].steps == 20);
  CHECK(s[0].lr == 1e-3);
  CHECK(s[1].lr == 5e-4);
  CHECK(parse_stages("default").size() == 4);
  CHECK(parse_stages("alpha-only").size() == 1);
  CHECK(parse_stages("beta-only")[0].target == StageTarget::beta);
  CHECK(format_stages(parse_stages(format_stages(s))) == format_stages(s));
  for (const char* bad : {"", "alpha", "alpha:x", "delta:10", "alpha:10@", "alpha:5q"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_stages(bad), UsageError);
  }
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate(cfg), UsageError);
}

TEST_CASE("training is bitwise deterministic") {
  JointModel a(small_joint(), 3), b(small_joint(), 3);
  const auto ra = train(dataset(), a, short_schedule(5));
  const auto rb = train(dataset(), b, short_schedule(5));
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].step == static_cast<int>(i) + 1);
    CHECK(ra[i].losses.all == rb[i].losses.all);
  }
  CHECK(values(a.stored_params()) == values(b.stored_params()));

  JointModel c(small_joint(), 3);
  train(dataset(), c, short_schedule(6));
  CHECK(values(c.stored_params()) != values(a.stored_params()));
}

TEST_CASE("each stage updates only its own parameters and leaves gradients zeroed") {
  JointModel init(small_joint(), 4);
  struct Case {
    StageTarget target;
    bool pjat, branch, fusion;
  };
  for (const auto c : {Case{StageTarget::alpha, true, false, false}, Case{StageTarget::beta, false, true, false},
                       Case{StageTarget::gamma, false, false, true}, Case{StageTarget::all, true, true, true}}) {
    CAPTURE(to_string(c.target));
    JointModel m(small_joint(), 4);
    TrainConfig cfg;
    cfg.stages = {{c.target, 15, 1e-3}};
    train(dataset(), m, cfg);
    CHECK((values(m.pjat_params()) != values(init.pjat_params())) == c.pjat);
    CHECK((values(m.branch_params()) != values(init.branch_params())) == c.branch);
    CHECK((values(m.fusion_params()) != values(init.fusion_params())) == c.fusion);
    for (auto* p : m.all_params()) {
      for (double g : p->grad) CHECK(g == 0.0);
    }
  }
}

TEST_CASE("a stage replays identically with or without earlier stages") {
  const Stage alpha{StageTarget::alpha, 20, 1e-3}, beta{StageTarget::beta, 20, 1e-3};
  TrainConfig both;
  both.seed = 9;
  both.stages = {alpha, beta};
  JointModel full(small_joint(), 1);
  std::vector<std::vector<double>> pjat_after_alpha;
  TrainCallbacks cb;
  cb.on_stage_end = [&](std::size_t i, const Stage&, JointModel& m) {
    if (i == 0) pjat_after_alpha = values(m.pjat_params());
  };
  train(dataset(), full, both, cb);

  TrainConfig only_alpha = both, only_beta = both;
  only_alpha.stages = {alpha};
  only_beta.stages = {beta};
  JointModel a(small_joint(), 1), b(small_joint(), 1);
  train(dataset(), a, only_alpha);
  train(dataset(), b, only_beta);
  CHECK(values(a.pjat_params()) == pjat_after_alpha);
  CHECK(values(b.branch_params()) == values(full.branch_params()));
}

TEST_CASE("200 alpha steps reduce L_JA") {
  JointModel m(small_joint(), 2);
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.stages = {{StageTarget::alpha, 200, 1e-3}};
  const auto recs = train(dataset(), m, cfg);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 50; ++i) {
    first += recs[static_cast<std::size_t>(i)].losses.ja / 50.0;
    last += recs[static_cast<std::size_t>(150 + i)].losses.ja / 50.0;
  }
  MESSAGE("mean L_JA steps 1-50: " << first << ", steps 151-200: " << last);
  CHECK(last < first);
}

TEST_CASE("periodic evaluation callback") {
  JointModel m(small_joint(), 2);
  TrainConfig cfg = short_schedule(1);
  cfg.eval_every = 20;
  std::vector<int> seen;
  TrainCallbacks cb;
  cb.on_eval = [&](int step, JointModel&) { seen.push_back(step); };
  train(dataset(), m, cfg, cb);
  CHECK(seen == std::vector<int>{20, 40, 60, 80});
}

TEST_CASE("checkpoints restore bitwise identical models") {
  const auto path = temp_dir() / "ckpt.json";
  JointModel m(small_joint(), 8);
  TrainConfig cfg = short_schedule(2);
  cfg.checkpoint_path = path;
  train(dataset(), m, cfg);
  REQUIRE(std::filesystem::exists(path));
  JointModel back = restore(path);
  CHECK(values(back.stored_params()) == values(m.stored_params()));
  for (const auto& s : dataset()) CHECK(forward(back, s).hf == forward(m, s).hf);

  // training continues identically from a restored model
  TrainConfig more;
  more.seed = 4;
  more.stages = {{StageTarget::all, 5, 1e-3}};
  train(dataset(), m, more);
  train(dataset(), back, more);
  CHECK(values(back.stored_params()) == values(m.stored_params()));
}

TEST_CASE("corrupt and mismatched checkpoints raise typed errors") {
  const auto dir = temp_dir();
  JointModel m(small_joint(), 8);
  checkpoint(m, dir / "good.json");
  std::ifstream in(dir / "good.json");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::ofstream(dir / "truncated.json") << text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(restore(dir / "truncated.json"), CheckpointError);

  auto j = nlohmann::json::parse(text);
  j["version"] = 2;
  std::ofstream(dir / "v2.json") << j.dump();
  CHECK_THROWS_AS(restore(dir / "v2.json"), CheckpointError);

  j = nlohmann::json::parse(text);
  j["params"].erase(0);
  std::ofstream(dir / "missing.json") << j.dump();
  CHECK_THROWS_AS(restore(dir / "missing.json"), CheckpointError);

  CHECK_THROWS_AS(restore(dir / "does_not_exist.json"), CheckpointError);
}

TEST_CASE("non-finite losses raise a numeric error naming step and component") {
  JointModel m(small_joint(), 1);
  m.branch_params()[0]->value[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.stages = {{StageTarget::alpha, 3, 1e-3}, {StageTarget::beta, 3, 1e-3}};
  try {
    train(dataset(), m, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 1 ") != std::string::npos);
    CHECK(msg.find("L_AT") != std::string::npos);
    CHECK(e.exit_code() == 3);
  }
}

TEST_CASE("loss log format") {
  JointModel m(small_joint(), 1);
  TrainConfig cfg;
  cfg.stages = {{StageTarget::gamma, 2, 1e-3}};
  const auto recs = train(dataset(), m, cfg);
  const auto path = temp_dir() / "loss.csv";
  write_loss_log(recs, path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "step,stage,L_JA,L_AT,L_F,L_ALL");
  std::getline(in, line);
  CHECK(line.rfind("1,gamma,", 0) == 0);
  double parsed = std::stod(line.substr(line.rfind(',') + 1));
  CHECK(parsed == recs[0].losses.all);
  CHECK_THROWS_AS(train({}, m, cfg), DataError);
}

#include "pjat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "pjat/error.hpp"

namespace pjat {

std::string to_string(StageTarget t) {
  switch (t) {
    case StageTarget::alpha: return "alpha";
    case StageTarget::beta: return "beta";
    case StageTarget::gamma: return "gamma";
    case StageTarget::all: return "all";
  }
  return "?";
}

StageTarget stage_target_from_string(const std::string& s) {
  for (auto t : {StageTarget::alpha, StageTarget::beta, StageTarget::gamma, StageTarget::all}) {
    if (to_string(t) == s) return t;
  }
  throw UsageError("unknown stage '" + s + "' (expected alpha, beta, gamma, all)");
}

LossTarget loss_target(StageTarget t) {
  switch (t) {
    case StageTarget::alpha: return LossTarget::ja;
    case StageTarget::beta: return LossTarget::at;
    case StageTarget::gamma: return LossTarget::f;
    case StageTarget::all: return LossTarget::all;
  }
  return LossTarget::all;
}

std::vector<Stage> default_schedule() {
  return {{StageTarget::alpha, 2000, 1e-3}, {StageTarget::beta, 2000, 1e-3}, {StageTarget::gamma, 500, 1e-3}, {StageTarget::all, 1000, 1e-3}};
}

std::vector<Stage> parse_stages(const std::string& text) {
  const auto defaults = default_schedule();
  if (text == "default") return defaults;
  if (text == "alpha-only") return {defaults[0]};
  if (text == "beta-only") return {defaults[1]};
  if (text == "gamma-only") return {defaults[2]};

  std::vector<Stage> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError("stage '" + item + "' must look like name:steps[@lr]");
    Stage st;
    st.target = stage_target_from_string(item.substr(0, colon));
    std::string rest = item.substr(colon + 1);
    const auto at = rest.find('@');
    try {
      std::size_t used = 0;
      st.steps = std::stoi(rest.substr(0, at), &used);
      if (used != rest.substr(0, at).size()) throw std::invalid_argument("steps");
      if (at != std::string::npos) {
        st.lr = std::stod(rest.substr(at + 1), &used);
        if (used != rest.size() - at - 1) throw std::invalid_argument("lr");
      }
    } catch (const std::logic_error&) {
      throw UsageError("cannot parse stage '" + item + "'");
    }
    out.push_back(st);
  }
  if (out.empty()) throw UsageError("empty stage list");
  return out;
}

std::string format_stages(const std::vector<Stage>& stages) {
  std::string out;
  char buf[64];
  for (const auto& s : stages) {
    std::snprintf(buf, sizeof buf, "%s:%d@%g", to_string(s.target).c_str(), s.steps, s.lr);
    if (!out.empty()) out += ',';
    out += buf;
  }
  return out;
}

void validate(const TrainConfig& cfg) {
  if (cfg.stages.empty()) throw UsageError("at least one training stage is required");
  for (const auto& s : cfg.stages) {
    if (s.steps <= 0) throw UsageError("stage steps must be positive");
    if (!(s.lr > 0.0)) throw UsageError("stage learning rate must be positive");
  }
  if (cfg.batch_size < 1) throw UsageError("batch size must be >= 1");
  if (cfg.eval_every < 0) throw UsageError("eval_every must be >= 0");
}

namespace {

ParamList stage_params(JointModel& model, StageTarget t) {
  switch (t) {
    case StageTarget::alpha: return model.pjat_params();
    case StageTarget::beta: return model.branch_params();
    case StageTarget::gamma: return model.fusion_params();
    case StageTarget::all: return model.all_params();
  }
  return {};
}

void check_finite(const Losses& l, int step, StageTarget stage) {
  const std::pair<const char*, double> parts[] = {{"L_JA", l.ja}, {"L_AT", l.at}, {"L_F", l.f}, {"L_ALL", l.all}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) {
      throw NumericError("step " + std::to_string(step) + " (stage " + to_string(stage) + "): non-finite " + name);
    }
  }
}

}  // namespace

std::vector<LossRecord> run_stage(const std::vector<Scene>& dataset, JointModel& model, const Stage& stage,
                                  const TrainConfig& cfg, int first_step, const TrainCallbacks& cb) {
  if (dataset.empty()) throw DataError("training dataset is empty");
  if (stage.steps <= 0 || !(stage.lr > 0.0)) throw UsageError("stage needs steps > 0 and lr > 0");
  const ParamList params = stage_params(model, stage.target);
  zero_grads(model.all_params());
  Adam opt(params, AdamConfig{.learning_rate = stage.lr});

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(stage.target) + 1);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  const LossTarget target = loss_target(stage.target);
  const double scale = 1.0 / cfg.batch_size;
  std::vector<LossRecord> records;
  records.reserve(static_cast<std::size_t>(stage.steps));
  for (int s = 0; s < stage.steps; ++s) {
    const int step = first_step + s;
    Losses mean;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Losses l = total_loss(model, dataset[order[cursor++]], target, scale);
      check_finite(l, step, stage.target);
      mean.ja += l.ja * scale;
      mean.at += l.at * scale;
      mean.f += l.f * scale;
      mean.all += l.all * scale;
    }
    opt.step();
    records.push_back({step, stage.target, mean});
    if (cb.on_eval && cfg.eval_every > 0 && step % cfg.eval_every == 0) cb.on_eval(step, model);
  }
  return records;
}

std::vector<LossRecord> train(const std::vector<Scene>& dataset, JointModel& model, const TrainConfig& cfg,
                              const TrainCallbacks& cb) {
  validate(cfg);
  std::vector<LossRecord> all;
  int step = 1;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    auto recs = run_stage(dataset, model, cfg.stages[i], cfg, step, cb);
    step += cfg.stages[i].steps;
    all.insert(all.end(), recs.begin(), recs.end());
    if (cb.on_stage_end) cb.on_stage_end(i, cfg.stages[i], model);
  }
  if (!cfg.checkpoint_path.empty()) checkpoint(model, cfg.checkpoint_path);
  return all;
}

void write_loss_log(const std::vector<LossRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "step,stage,L_JA,L_AT,L_F,L_ALL\n";
  char buf[192];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%.17g,%.17g\n", r.step, to_string(r.stage).c_str(), r.losses.ja,
                  r.losses.at, r.losses.f, r.losses.all);
    out << buf;
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace pjat

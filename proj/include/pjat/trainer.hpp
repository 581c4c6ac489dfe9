#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pjat/fusion.hpp"
#include "pjat/scene.hpp"

namespace pjat {

/// alpha: PJAT with L_JA, beta: scene branch with L_AT, gamma: fusion with L_F, all: everything with L_ALL.
enum class StageTarget { alpha, beta, gamma, all };

std::string to_string(StageTarget t);
StageTarget stage_target_from_string(const std::string& s);
LossTarget loss_target(StageTarget t);

struct Stage {
  StageTarget target = StageTarget::alpha;
  int steps = 0;
  double lr = 1e-3;
};

/// 2000 alpha, 2000 beta, 500 gamma, 1000 all at lr 1e-3.
std::vector<Stage> default_schedule();

/// "alpha:2000,beta:2000@0.0005,..." (lr optional, default 1e-3), or a preset:
/// "default", "alpha-only", "beta-only", "gamma-only" (each at default step counts).
std::vector<Stage> parse_stages(const std::string& text);
std::string format_stages(const std::vector<Stage>& stages);

struct TrainConfig {
  std::vector<Stage> stages = default_schedule();
  int batch_size = 1;
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0 disables the periodic callback
  std::filesystem::path checkpoint_path;
};

void validate(const TrainConfig& cfg);

struct LossRecord {
  int step = 0;  // 1-based, global across stages
  StageTarget stage = StageTarget::alpha;
  Losses losses;
};

struct TrainCallbacks {
  std::function<void(int step, JointModel&)> on_eval;
  std::function<void(std::size_t stage_index, const Stage&, JointModel&)> on_stage_end;
};

/// Runs one stage. Scene order is a seeded shuffle that depends on the
/// seed and the stage target only, so a stage replays identically whether or
/// not other stages ran before it.
std::vector<LossRecord> run_stage(const std::vector<Scene>& dataset, JointModel& model, const Stage& stage,
                                  const TrainConfig& cfg, int first_step = 1, const TrainCallbacks& cb = {});

/// All stages in order; writes the checkpoint when a path is configured.
std::vector<LossRecord> train(const std::vector<Scene>& dataset, JointModel& model, const TrainConfig& cfg,
                              const TrainCallbacks& cb = {});

/// CSV "step,stage,L_JA,L_AT,L_F,L_ALL" with round-trip precision.
void write_loss_log(const std::vector<LossRecord>& records, const std::filesystem::path& path);

inline void checkpoint(const JointModel& model, const std::filesystem::path& path) { save_model(model, path); }
inline JointModel restore(const std::filesystem::path& path) { return load_model(path); }

}  // namespace pjat

#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "marl/algos.hpp"
#include "marl/dataflow.hpp"
#include "marl/envs.hpp"
#include "marl/mapping.hpp"

namespace marl {

struct TaskConfig {
  std::string env = "matrix";
  // Passed straight to the env factory; keys are env-specific.
  nlohmann::json env_config = nlohmann::json::object();
};

struct TrainingConfig {
  long total_steps = 20000;       // env steps across all agents' world
  int workers = 1;                // parallel episode collectors
  int episodes_per_iteration = 1;
  int eval_interval = 50;         // iterations between greedy evaluations
  int eval_episodes = 8;
  std::vector<uint64_t> seeds = {1};
  std::string sharing = "full";   // full | group | none | custom
  std::map<std::string, std::string> policy_table;  // sharing == custom
  std::string out_dir = "runs/latest";
  bool dump_transitions = false;  // per-iteration jsonl of postprocessed data

  void validate() const;
  SharingMode sharing_mode() const;
};

// The four config sections. Defaults are the documented baseline; files
// and CLI flags override per key (defaults < files, in order < CLI).
struct RunConfig {
  TaskConfig task;
  AlgoConfig algorithm;
  ModelConfig model;
  TrainingConfig training;

  void validate() const;
};

RunConfig default_config();

// Dotted section.key paths with raw string values, e.g.
// {"algorithm.gamma", "0.8"} or {"task.env", "spread_grid"}.
using CliOverrides = std::vector<std::pair<std::string, std::string>>;

nlohmann::json to_json(const RunConfig& cfg);
// Rejects unknown keys (with a nearest-known suggestion) and wrong types.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::vector<std::string>& paths,
                      const CliOverrides& overrides);

// Writes the fully-resolved config as <out_dir>/config.json and returns
// the path. Training reruns from this file are byte-reproducible.
std::string record_config(const RunConfig& cfg, const std::string& out_dir);

struct MetricsRow {
  long iteration = 0;
  long env_steps = 0;
  std::map<std::string, double> group_reward;  // mean episode reward per group
  double reward_sum = 0.0;                     // sum of the group means
  std::map<std::string, double> losses;
  double wall_seconds = 0.0;  // written to timing.csv, not metrics.csv
};

struct EvalRow {
  long iteration = 0;
  long env_steps = 0;
  std::map<std::string, double> group_reward;
  double reward_sum = 0.0;
};

struct EvalResult {
  std::map<std::string, double> group_means;
  double sum = 0.0;
};

// Greedy rollouts on fresh env instances; deterministic per seed and
// side-effect free (parameters untouched).
EvalResult evaluate(const PolicySet& policies, const EnvFactory& factory,
                    int n_episodes, uint64_t seed);

// One training run: one seed, one output directory (<out>/seed_<S>).
// run() drives iterations of {refresh targets -> collect (parallel
// workers, episode-indexed seeds) -> postprocess -> replay/batch ->
// update -> metrics}, with greedy evaluations and checkpoints every
// eval_interval iterations and at the end.
class Trainer {
 public:
  Trainer(RunConfig cfg, uint64_t seed);
  ~Trainer();

  void run();

  // Single pieces, exposed for tests; run() composes them.
  void run_iteration();
  EvalRow evaluate_now();
  bool finished() const { return env_steps_ >= cfg_.training.total_steps; }

  long env_steps() const { return env_steps_; }
  long iteration() const { return iteration_; }
  double epsilon() const;  // current point on the exploration schedule
  PolicySet& policies() { return *policies_; }
  const PolicySet& policies() const { return *policies_; }
  const RunConfig& config() const { return cfg_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  const std::vector<EvalRow>& evals() const { return evals_; }
  std::string run_dir() const;

  // Test hook: sees every episode's buffers right after postprocessing.
  std::function<void(const Buffers&)> on_postprocessed;

 private:
  void write_outputs() const;
  void dump_iteration_transitions(const std::vector<CollectResult>& episodes,
                                  std::ostream& os) const;

  RunConfig cfg_;
  uint64_t seed_;
  EnvFactory factory_;
  EnvSpec spec_;
  PolicyMap map_;
  std::unique_ptr<PolicySet> policies_;
  EpisodeReplay replay_;
  Rng replay_rng_;
  uint64_t episode_seed_base_ = 0;
  long episode_counter_ = 0;
  long env_steps_ = 0;
  long iteration_ = 0;
  long eps_decay_steps_ = 0;
  std::unique_ptr<std::ofstream> dump_os_;  // open iff dump_transitions
  std::vector<MetricsRow> metrics_;
  std::vector<EvalRow> evals_;
};

// Records the config, then trains every seed in cfg.training.seeds.
void train(const RunConfig& cfg);

void save_checkpoint(const PolicySet& policies, const RunConfig& cfg,
                     const std::string& path);

struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<PolicySet> policies;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Reads per-seed metrics CSVs of one run and writes <name>.svg (mean
// line per group + pointwise min/max band across seeds) plus
// <name>_summary.txt with the final means. Throws ConfigError when the
// input list is empty or a file has no rows.
void emit_curves(const std::vector<std::string>& metrics_files,
                 const std::string& out_dir, const std::string& name);

}  // namespace marl

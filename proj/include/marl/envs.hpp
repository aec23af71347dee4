#pragma once

#include <array>
#include <functional>
#include <memory>

#include "json.hpp"
#include "marl/interface.hpp"

namespace marl {

// Payoff-matrix game. All agents act simultaneously each step for
// `horizon` steps. Observations are a constant vector so the game is a
// pure (joint-)bandit; groups and per-group payoff tensors cover all
// four task modes:
//   cooperative    one group, one payoff tensor, team reward broadcast
//   collaborative  per-agent groups, per-agent payoffs with aligned optima
//   competitive    per-agent groups, payoffs summing to a constant
//   mixed          team groups, team payoffs broadcast within each group
struct MatrixGameConfig {
  int n_agents = 2;
  int n_actions = 2;
  TaskMode mode = TaskMode::cooperative;
  int horizon = 10;
  bool masked = false;  // alternating per-step legality schedule
  // One payoff tensor per group label (sorted label order), each of
  // length n_actions^n_agents, indexed by joint action with agent 0 as
  // the most significant digit.
  std::map<std::string, Vec> payoffs;
  std::map<AgentId, std::string> groups;  // empty = derived from mode
  // When set, every joint action's group payoffs must sum to this value.
  std::optional<double> constant_sum_check;

  void validate() const;

  double max_abs_payoff() const;
  double max_payoff(const std::string& group) const;
};

// Cooperative navigation on a small grid: agents move to cover
// landmarks, team reward is the negated sum over landmarks of the
// distance to the closest agent.
struct SpreadGridConfig {
  int grid_size = 5;
  int n_agents = 2;
  int n_landmarks = 2;
  int horizon = 25;

  void validate() const;
};

// Strictly alternating turn game: agents act one at a time in fixed
// order; whenever a full round of actions is in, the team earns a
// matching bonus if everyone picked the same action.
struct TurnGameConfig {
  int n_agents = 2;
  int n_actions = 2;
  int n_rounds = 4;
  double match_bonus = 1.0;

  void validate() const;
};

// The deterministic legality schedule used by mask-bearing built-ins:
// even step indices leave everything legal, odd ones forbid action 0.
Mask masked_action_set(int step_index, int n_actions);

// -sum_l min_a manhattan(agent_a, landmark_l); 0 iff every landmark covered.
double spread_grid_reward(const std::vector<std::array<int, 2>>& positions,
                          const std::vector<std::array<int, 2>>& landmarks);

std::unique_ptr<Env> make_matrix_game(const MatrixGameConfig& cfg);
std::unique_ptr<Env> make_spread_grid(const SpreadGridConfig& cfg);
std::unique_ptr<Env> make_turn_game(const TurnGameConfig& cfg);

// Canned matrix scenarios used by tests and the config defaults.
MatrixGameConfig coordination_matrix_config(double payoff_scale = 1.0);
MatrixGameConfig matching_pennies_config();
MatrixGameConfig mixed_2v2_config();
MatrixGameConfig collaborative_matrix_config();

std::vector<std::string> env_registry_names();

// Builds an environment from its registry name and the env_config
// section of a run config. Unknown name raises RegistryError listing
// valid names; unknown or ill-typed fields raise ConfigError. Config
// keys are documented per built-in in the README.
std::unique_ptr<Env> make_env(const std::string& name, const nlohmann::json& config);

using EnvFactory = std::function<std::unique_ptr<Env>()>;

// Factory form of make_env: each call builds an independent instance,
// which is what parallel collectors need.
EnvFactory make_env_factory(const std::string& name, const nlohmann::json& config);

}  // namespace marl

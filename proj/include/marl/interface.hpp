#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "marl/common.hpp"

namespace marl {

// Agent ids are short string tokens, unique within an environment and
// stable across resets. Maps keyed by AgentId iterate in sorted order,
// which is the fixed order used wherever per-agent data is concatenated.
using AgentId = std::string;

enum class TaskMode { cooperative, collaborative, competitive, mixed };
enum class Interaction { synchronous, asynchronous };

std::string to_string(TaskMode m);
std::string to_string(Interaction i);
TaskMode task_mode_from_string(const std::string& s);

struct ActionSpace {
  enum class Kind { discrete, box };
  Kind kind = Kind::discrete;
  int n = 0;        // discrete: number of actions
  Vec low, high;    // box: per-dimension bounds
};

// One agent's view of the environment at a step.
struct ObservationBundle {
  Vec observation;
  std::optional<Mask> action_mask;   // 1 = legal; at least one entry set
  std::optional<Vec> global_state;   // identical across agents at a step
};

// What the environment hands back from reset/step. `observations` holds
// exactly the agents due to act next; `rewards` holds whoever earned
// reward this step (not necessarily the same set under async stepping).
struct StepOutput {
  std::map<AgentId, ObservationBundle> observations;
  std::map<AgentId, double> rewards;
  bool all_done = false;
  std::map<AgentId, std::map<std::string, std::string>> infos;
};

struct EnvSpec {
  std::vector<AgentId> agents;
  int obs_dim = 0;
  int state_dim = 0;  // 0 = no global state
  ActionSpace action_space;
  TaskMode task_mode = TaskMode::cooperative;
  Interaction interaction = Interaction::synchronous;
  std::map<AgentId, std::string> groups;
  int episode_limit = 0;

  // Throws ConfigError on a broken spec (empty ids, bad dims, group
  // labels inconsistent with the task mode).
  void validate() const;

  int agent_index(const AgentId& id) const;
  std::vector<std::string> group_labels() const;  // distinct, sorted
};

// Unified environment contract. Instances are single-threaded state
// machines; they may be moved between threads but never shared.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;

  // Starts a fresh episode. All per-episode randomness flows from `seed`.
  virtual StepOutput reset(uint64_t seed) = 0;

  // `actions` keys must equal the agents due to act. Masked-out actions
  // raise IllegalActionError; a wrong key set raises ProtocolError.
  virtual StepOutput step(const std::map<AgentId, int>& actions) = 0;
};

// Team reward copied once per agent, the cooperative reward transform.
std::map<AgentId, double> broadcast_team_reward(double scalar,
                                                const std::vector<AgentId>& agents);

struct ConformanceViolation {
  int episode = 0;
  int step = 0;  // -1 for episode-level findings
  std::string what;
};

struct ConformanceReport {
  int episodes_run = 0;
  long steps_run = 0;
  std::vector<ConformanceViolation> violations;
  bool pass() const { return violations.empty(); }
  std::string to_text() const;
};

// Runs random-legal-action episodes and reports every contract
// violation it can observe: dimension mismatches, empty masks,
// inconsistent global state, reward-structure breaks, episode_limit
// overruns, termination protocol breaks. Violations are report entries,
// never exceptions.
ConformanceReport check_conformance(Env& env, int n_episodes, uint64_t seed);

}  // namespace marl

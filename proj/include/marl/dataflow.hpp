#pragma once

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "marl/interface.hpp"
#include "marl/mapping.hpp"

namespace marl {

// One agent action point plus everything later phases hang off it.
// Fields in the "injected" block are absent until the category's
// postprocess op fills them; that presence pattern IS the category
// contract and tests assert it.
struct Transition {
  AgentId agent_id;
  Vec obs;
  Mask action_mask;       // empty when the env declares no mask
  Vec global_state;       // empty when state_dim == 0
  int action = -1;
  double reward = 0.0;    // accumulated up to the next action point (async)
  bool done = false;      // true on the agent's final action of the episode
  int env_step = 0;       // environment step index; the alignment key
  Vec next_obs;           // observation at the agent's next action point; empty at terminal
  Mask next_action_mask;
  Vec next_global_state;

  // Injected at postprocessing, per category.
  std::optional<Vec> shared_obs;                // observed data of the whole team
  std::optional<std::vector<int>> shared_actions;  // other agents' actions, agent order minus self
  std::optional<Vec> peer_values;               // every agent's Q/V prediction, agent order
  std::optional<Vec> peer_target_values;        // bootstrap (target-net legal-max) per agent
  std::optional<Vec> next_shared_obs;           // shared_obs at the next step; for target mixing
  std::optional<double> centralized_value;      // critic output cache
  std::optional<double> logp_old;               // sampling-time log-prob of `action`
  std::optional<double> return_;
  std::optional<double> advantage;
};

struct AgentBuffer {
  AgentId agent_id;
  std::vector<Transition> transitions;
  std::vector<size_t> episode_starts;  // index of each episode's first transition

  void append_episode(std::vector<Transition> episode);
  // Half-open [begin, end) index ranges, one per episode.
  std::vector<std::pair<size_t, size_t>> episodes() const;
};

using Buffers = std::map<AgentId, AgentBuffer>;

// Chooses an action for one agent from its observation bundle. Collection
// is policy-agnostic; the algorithm layer wraps its nets into one of these.
using ActionSelector =
    std::function<int(const AgentId&, const ObservationBundle&, Rng&)>;

struct CollectResult {
  Buffers buffers;                          // one episode per agent
  std::map<AgentId, double> agent_returns;  // undiscounted episode return
  int env_steps = 0;
};

// Runs one full episode. All randomness (env + action sampling) flows
// from `episode_seed`, so pre-assigning seeds per episode index makes
// parallel collection order-independent. Async rewards are credited to
// the earning agent's most recent transition; reward arriving before an
// agent's first action is held and folded into that first transition.
CollectResult collect_episode(Env& env, const ActionSelector& select,
                              uint64_t episode_seed);

// Estimators over a single transition, evaluated with sampling-time
// parameters during postprocessing (never re-evaluated across epochs).
using TransitionScalarFn =
    std::function<double(const AgentId&, const Transition&)>;

struct OwnEstimators {
  TransitionScalarFn value;  // V(own obs)
  TransitionScalarFn logp;   // log pi(action | own obs)
};

struct CentralEstimators {
  TransitionScalarFn central_value;  // reads the injected shared fields
  TransitionScalarFn logp;
};

struct VdEstimators {
  TransitionScalarFn value;       // chosen-action Q, or V for critic mixing
  TransitionScalarFn next_value;  // target-net legal-max at next obs; unused if null
};

// Category (a): no cross-agent sharing. With estimators, also computes
// GAE returns/advantages and logp from the agent's own data; pass
// nullptr for pure Q-learners, which need no precomputation.
void postprocess_independent(Buffers& buffers, const OwnEstimators* est,
                             double gamma, double lambda);

// Category (b): injects shared_obs (global state, else fixed-order
// concatenation of all observations), shared_actions (others' actions),
// and the cached critic value; then GAE on the centralized values.
// Async buffers align by last-known data at each env step.
void postprocess_centralized_critic(Buffers& buffers, const EnvSpec& spec,
                                    const CentralEstimators& est, double gamma,
                                    double lambda);

// Category (c): injects peer_values (and bootstrap targets when
// est.next_value is set) for every agent, plus shared_obs/next_shared_obs
// iff the mixer conditions on state. When `gamma_for_returns` is set,
// also fills return_ with the discounted team reward-to-go (VDA2C).
// Cooperative synchronous tasks only.
void postprocess_value_decomposition(Buffers& buffers, const EnvSpec& spec,
                                     const VdEstimators& est,
                                     bool mixer_needs_state,
                                     std::optional<double> gamma_for_returns);

struct GaeResult {
  Vec advantages;
  Vec returns;  // advantage + value
};

// values has length T+1: per-step value estimates plus the bootstrap
// value after the final reward (0 when the episode terminated).
GaeResult compute_gae(const Vec& rewards, const Vec& values, double gamma,
                      double lambda);

struct SampleBatch {
  // PolicyId -> transitions of all bound agents: agents in declared
  // order, time order within an agent. Pointers into the source buffers.
  std::map<PolicyId, std::vector<std::pair<AgentId, const Transition*>>> groups;
  size_t total = 0;
};

SampleBatch build_sample_batch(const Buffers& buffers, const PolicyMap& map);

// FIFO replay holding complete episodes; capacity counts stored
// transitions and evicts the oldest whole episodes.
class EpisodeReplay {
 public:
  explicit EpisodeReplay(size_t capacity_transitions = 5000);

  void add(Buffers episode);
  size_t n_episodes() const { return episodes_.size(); }
  size_t total_transitions() const { return total_; }

  // Uniform over every stored (agent, transition).
  std::vector<std::pair<AgentId, const Transition*>> sample_transitions(
      size_t n, Rng& rng) const;

  // Uniform over stored env steps; each draw returns the aligned
  // transitions of all agents at that step. Requires sync episodes.
  std::vector<std::map<AgentId, const Transition*>> sample_steps(
      size_t n, Rng& rng) const;

 private:
  size_t capacity_;
  size_t total_ = 0;
  std::vector<Buffers> episodes_;  // front = oldest
};

// One line-delimited JSON record per transition (the --dump-transitions
// debugging format).
void dump_transitions(std::ostream& os, const Buffers& buffers);

// Postprocess-op invocation log, for asserting category dispatch.
namespace instrument {
void note_postprocess(const std::string& kind);
std::vector<std::string> drain_postprocess_log();
}  // namespace instrument

}  // namespace marl

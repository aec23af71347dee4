#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "marl/dataflow.hpp"
#include "marl/mixer.hpp"

namespace marl {

enum class AlgoName { iql, ia2c, ippo, maa2c, mappo, coma, vdn, qmix, vda2c };
enum class AlgoCategory { independent, centralized_critic, value_decomposition };

std::string to_string(AlgoName a);
std::string to_string(AlgoCategory c);
AlgoName algo_from_string(const std::string& s);
AlgoCategory category_of(AlgoName a);

// Training hyper-parameters. Field defaults are the repo defaults; every
// one is overridable from the config file and the CLI.
struct AlgoConfig {
  AlgoName algo = AlgoName::iql;
  double gamma = 0.99;
  double lr_actor = 1e-3;   // also the Q-net rate for the Q family
  double lr_critic = 1e-3;
  double lr_mixer = 1e-3;
  double ppo_clip = 0.2;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double eps_start = 1.0;
  double eps_end = 0.05;
  long eps_decay_steps = 0;        // 0: resolved to half the step budget
  int target_update_period = 200;  // env steps between hard target copies
  int batch_size = 64;             // replay draw per update (Q family)
  int ppo_epochs = 4;
  int mixer_hidden = 32;
  int replay_capacity = 5000;      // transitions
  bool advantage_norm = true;      // PPO variants only
  bool cc_use_own_obs = false;     // critic probe: own obs instead of shared
  std::string mixer;               // "", "sum", "monotonic"
  std::string optimizer = "adam";  // "adam" or "sgd"

  void validate() const;
  OptimizerKind optimizer_kind() const;
  // vdn is pinned to sum, qmix to monotonic; vda2c defaults to monotonic.
  MixerKind mixer_kind() const;
};

struct ModelConfig {
  std::vector<int> hidden = {64, 64};
  std::string activation = "tanh";

  void validate() const;
  Activation activation_kind() const;
};

// ---------------------------------------------------------------------------
// Scalar building blocks. An empty mask means every action is legal.

int masked_argmax(std::span<const double> q, const Mask& mask);
double masked_max(std::span<const double> q, const Mask& mask);
Vec masked_softmax(std::span<const double> logits, const Mask& mask);
int epsilon_greedy(std::span<const double> q, const Mask& mask, double eps,
                   Rng& rng);
// Inverse-CDF draw from a probability vector (illegal entries are 0).
int sample_categorical(const Vec& probs, Rng& rng);
// -sum p log p over the nonzero entries.
double entropy_of(const Vec& probs);

double q_target(double reward, bool done, double gamma,
                double next_q_legal_max);
double pg_actor_loss(const Vec& logp_chosen, const Vec& advantages,
                     const Vec& entropy, double entropy_coef);
double ppo_surrogate(double ratio, double advantage, double eps);
double coma_advantage(const Vec& q_all_actions, const Vec& policy_probs,
                      int chosen);
double centralized_critic_loss(const Vec& values, const Vec& returns);

double vdn_mix(const Vec& per_agent_q_chosen);
double qmix_mix(const Vec& per_agent_q_chosen, const Vec& state,
                const Mixer& mixer);
double vda2c_mixed_value(const Vec& per_agent_v, const Vec& state,
                         const Mixer& mixer);

// One tabular Q-learning backup; returns the TD error.
double tabular_q_update(Tabular& q, const std::string& key, int action,
                        double reward, bool done, const std::string& next_key,
                        const Mask& next_mask, double gamma, double lr);

// ---------------------------------------------------------------------------

struct PolicyNets {
  PolicyId id;
  Mlp actor;         // Q net for {iql, vdn, qmix}, logits net otherwise
  Mlp target_actor;  // Q family only
  Mlp critic;        // algos with a critic
  OptimizerState opt_actor;
  OptimizerState opt_critic;
  bool multi_agent = false;  // bound to more than one agent
};

struct UpdateResult {
  // Fixed keys: loss_q, loss_actor, loss_critic, loss_mixer, entropy.
  std::map<std::string, double> losses;
};

// All trainable state of one run: per-PolicyId nets, the mixer for the
// value-decomposition family, and the update rules of all nine
// algorithms. Updates mutate parameters; everything else is const, so
// parallel collectors can read a PolicySet freely between updates.
class PolicySet {
 public:
  PolicySet(const EnvSpec& spec, const PolicyMap& map, const AlgoConfig& acfg,
            const ModelConfig& mcfg, uint64_t master_seed);

  const EnvSpec& spec() const { return spec_; }
  const PolicyMap& map() const { return map_; }
  const AlgoConfig& config() const { return acfg_; }
  AlgoCategory category() const { return category_of(acfg_.algo); }
  const std::vector<PolicyId>& policy_ids() const { return map_.policy_ids; }
  const PolicyNets& nets(const PolicyId& id) const;
  const Mixer& mixer() const { return mixer_; }

  // Per-agent action distribution on one bundle (PG: masked softmax of
  // the logits; Q family: greedy one-hot with epsilon spread over legal
  // actions). Used by selectors, evaluation, and the sharing tests.
  Vec action_distribution(const AgentId& agent, const ObservationBundle& bundle,
                          double epsilon) const;

  ActionSelector make_selector(double epsilon) const;  // behavior policy
  ActionSelector make_greedy_selector() const;         // evaluation policy

  // Category-dispatched postprocessing of one episode's buffers, using
  // sampling-time parameters.
  void postprocess(Buffers& buffers) const;

  // Update entry points. Each aggregates gradients per PolicyId and
  // applies one optimizer step per policy (and mixer, where present).
  UpdateResult update_q(
      const std::vector<std::pair<AgentId, const Transition*>>& sample);
  UpdateResult update_vd_q(
      const std::vector<std::map<AgentId, const Transition*>>& steps);
  UpdateResult update_pg(const SampleBatch& batch);

  // Dispatches to the right update for the configured algorithm.
  UpdateResult update(const SampleBatch& on_policy_batch,
                      const EpisodeReplay& replay, Rng& sample_rng);

  // Hard-copies target nets (and target mixer) when `env_steps` has
  // advanced past the refresh period.
  void maybe_refresh_targets(long env_steps);

  uint64_t checksum() const;  // over every parameter tensor
  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  Vec actor_out(const PolicyId& pid, std::span<const double> obs) const;
  Vec cc_input(const PolicyId& pid, const AgentId& agent,
               const Transition& t) const;
  Vec own_critic_input(const Transition& t) const;
  double own_value(const PolicyId& pid, const Transition& t) const;
  double cc_value(const PolicyId& pid, const AgentId& agent,
                  const Transition& t) const;
  double logp_of(const PolicyId& pid, const Transition& t) const;
  double target_next_max(const PolicyId& pid, const Transition& t) const;

  EnvSpec spec_;
  PolicyMap map_;
  AlgoConfig acfg_;
  ModelConfig mcfg_;
  std::map<PolicyId, PolicyNets> nets_;
  Mixer mixer_, target_mixer_;
  MixerOptimizer opt_mixer_;
  long last_target_refresh_ = 0;
};

}  // namespace marl

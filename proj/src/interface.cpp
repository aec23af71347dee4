#include "marl/interface.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace marl {

std::string to_string(TaskMode m) {
  switch (m) {
    case TaskMode::cooperative: return "cooperative";
    case TaskMode::collaborative: return "collaborative";
    case TaskMode::competitive: return "competitive";
    case TaskMode::mixed: return "mixed";
  }
  return "?";
}

std::string to_string(Interaction i) {
  return i == Interaction::synchronous ? "synchronous" : "asynchronous";
}

TaskMode task_mode_from_string(const std::string& s) {
  if (s == "cooperative") return TaskMode::cooperative;
  if (s == "collaborative") return TaskMode::collaborative;
  if (s == "competitive") return TaskMode::competitive;
  if (s == "mixed") return TaskMode::mixed;
  throw ConfigError("unknown task mode '" + s + "'");
}

void EnvSpec::validate() const {
  if (agents.empty()) throw ConfigError("EnvSpec: agent list is empty");
  std::set<AgentId> seen;
  for (const auto& a : agents) {
    if (a.empty()) throw ConfigError("EnvSpec: empty agent id");
    if (!seen.insert(a).second)
      throw ConfigError("EnvSpec: duplicate agent id '" + a + "'");
  }
  if (obs_dim <= 0) throw ConfigError("EnvSpec: obs_dim must be positive");
  if (state_dim < 0) throw ConfigError("EnvSpec: state_dim must be >= 0");
  if (episode_limit <= 0)
    throw ConfigError("EnvSpec: episode_limit must be positive");
  if (action_space.kind == ActionSpace::Kind::discrete && action_space.n <= 0)
    throw ConfigError("EnvSpec: discrete action space needs n > 0");
  if (groups.size() != agents.size())
    throw ConfigError("EnvSpec: groups must cover every agent");
  for (const auto& a : agents)
    if (!groups.count(a))
      throw ConfigError("EnvSpec: agent '" + a + "' has no group label");
  const auto labels = group_labels();
  if (task_mode == TaskMode::cooperative && labels.size() != 1)
    throw ConfigError("EnvSpec: cooperative mode requires exactly 1 group label, got " +
                      std::to_string(labels.size()));
  if (task_mode == TaskMode::mixed && labels.size() < 2)
    throw ConfigError("EnvSpec: mixed mode requires >= 2 distinct group labels");
}

int EnvSpec::agent_index(const AgentId& id) const {
  for (size_t i = 0; i < agents.size(); ++i)
    if (agents[i] == id) return static_cast<int>(i);
  throw ProtocolError("unknown agent id '" + id + "'");
}

std::vector<std::string> EnvSpec::group_labels() const {
  std::set<std::string> s;
  for (const auto& [agent, label] : groups) s.insert(label);
  return {s.begin(), s.end()};
}

std::map<AgentId, double> broadcast_team_reward(double scalar,
                                                const std::vector<AgentId>& agents) {
  if (agents.empty())
    throw ProtocolError("broadcast_team_reward: empty agent list");
  std::map<AgentId, double> out;
  for (const auto& a : agents) out[a] = scalar;
  return out;
}

std::string ConformanceReport::to_text() const {
  std::ostringstream os;
  os << "conformance: " << episodes_run << " episodes, " << steps_run
     << " steps, " << violations.size() << " violation(s)\n";
  for (const auto& v : violations) {
    os << "  episode " << v.episode;
    if (v.step >= 0) os << " step " << v.step;
    os << ": " << v.what << "\n";
  }
  os << (pass() ? "PASS" : "FAIL") << "\n";
  return os.str();
}

namespace {

void check_bundle(const EnvSpec& spec, const AgentId& agent,
                  const ObservationBundle& b, int episode, int step,
                  std::vector<ConformanceViolation>& out) {
  if (static_cast<int>(b.observation.size()) != spec.obs_dim)
    out.push_back({episode, step,
                   "obs_dim mismatch for '" + agent + "': got " +
                       std::to_string(b.observation.size()) + ", spec says " +
                       std::to_string(spec.obs_dim)});
  for (double v : b.observation)
    if (!std::isfinite(v)) {
      out.push_back({episode, step, "non-finite observation entry for '" + agent + "'"});
      break;
    }
  if (b.action_mask) {
    if (spec.action_space.kind != ActionSpace::Kind::discrete)
      out.push_back({episode, step, "action_mask on non-discrete space"});
    else if (static_cast<int>(b.action_mask->size()) != spec.action_space.n)
      out.push_back({episode, step,
                     "action_mask length mismatch for '" + agent + "'"});
    else if (std::count(b.action_mask->begin(), b.action_mask->end(), 1) == 0)
      out.push_back({episode, step, "action_mask has no legal action for '" + agent + "'"});
  }
  if (b.global_state) {
    if (spec.state_dim == 0)
      out.push_back({episode, step, "global_state present but state_dim is 0"});
    else if (static_cast<int>(b.global_state->size()) != spec.state_dim)
      out.push_back({episode, step, "global_state length mismatch"});
  } else if (spec.state_dim > 0) {
    out.push_back({episode, step, "global_state missing but state_dim > 0"});
  }
}

int pick_random_legal(const ObservationBundle& b, const ActionSpace& space, Rng& rng) {
  const int n = space.n;
  if (!b.action_mask) return rng.uniform_int(n);
  std::vector<int> legal;
  for (int a = 0; a < n; ++a)
    if ((*b.action_mask)[a]) legal.push_back(a);
  if (legal.empty()) return rng.uniform_int(n);  // already reported
  return legal[rng.uniform_int(static_cast<int>(legal.size()))];
}

}  // namespace

ConformanceReport check_conformance(Env& env, int n_episodes, uint64_t seed) {
  if (n_episodes < 1) throw ConfigError("check_conformance: n_episodes must be >= 1");
  const EnvSpec& spec = env.spec();
  ConformanceReport report;
  const std::set<AgentId> declared(spec.agents.begin(), spec.agents.end());

  for (int ep = 0; ep < n_episodes; ++ep) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(ep)));
    StepOutput out = env.reset(derive_seed(seed, static_cast<uint64_t>(ep)) ^ 1);
    auto& v = report.violations;

    if (!out.rewards.empty())
      v.push_back({ep, 0, "reset returned a non-empty reward map"});
    if (out.all_done) v.push_back({ep, 0, "reset returned all_done=true"});

    int step = 0;
    while (!out.all_done) {
      if (step >= spec.episode_limit) {
        v.push_back({ep, step, "episode_limit overrun (" +
                                   std::to_string(spec.episode_limit) + " steps)"});
        break;
      }
      if (out.observations.empty()) {
        v.push_back({ep, step, "not done but no agent due to act"});
        break;
      }
      std::optional<Vec> state_ref;
      for (const auto& [agent, bundle] : out.observations) {
        if (!declared.count(agent))
          v.push_back({ep, step, "undeclared agent '" + agent + "' in observations"});
        check_bundle(spec, agent, bundle, ep, step, v);
        if (bundle.global_state) {
          if (!state_ref) state_ref = *bundle.global_state;
          else if (*state_ref != *bundle.global_state)
            v.push_back({ep, step, "global_state differs between co-observing agents"});
        }
      }
      if (spec.interaction == Interaction::synchronous &&
          out.observations.size() != spec.agents.size())
        v.push_back({ep, step, "synchronous env did not observe all agents"});

      std::map<AgentId, int> actions;
      for (const auto& [agent, bundle] : out.observations)
        actions[agent] = pick_random_legal(bundle, spec.action_space, rng);
      out = env.step(actions);
      ++step;
      ++report.steps_run;

      for (const auto& [agent, r] : out.rewards) {
        if (!declared.count(agent))
          v.push_back({ep, step, "reward for undeclared agent '" + agent + "'"});
        if (!std::isfinite(r))
          v.push_back({ep, step, "non-finite reward for '" + agent + "'"});
      }
      if (spec.task_mode == TaskMode::cooperative && out.rewards.size() > 1) {
        const double first = out.rewards.begin()->second;
        for (const auto& [agent, r] : out.rewards)
          if (r != first) {
            v.push_back({ep, step, "cooperative rewards differ across agents"});
            break;
          }
      }
    }
    if (out.all_done && !out.observations.empty())
      report.violations.push_back({ep, step, "all_done=true but agents still due to act"});
    ++report.episodes_run;
  }
  return report;
}

}  // namespace marl

#include "marl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>

namespace marl {

namespace {

std::vector<AgentId> default_agent_ids(int n) {
  if (n > 10) throw ConfigError("built-ins support at most 10 agents, got " + std::to_string(n));
  std::vector<AgentId> ids;
  for (int i = 0; i < n; ++i) ids.push_back("agent_" + std::to_string(i));
  return ids;
}

long long ipow(int base, int exp) {
  long long r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

void verify_actions_exact(const EnvSpec& spec,
                          const std::map<AgentId, ObservationBundle>& due,
                          const std::map<AgentId, int>& actions) {
  if (actions.size() != due.size())
    throw ProtocolError("step: expected actions for " + std::to_string(due.size()) +
                        " agent(s), got " + std::to_string(actions.size()));
  for (const auto& [agent, a] : actions) {
    auto it = due.find(agent);
    if (it == due.end())
      throw ProtocolError("step: agent '" + agent + "' is not due to act");
    if (a < 0 || a >= spec.action_space.n)
      throw IllegalActionError("step: action " + std::to_string(a) +
                               " out of range for agent '" + agent + "'");
    if (it->second.action_mask && !(*it->second.action_mask)[a])
      throw IllegalActionError("step: masked-out action " + std::to_string(a) +
                               " for agent '" + agent + "'");
  }
}

}  // namespace

Mask masked_action_set(int step_index, int n_actions) {
  if (step_index < 0) throw ConfigError("masked_action_set: negative step index");
  Mask m(n_actions, 1);
  if (step_index % 2 == 1 && n_actions >= 2) m[0] = 0;
  return m;
}

double spread_grid_reward(const std::vector<std::array<int, 2>>& positions,
                          const std::vector<std::array<int, 2>>& landmarks) {
  double total = 0.0;
  for (const auto& lm : landmarks) {
    int best = std::numeric_limits<int>::max();
    for (const auto& p : positions) {
      const int d = std::abs(p[0] - lm[0]) + std::abs(p[1] - lm[1]);
      best = std::min(best, d);
    }
    total += best;
  }
  return -total;
}

// ---------------------------------------------------------------------------
// Matrix game

void MatrixGameConfig::validate() const {
  if (n_agents < 1) throw ConfigError("matrix: n_agents must be >= 1");
  if (n_agents > 10) throw ConfigError("matrix: at most 10 agents");
  if (n_actions < 2) throw ConfigError("matrix: n_actions must be >= 2");
  if (horizon < 1) throw ConfigError("matrix: horizon must be >= 1");
  if (payoffs.empty()) throw ConfigError("matrix: no payoff tensors");
  const long long cells = ipow(n_actions, n_agents);
  for (const auto& [label, tensor] : payoffs) {
    if (static_cast<long long>(tensor.size()) != cells)
      throw ConfigError("matrix: payoff tensor for group '" + label + "' has " +
                        std::to_string(tensor.size()) + " entries, expected " +
                        std::to_string(cells));
    for (double v : tensor)
      if (!std::isfinite(v))
        throw ConfigError("matrix: non-finite payoff entry in group '" + label + "'");
  }
  if (constant_sum_check) {
    for (long long j = 0; j < cells; ++j) {
      double s = 0.0;
      for (const auto& [label, tensor] : payoffs) s += tensor[j];
      if (std::abs(s - *constant_sum_check) > 1e-12)
        throw ConfigError("matrix: joint action " + std::to_string(j) +
                          " breaks the declared constant sum");
    }
  }
}

namespace {

class MatrixGame final : public Env {
 public:
  explicit MatrixGame(MatrixGameConfig cfg) : cfg_(std::move(cfg)) {
    spec_.agents = default_agent_ids(cfg_.n_agents);
    if (cfg_.groups.empty()) {
      switch (cfg_.mode) {
        case TaskMode::cooperative:
          for (const auto& a : spec_.agents) cfg_.groups[a] = "team";
          break;
        case TaskMode::collaborative:
        case TaskMode::competitive:
          for (const auto& a : spec_.agents) cfg_.groups[a] = a;
          break;
        case TaskMode::mixed:
          for (int i = 0; i < cfg_.n_agents; ++i)
            cfg_.groups[spec_.agents[i]] = i < cfg_.n_agents / 2 ? "red" : "blue";
          break;
      }
    }
    cfg_.validate();
    spec_.obs_dim = 1;
    spec_.state_dim = 0;
    spec_.action_space = {ActionSpace::Kind::discrete, cfg_.n_actions, {}, {}};
    spec_.task_mode = cfg_.mode;
    spec_.interaction = Interaction::synchronous;
    spec_.groups = cfg_.groups;
    spec_.episode_limit = cfg_.horizon;
    spec_.validate();
    for (const auto& label : spec_.group_labels())
      if (!cfg_.payoffs.count(label))
        throw ConfigError("matrix: missing payoff tensor for group '" + label + "'");
  }

  const EnvSpec& spec() const override { return spec_; }

  StepOutput reset(uint64_t) override {
    t_ = 0;
    StepOutput out;
    out.observations = observe();
    return out;
  }

  StepOutput step(const std::map<AgentId, int>& actions) override {
    if (t_ >= cfg_.horizon) throw ProtocolError("step after episode end");
    verify_actions_exact(spec_, observe(), actions);
    long long joint = 0;
    std::string joint_str;
    for (const auto& a : spec_.agents) {
      joint = joint * cfg_.n_actions + actions.at(a);
      joint_str += std::to_string(actions.at(a));
    }
    ++t_;
    StepOutput out;
    for (const auto& a : spec_.agents) {
      out.rewards[a] = cfg_.payoffs.at(spec_.groups.at(a))[joint];
      out.infos[a]["joint_action"] = joint_str;
    }
    out.all_done = t_ >= cfg_.horizon;
    if (!out.all_done) out.observations = observe();
    return out;
  }

 private:
  std::map<AgentId, ObservationBundle> observe() const {
    std::map<AgentId, ObservationBundle> obs;
    for (const auto& a : spec_.agents) {
      ObservationBundle b;
      b.observation = {1.0};
      if (cfg_.masked) b.action_mask = masked_action_set(t_, cfg_.n_actions);
      obs[a] = std::move(b);
    }
    return obs;
  }

  MatrixGameConfig cfg_;
  EnvSpec spec_;
  int t_ = 0;
};

}  // namespace

std::unique_ptr<Env> make_matrix_game(const MatrixGameConfig& cfg) {
  return std::make_unique<MatrixGame>(cfg);
}

MatrixGameConfig coordination_matrix_config(double payoff_scale) {
  // Additive payoff with a unique optimum at (0,0); decomposes exactly
  // as q0(a0)+q1(a1), so every in-scope algorithm can represent it.
  MatrixGameConfig cfg;
  cfg.n_agents = 2;
  cfg.n_actions = 2;
  cfg.mode = TaskMode::cooperative;
  cfg.horizon = 10;
  Vec payoff = {1.0, 0.6, 0.6, 0.2};
  for (auto& v : payoff) v *= payoff_scale;
  cfg.payoffs["team"] = payoff;
  return cfg;
}

MatrixGameConfig matching_pennies_config() {
  MatrixGameConfig cfg;
  cfg.n_agents = 2;
  cfg.n_actions = 2;
  cfg.mode = TaskMode::competitive;
  cfg.horizon = 10;
  cfg.payoffs["agent_0"] = {1.0, -1.0, -1.0, 1.0};
  cfg.payoffs["agent_1"] = {-1.0, 1.0, 1.0, -1.0};
  cfg.constant_sum_check = 0.0;
  return cfg;
}

MatrixGameConfig mixed_2v2_config() {
  // Two teams of two; red wants the action parities of the teams to
  // match, blue wants them to differ. Team payoffs sum to 0 exactly.
  MatrixGameConfig cfg;
  cfg.n_agents = 4;
  cfg.n_actions = 2;
  cfg.mode = TaskMode::mixed;
  cfg.horizon = 10;
  const long long cells = 16;
  Vec red(cells), blue(cells);
  for (long long j = 0; j < cells; ++j) {
    const int a0 = static_cast<int>((j >> 3) & 1), a1 = static_cast<int>((j >> 2) & 1);
    const int a2 = static_cast<int>((j >> 1) & 1), a3 = static_cast<int>(j & 1);
    const double r = ((a0 ^ a1) == (a2 ^ a3)) ? 1.0 : -1.0;
    red[j] = r;
    blue[j] = -r;
  }
  cfg.payoffs["red"] = red;
  cfg.payoffs["blue"] = blue;
  cfg.constant_sum_check = 0.0;
  return cfg;
}

MatrixGameConfig collaborative_matrix_config() {
  // Individual rewards with aligned optima at (0,0).
  MatrixGameConfig cfg;
  cfg.n_agents = 2;
  cfg.n_actions = 2;
  cfg.mode = TaskMode::collaborative;
  cfg.horizon = 10;
  cfg.payoffs["agent_0"] = {1.0, 0.4, 0.3, 0.2};
  cfg.payoffs["agent_1"] = {0.8, 0.3, 0.4, 0.1};
  return cfg;
}

// ---------------------------------------------------------------------------
// Spread grid

void SpreadGridConfig::validate() const {
  if (grid_size < 2) throw ConfigError("spread_grid: grid_size must be >= 2");
  if (n_agents < 1 || n_agents > 10)
    throw ConfigError("spread_grid: n_agents must be in [1, 10]");
  if (n_landmarks < 1) throw ConfigError("spread_grid: n_landmarks must be >= 1");
  if (horizon < 1) throw ConfigError("spread_grid: horizon must be >= 1");
}

namespace {

class SpreadGrid final : public Env {
 public:
  explicit SpreadGrid(SpreadGridConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    spec_.agents = default_agent_ids(cfg_.n_agents);
    spec_.obs_dim = 2 + 2 * cfg_.n_landmarks;
    spec_.state_dim = 2 * cfg_.n_agents;
    spec_.action_space = {ActionSpace::Kind::discrete, 5, {}, {}};
    spec_.task_mode = TaskMode::cooperative;
    spec_.interaction = Interaction::synchronous;
    for (const auto& a : spec_.agents) spec_.groups[a] = "team";
    spec_.episode_limit = cfg_.horizon;
    spec_.validate();
  }

  const EnvSpec& spec() const override { return spec_; }

  StepOutput reset(uint64_t seed) override {
    Rng rng(seed);
    t_ = 0;
    positions_.assign(cfg_.n_agents, {0, 0});
    landmarks_.assign(cfg_.n_landmarks, {0, 0});
    for (auto& p : positions_)
      p = {rng.uniform_int(cfg_.grid_size), rng.uniform_int(cfg_.grid_size)};
    for (auto& lm : landmarks_)
      lm = {rng.uniform_int(cfg_.grid_size), rng.uniform_int(cfg_.grid_size)};
    StepOutput out;
    out.observations = observe();
    return out;
  }

  StepOutput step(const std::map<AgentId, int>& actions) override {
    if (t_ >= cfg_.horizon) throw ProtocolError("step after episode end");
    verify_actions_exact(spec_, observe(), actions);
    for (size_t i = 0; i < spec_.agents.size(); ++i) {
      auto& p = positions_[i];
      switch (actions.at(spec_.agents[i])) {
        case 1: p[1] = std::min(p[1] + 1, cfg_.grid_size - 1); break;  // up
        case 2: p[1] = std::max(p[1] - 1, 0); break;                   // down
        case 3: p[0] = std::min(p[0] + 1, cfg_.grid_size - 1); break;  // right
        case 4: p[0] = std::max(p[0] - 1, 0); break;                   // left
        default: break;                                                // stay
      }
    }
    ++t_;
    const double team = spread_grid_reward(positions_, landmarks_);
    StepOutput out;
    out.rewards = broadcast_team_reward(team, spec_.agents);
    out.all_done = t_ >= cfg_.horizon;
    if (!out.all_done) out.observations = observe();
    return out;
  }

 private:
  std::map<AgentId, ObservationBundle> observe() const {
    const double den = cfg_.grid_size - 1;
    Vec state;
    for (const auto& p : positions_) {
      state.push_back(p[0] / den);
      state.push_back(p[1] / den);
    }
    std::map<AgentId, ObservationBundle> obs;
    for (size_t i = 0; i < spec_.agents.size(); ++i) {
      ObservationBundle b;
      b.observation = {positions_[i][0] / den, positions_[i][1] / den};
      for (const auto& lm : landmarks_) {
        b.observation.push_back(lm[0] / den);
        b.observation.push_back(lm[1] / den);
      }
      b.global_state = state;
      obs[spec_.agents[i]] = std::move(b);
    }
    return obs;
  }

  SpreadGridConfig cfg_;
  EnvSpec spec_;
  int t_ = 0;
  std::vector<std::array<int, 2>> positions_;
  std::vector<std::array<int, 2>> landmarks_;
};

}  // namespace

std::unique_ptr<Env> make_spread_grid(const SpreadGridConfig& cfg) {
  return std::make_unique<SpreadGrid>(cfg);
}

// ---------------------------------------------------------------------------
// Turn game

void TurnGameConfig::validate() const {
  if (n_agents < 2 || n_agents > 10)
    throw ConfigError("turn_game: n_agents must be in [2, 10]");
  if (n_actions < 2) throw ConfigError("turn_game: n_actions must be >= 2");
  if (n_rounds < 1) throw ConfigError("turn_game: n_rounds must be >= 1");
}

namespace {

class TurnGame final : public Env {
 public:
  explicit TurnGame(TurnGameConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    spec_.agents = default_agent_ids(cfg_.n_agents);
    spec_.obs_dim = 3;
    spec_.state_dim = 0;
    spec_.action_space = {ActionSpace::Kind::discrete, cfg_.n_actions, {}, {}};
    spec_.task_mode = TaskMode::cooperative;
    spec_.interaction = Interaction::asynchronous;
    for (const auto& a : spec_.agents) spec_.groups[a] = "team";
    spec_.episode_limit = cfg_.n_agents * cfg_.n_rounds;
    spec_.validate();
  }

  const EnvSpec& spec() const override { return spec_; }

  StepOutput reset(uint64_t) override {
    round_ = 0;
    turn_ = 0;
    round_actions_.clear();
    StepOutput out;
    out.observations = observe();
    return out;
  }

  StepOutput step(const std::map<AgentId, int>& actions) override {
    if (round_ >= cfg_.n_rounds) throw ProtocolError("step after episode end");
    verify_actions_exact(spec_, observe(), actions);
    round_actions_.push_back(actions.begin()->second);
    ++turn_;
    StepOutput out;
    if (turn_ == cfg_.n_agents) {  // round complete
      const bool all_match = std::all_of(
          round_actions_.begin(), round_actions_.end(),
          [&](int a) { return a == round_actions_.front(); });
      out.rewards = broadcast_team_reward(all_match ? cfg_.match_bonus : 0.0,
                                          spec_.agents);
      ++round_;
      turn_ = 0;
      round_actions_.clear();
    }
    out.all_done = round_ >= cfg_.n_rounds;
    if (!out.all_done) out.observations = observe();
    return out;
  }

 private:
  std::map<AgentId, ObservationBundle> observe() const {
    ObservationBundle b;
    b.observation = {static_cast<double>(round_) / cfg_.n_rounds,
                     static_cast<double>(turn_) / cfg_.n_agents,
                     round_actions_.empty()
                         ? 0.0
                         : static_cast<double>(round_actions_.back()) /
                               (cfg_.n_actions - 1)};
    std::map<AgentId, ObservationBundle> obs;
    obs[spec_.agents[turn_]] = std::move(b);
    return obs;
  }

  TurnGameConfig cfg_;
  EnvSpec spec_;
  int round_ = 0;
  int turn_ = 0;  // position within the current round
  std::vector<int> round_actions_;
};

}  // namespace

std::unique_ptr<Env> make_turn_game(const TurnGameConfig& cfg) {
  return std::make_unique<TurnGame>(cfg);
}

std::vector<std::string> env_registry_names() {
  return {"matrix", "spread_grid", "turn_game"};
}

double MatrixGameConfig::max_abs_payoff() const {
  double m = 0.0;
  for (const auto& [label, tensor] : payoffs)
    for (double v : tensor) m = std::max(m, std::abs(v));
  return m;
}

double MatrixGameConfig::max_payoff(const std::string& group) const {
  const auto& tensor = payoffs.at(group);
  return *std::max_element(tensor.begin(), tensor.end());
}

// ---------------------------------------------------------------------------
// Registry / config parsing

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& cfg, const std::vector<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : cfg.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& cfg, const std::string& key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad type for key '" + key + "'");
  }
}

MatrixGameConfig matrix_config_from_json(const json& cfg) {
  reject_unknown_keys(cfg,
                      {"scenario", "n_agents", "n_actions", "mode", "horizon",
                       "masked", "payoffs", "groups", "constant_sum",
                       "payoff_scale"},
                      "matrix env_config");
  MatrixGameConfig out;
  const std::string scenario = get_or<std::string>(cfg, "scenario", "coordination");
  const double scale = get_or<double>(cfg, "payoff_scale", 1.0);
  if (scenario == "coordination") out = coordination_matrix_config(scale);
  else if (scenario == "pennies") out = matching_pennies_config();
  else if (scenario == "mixed_2v2") out = mixed_2v2_config();
  else if (scenario == "collaborative") out = collaborative_matrix_config();
  else if (scenario == "custom") out = MatrixGameConfig{};
  else
    throw ConfigError("matrix: unknown scenario '" + scenario +
                      "' (coordination, pennies, mixed_2v2, collaborative, custom)");
  out.n_agents = get_or<int>(cfg, "n_agents", out.n_agents);
  out.n_actions = get_or<int>(cfg, "n_actions", out.n_actions);
  if (cfg.contains("mode"))
    out.mode = task_mode_from_string(cfg.at("mode").get<std::string>());
  out.horizon = get_or<int>(cfg, "horizon", out.horizon);
  out.masked = get_or<bool>(cfg, "masked", out.masked);
  if (cfg.contains("payoffs")) {
    out.payoffs.clear();
    for (const auto& [label, tensor] : cfg.at("payoffs").items())
      out.payoffs[label] = tensor.get<Vec>();
  }
  if (cfg.contains("groups")) {
    out.groups.clear();
    for (const auto& [agent, label] : cfg.at("groups").items())
      out.groups[agent] = label.get<std::string>();
  }
  if (cfg.contains("constant_sum"))
    out.constant_sum_check = cfg.at("constant_sum").get<double>();
  return out;
}

SpreadGridConfig spread_config_from_json(const json& cfg) {
  reject_unknown_keys(cfg, {"grid_size", "n_agents", "n_landmarks", "horizon"},
                      "spread_grid env_config");
  SpreadGridConfig out;
  out.grid_size = get_or<int>(cfg, "grid_size", out.grid_size);
  out.n_agents = get_or<int>(cfg, "n_agents", out.n_agents);
  out.n_landmarks = get_or<int>(cfg, "n_landmarks", out.n_landmarks);
  out.horizon = get_or<int>(cfg, "horizon", out.horizon);
  return out;
}

TurnGameConfig turn_config_from_json(const json& cfg) {
  reject_unknown_keys(cfg, {"n_agents", "n_actions", "n_rounds", "match_bonus"},
                      "turn_game env_config");
  TurnGameConfig out;
  out.n_agents = get_or<int>(cfg, "n_agents", out.n_agents);
  out.n_actions = get_or<int>(cfg, "n_actions", out.n_actions);
  out.n_rounds = get_or<int>(cfg, "n_rounds", out.n_rounds);
  out.match_bonus = get_or<double>(cfg, "match_bonus", out.match_bonus);
  return out;
}

}  // namespace

std::unique_ptr<Env> make_env(const std::string& name, const nlohmann::json& config) {
  if (name == "matrix") return make_matrix_game(matrix_config_from_json(config));
  if (name == "spread_grid") return make_spread_grid(spread_config_from_json(config));
  if (name == "turn_game") return make_turn_game(turn_config_from_json(config));
  std::string valid;
  for (const auto& n : env_registry_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw RegistryError("unknown env '" + name + "' (valid: " + valid + ")");
}

EnvFactory make_env_factory(const std::string& name, const nlohmann::json& config) {
  make_env(name, config);  // validate eagerly so errors surface at setup
  return [name, config]() { return make_env(name, config); };
}

}  // namespace marl

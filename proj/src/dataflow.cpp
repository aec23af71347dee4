#include "marl/dataflow.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "json.hpp"

namespace marl {

void AgentBuffer::append_episode(std::vector<Transition> episode) {
  episode_starts.push_back(transitions.size());
  transitions.insert(transitions.end(),
                     std::make_move_iterator(episode.begin()),
                     std::make_move_iterator(episode.end()));
}

std::vector<std::pair<size_t, size_t>> AgentBuffer::episodes() const {
  std::vector<std::pair<size_t, size_t>> out;
  for (size_t k = 0; k < episode_starts.size(); ++k) {
    const size_t b = episode_starts[k];
    const size_t e = k + 1 < episode_starts.size() ? episode_starts[k + 1]
                                                   : transitions.size();
    out.emplace_back(b, e);
  }
  return out;
}

CollectResult collect_episode(Env& env, const ActionSelector& select,
                              uint64_t episode_seed) {
  const EnvSpec& spec = env.spec();
  Rng rng(derive_seed(episode_seed, "actions"));
  StepOutput out = env.reset(derive_seed(episode_seed, "env"));

  CollectResult res;
  std::map<AgentId, std::vector<Transition>> seqs;
  std::map<AgentId, double> pending;  // reward earned before the first action
  for (const auto& a : spec.agents) {
    seqs[a];
    pending[a] = 0.0;
    res.agent_returns[a] = 0.0;
  }

  int step_index = 0;
  while (!out.all_done) {
    if (out.observations.empty())
      throw ProtocolError("collection: not done but no agent due to act at step " +
                          std::to_string(step_index));
    std::map<AgentId, int> actions;
    for (const auto& [agent, bundle] : out.observations) {
      auto it = seqs.find(agent);
      if (it == seqs.end())
        throw ProtocolError("collection: undeclared agent '" + agent +
                            "' observed at step " + std::to_string(step_index));
      auto& seq = it->second;
      if (!seq.empty()) {
        // The agent's current bundle is the bootstrap point of its
        // previous transition.
        Transition& prev = seq.back();
        prev.next_obs = bundle.observation;
        if (bundle.action_mask) prev.next_action_mask = *bundle.action_mask;
        if (bundle.global_state) prev.next_global_state = *bundle.global_state;
      }
      Transition t;
      t.agent_id = agent;
      t.obs = bundle.observation;
      if (bundle.action_mask) t.action_mask = *bundle.action_mask;
      if (bundle.global_state) t.global_state = *bundle.global_state;
      t.action = select(agent, bundle, rng);
      t.env_step = step_index;
      t.reward = pending[agent];
      pending[agent] = 0.0;
      actions[agent] = t.action;
      seq.push_back(std::move(t));
    }
    try {
      out = env.step(actions);
    } catch (const ProtocolError& e) {
      throw ProtocolError("collection failed at step " +
                          std::to_string(step_index) + ": " + e.what());
    }
    for (const auto& [agent, r] : out.rewards) {
      auto it = seqs.find(agent);
      if (it == seqs.end())
        throw ProtocolError("collection: reward for undeclared agent '" +
                            agent + "' at step " + std::to_string(step_index));
      res.agent_returns[agent] += r;
      if (!it->second.empty())
        it->second.back().reward += r;
      else
        pending[agent] += r;
    }
    ++step_index;
  }

  res.env_steps = step_index;
  for (auto& [agent, seq] : seqs) {
    if (!seq.empty()) seq.back().done = true;
    AgentBuffer buf;
    buf.agent_id = agent;
    buf.append_episode(std::move(seq));
    res.buffers.emplace(agent, std::move(buf));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Postprocessing

namespace instrument {
namespace {
std::mutex g_mu;
std::vector<std::string> g_log;
}  // namespace

void note_postprocess(const std::string& kind) {
  std::lock_guard<std::mutex> lock(g_mu);
  g_log.push_back(kind);
}

std::vector<std::string> drain_postprocess_log() {
  std::lock_guard<std::mutex> lock(g_mu);
  return std::exchange(g_log, {});
}
}  // namespace instrument

void postprocess_independent(Buffers& buffers, const OwnEstimators* est,
                             double gamma, double lambda) {
  instrument::note_postprocess("independent");
  if (!est) return;
  for (auto& [agent, buf] : buffers) {
    for (auto [b, e] : buf.episodes()) {
      const size_t T = e - b;
      if (T == 0) continue;
      Vec rewards(T), values(T + 1, 0.0);  // episodes run to termination
      for (size_t i = 0; i < T; ++i) {
        Transition& t = buf.transitions[b + i];
        rewards[i] = t.reward;
        values[i] = est->value(agent, t);
        t.logp_old = est->logp(agent, t);
      }
      const GaeResult g = compute_gae(rewards, values, gamma, lambda);
      for (size_t i = 0; i < T; ++i) {
        buf.transitions[b + i].advantage = g.advantages[i];
        buf.transitions[b + i].return_ = g.returns[i];
      }
    }
  }
}

namespace {

// Episode ranges for every agent, checked to agree in count.
std::vector<std::map<AgentId, std::pair<size_t, size_t>>> aligned_episodes(
    const Buffers& buffers) {
  size_t n_eps = 0;
  bool first = true;
  for (const auto& [agent, buf] : buffers) {
    const size_t n = buf.episode_starts.size();
    if (first) {
      n_eps = n;
      first = false;
    } else if (n != n_eps) {
      throw AlignmentError("buffers disagree on episode count");
    }
  }
  std::vector<std::map<AgentId, std::pair<size_t, size_t>>> out(n_eps);
  for (const auto& [agent, buf] : buffers) {
    auto eps = buf.episodes();
    for (size_t k = 0; k < eps.size(); ++k) out[k][agent] = eps[k];
  }
  return out;
}

// Strict synchronous alignment: every agent took a transition at every
// env step 0..T-1 of the episode.
size_t sync_episode_length(
    const Buffers& buffers,
    const std::map<AgentId, std::pair<size_t, size_t>>& ep) {
  size_t T = 0;
  bool first = true;
  for (const auto& [agent, range] : ep) {
    const size_t len = range.second - range.first;
    if (first) {
      T = len;
      first = false;
    } else if (len != T) {
      throw AlignmentError("misaligned buffers: agent '" + agent + "' has " +
                           std::to_string(len) + " steps, expected " +
                           std::to_string(T));
    }
    const auto& trans = buffers.at(agent).transitions;
    for (size_t i = 0; i < len; ++i) {
      const int expected = trans[range.first].env_step + static_cast<int>(i);
      if (trans[range.first + i].env_step != expected)
        throw AlignmentError("misaligned buffers at step " +
                             std::to_string(expected) + " for agent '" +
                             agent + "'");
    }
  }
  return T;
}

Vec concat_team_obs(const EnvSpec& spec,
                    const std::map<AgentId, const Transition*>& at_step) {
  Vec out;
  out.reserve(static_cast<size_t>(spec.agents.size()) * spec.obs_dim);
  for (const auto& agent : spec.agents) {
    auto it = at_step.find(agent);
    if (it != at_step.end() && it->second) {
      out.insert(out.end(), it->second->obs.begin(), it->second->obs.end());
    } else {
      // Agent has not acted yet (async lead-in): absent data as zeros.
      out.insert(out.end(), static_cast<size_t>(spec.obs_dim), 0.0);
    }
  }
  return out;
}

}  // namespace

void postprocess_centralized_critic(Buffers& buffers, const EnvSpec& spec,
                                    const CentralEstimators& est, double gamma,
                                    double lambda) {
  instrument::note_postprocess("centralized_critic");
  const bool sync = spec.interaction == Interaction::synchronous;

  for (const auto& ep : aligned_episodes(buffers)) {
    if (sync) {
      const size_t T = sync_episode_length(buffers, ep);
      for (size_t t = 0; t < T; ++t) {
        std::map<AgentId, const Transition*> at_step;
        for (const auto& [agent, range] : ep)
          at_step[agent] = &buffers.at(agent).transitions[range.first + t];
        Vec shared = spec.state_dim > 0
                         ? at_step.begin()->second->global_state
                         : concat_team_obs(spec, at_step);
        if (spec.state_dim > 0 && shared.empty())
          throw AlignmentError("centralized critic: global_state missing at step " +
                               std::to_string(t));
        for (const auto& agent : spec.agents) {
          Transition& tr = const_cast<Transition&>(*at_step.at(agent));
          tr.shared_obs = shared;
          std::vector<int> others;
          others.reserve(spec.agents.size() - 1);
          for (const auto& peer : spec.agents)
            if (peer != agent) others.push_back(at_step.at(peer)->action);
          tr.shared_actions = std::move(others);
        }
      }
    } else {
      // Async: join on last-known data at or before each transition's
      // env step; agents that have not acted yet contribute zeros.
      for (const auto& [agent, range] : ep) {
        auto& trans = buffers.at(agent).transitions;
        for (size_t i = range.first; i < range.second; ++i) {
          Transition& tr = trans[i];
          std::map<AgentId, const Transition*> known;
          for (const auto& [peer, prange] : ep) {
            const auto& ptrans = buffers.at(peer).transitions;
            const Transition* latest = nullptr;
            for (size_t j = prange.first; j < prange.second; ++j) {
              if (ptrans[j].env_step <= tr.env_step) latest = &ptrans[j];
              else break;
            }
            known[peer] = latest;
          }
          tr.shared_obs = spec.state_dim > 0 ? tr.global_state
                                             : concat_team_obs(spec, known);
          std::vector<int> others;
          others.reserve(spec.agents.size() - 1);
          for (const auto& peer : spec.agents) {
            if (peer == agent) continue;
            const Transition* latest = known.at(peer);
            others.push_back(latest ? latest->action : -1);
          }
          tr.shared_actions = std::move(others);
        }
      }
    }

    // Critic cache + GAE over the agent's own reward stream.
    for (const auto& [agent, range] : ep) {
      auto& trans = buffers.at(agent).transitions;
      const size_t T = range.second - range.first;
      if (T == 0) continue;
      Vec rewards(T), values(T + 1, 0.0);
      for (size_t i = 0; i < T; ++i) {
        Transition& tr = trans[range.first + i];
        const double v = est.central_value(agent, tr);
        tr.centralized_value = v;
        tr.logp_old = est.logp(agent, tr);
        rewards[i] = tr.reward;
        values[i] = v;
      }
      const GaeResult g = compute_gae(rewards, values, gamma, lambda);
      for (size_t i = 0; i < T; ++i) {
        trans[range.first + i].advantage = g.advantages[i];
        trans[range.first + i].return_ = g.returns[i];
      }
    }
  }
}

void postprocess_value_decomposition(Buffers& buffers, const EnvSpec& spec,
                                     const VdEstimators& est,
                                     bool mixer_needs_state,
                                     std::optional<double> gamma_for_returns) {
  instrument::note_postprocess("value_decomposition");
  if (spec.task_mode != TaskMode::cooperative)
    throw ModeError("value decomposition requires a cooperative task, got " +
                    to_string(spec.task_mode));
  if (spec.interaction != Interaction::synchronous)
    throw ModeError("value decomposition requires synchronous interaction");

  const size_t n = spec.agents.size();
  for (const auto& ep : aligned_episodes(buffers)) {
    const size_t T = sync_episode_length(buffers, ep);
    Vec team_rewards(T, 0.0);
    for (size_t t = 0; t < T; ++t) {
      std::map<AgentId, const Transition*> at_step;
      for (const auto& [agent, range] : ep)
        at_step[agent] = &buffers.at(agent).transitions[range.first + t];

      Vec pv(n, 0.0), ptv(n, 0.0);
      for (size_t j = 0; j < n; ++j) {
        const Transition& tr = *at_step.at(spec.agents[j]);
        pv[j] = est.value(spec.agents[j], tr);
        if (est.next_value) ptv[j] = est.next_value(spec.agents[j], tr);
      }
      std::optional<Vec> shared, next_shared;
      if (mixer_needs_state) {
        if (spec.state_dim > 0) {
          shared = at_step.begin()->second->global_state;
          if (!at_step.begin()->second->done)
            next_shared = at_step.begin()->second->next_global_state;
        } else {
          shared = concat_team_obs(spec, at_step);
          if (!at_step.begin()->second->done) {
            Vec nxt;
            nxt.reserve(n * static_cast<size_t>(spec.obs_dim));
            for (const auto& agent : spec.agents) {
              const Vec& o = at_step.at(agent)->next_obs;
              nxt.insert(nxt.end(), o.begin(), o.end());
            }
            next_shared = std::move(nxt);
          }
        }
      }
      team_rewards[t] = at_step.begin()->second->reward;
      for (const auto& agent : spec.agents) {
        Transition& tr = const_cast<Transition&>(*at_step.at(agent));
        tr.peer_values = pv;
        if (est.next_value) tr.peer_target_values = ptv;
        if (shared) tr.shared_obs = *shared;
        if (next_shared) tr.next_shared_obs = *next_shared;
      }
    }
    if (gamma_for_returns) {
      Vec rtg(T, 0.0);
      double acc = 0.0;
      for (size_t t = T; t-- > 0;) {
        acc = team_rewards[t] + *gamma_for_returns * acc;
        rtg[t] = acc;
      }
      for (const auto& [agent, range] : ep) {
        auto& trans = buffers.at(agent).transitions;
        for (size_t t = 0; t < T; ++t) trans[range.first + t].return_ = rtg[t];
      }
    }
  }
}

GaeResult compute_gae(const Vec& rewards, const Vec& values, double gamma,
                      double lambda) {
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0)
    throw ConfigError("gae: gamma and lambda must lie in [0, 1]");
  if (values.size() != rewards.size() + 1)
    throw ShapeError("gae: need T+1 values for T rewards, got " +
                     std::to_string(values.size()) + " for " +
                     std::to_string(rewards.size()));
  const size_t T = rewards.size();
  GaeResult g;
  g.advantages.assign(T, 0.0);
  g.returns.assign(T, 0.0);
  double acc = 0.0;
  for (size_t i = T; i-- > 0;) {
    const double delta = rewards[i] + gamma * values[i + 1] - values[i];
    acc = delta + gamma * lambda * acc;
    g.advantages[i] = acc;
    g.returns[i] = acc + values[i];
  }
  return g;
}

SampleBatch build_sample_batch(const Buffers& buffers, const PolicyMap& map) {
  SampleBatch out;
  for (const auto& [agent, buf] : buffers) {
    const PolicyId& pid = resolve(map, agent);
    auto& vec = out.groups[pid];
    for (const Transition& t : buf.transitions) {
      vec.emplace_back(agent, &t);
      ++out.total;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replay

EpisodeReplay::EpisodeReplay(size_t capacity_transitions)
    : capacity_(capacity_transitions) {
  if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
}

void EpisodeReplay::add(Buffers episode) {
  size_t n = 0;
  for (const auto& [agent, buf] : episode) n += buf.transitions.size();
  episodes_.push_back(std::move(episode));
  total_ += n;
  // Evict oldest whole episodes; a single oversized episode stays.
  while (total_ > capacity_ && episodes_.size() > 1) {
    size_t m = 0;
    for (const auto& [agent, buf] : episodes_.front()) m += buf.transitions.size();
    total_ -= m;
    episodes_.erase(episodes_.begin());
  }
}

std::vector<std::pair<AgentId, const Transition*>>
EpisodeReplay::sample_transitions(size_t n, Rng& rng) const {
  if (total_ == 0) throw ProtocolError("replay: sampling from empty buffer");
  std::vector<std::pair<AgentId, const Transition*>> out;
  out.reserve(n);
  for (size_t k = 0; k < n; ++k) {
    size_t idx = static_cast<size_t>(rng.uniform_int(static_cast<int>(total_)));
    for (const auto& ep : episodes_) {
      bool found = false;
      for (const auto& [agent, buf] : ep) {
        if (idx < buf.transitions.size()) {
          out.emplace_back(agent, &buf.transitions[idx]);
          found = true;
          break;
        }
        idx -= buf.transitions.size();
      }
      if (found) break;
    }
  }
  return out;
}

std::vector<std::map<AgentId, const Transition*>> EpisodeReplay::sample_steps(
    size_t n, Rng& rng) const {
  if (episodes_.empty()) throw ProtocolError("replay: sampling from empty buffer");
  std::vector<size_t> lengths;
  lengths.reserve(episodes_.size());
  size_t total_steps = 0;
  for (const auto& ep : episodes_) {
    size_t T = 0;
    bool first = true;
    for (const auto& [agent, buf] : ep) {
      if (first) {
        T = buf.transitions.size();
        first = false;
      } else if (buf.transitions.size() != T) {
        throw ProtocolError("replay: step sampling needs aligned episodes");
      }
    }
    lengths.push_back(T);
    total_steps += T;
  }
  std::vector<std::map<AgentId, const Transition*>> out;
  out.reserve(n);
  for (size_t k = 0; k < n; ++k) {
    size_t idx =
        static_cast<size_t>(rng.uniform_int(static_cast<int>(total_steps)));
    for (size_t e = 0; e < episodes_.size(); ++e) {
      if (idx < lengths[e]) {
        std::map<AgentId, const Transition*> step;
        for (const auto& [agent, buf] : episodes_[e])
          step[agent] = &buf.transitions[idx];
        out.push_back(std::move(step));
        break;
      }
      idx -= lengths[e];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void dump_transitions(std::ostream& os, const Buffers& buffers) {
  for (const auto& [agent, buf] : buffers) {
    for (const Transition& t : buf.transitions) {
      nlohmann::json j;
      j["agent"] = agent;
      j["env_step"] = t.env_step;
      j["obs"] = t.obs;
      j["action"] = t.action;
      j["reward"] = t.reward;
      j["done"] = t.done;
      if (!t.action_mask.empty()) j["action_mask"] = t.action_mask;
      if (t.shared_obs) j["shared_obs"] = *t.shared_obs;
      if (t.shared_actions) j["shared_actions"] = *t.shared_actions;
      if (t.peer_values) j["peer_values"] = *t.peer_values;
      if (t.centralized_value) j["centralized_value"] = *t.centralized_value;
      if (t.logp_old) j["logp_old"] = *t.logp_old;
      if (t.return_) j["return"] = *t.return_;
      if (t.advantage) j["advantage"] = *t.advantage;
      os << j.dump() << "\n";
    }
  }
}

}  // namespace marl

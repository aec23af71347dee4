#include "marl/algos.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "marl/kernels.hpp"

namespace marl {

std::string to_string(AlgoName a) {
  switch (a) {
    case AlgoName::iql: return "iql";
    case AlgoName::ia2c: return "ia2c";
    case AlgoName::ippo: return "ippo";
    case AlgoName::maa2c: return "maa2c";
    case AlgoName::mappo: return "mappo";
    case AlgoName::coma: return "coma";
    case AlgoName::vdn: return "vdn";
    case AlgoName::qmix: return "qmix";
    case AlgoName::vda2c: return "vda2c";
  }
  return "?";
}

std::string to_string(AlgoCategory c) {
  switch (c) {
    case AlgoCategory::independent: return "independent";
    case AlgoCategory::centralized_critic: return "centralized_critic";
    case AlgoCategory::value_decomposition: return "value_decomposition";
  }
  return "?";
}

AlgoName algo_from_string(const std::string& s) {
  static const std::map<std::string, AlgoName> names = {
      {"iql", AlgoName::iql},     {"ia2c", AlgoName::ia2c},
      {"ippo", AlgoName::ippo},   {"maa2c", AlgoName::maa2c},
      {"mappo", AlgoName::mappo}, {"coma", AlgoName::coma},
      {"vdn", AlgoName::vdn},     {"qmix", AlgoName::qmix},
      {"vda2c", AlgoName::vda2c}};
  auto it = names.find(s);
  if (it == names.end())
    throw ConfigError("unknown algorithm '" + s +
                      "' (iql, ia2c, ippo, maa2c, mappo, coma, vdn, qmix, vda2c)");
  return it->second;
}

AlgoCategory category_of(AlgoName a) {
  switch (a) {
    case AlgoName::iql:
    case AlgoName::ia2c:
    case AlgoName::ippo:
      return AlgoCategory::independent;
    case AlgoName::maa2c:
    case AlgoName::mappo:
    case AlgoName::coma:
      return AlgoCategory::centralized_critic;
    case AlgoName::vdn:
    case AlgoName::qmix:
    case AlgoName::vda2c:
      return AlgoCategory::value_decomposition;
  }
  throw ConfigError("bad algorithm enum");
}

namespace {

bool is_q_family(AlgoName a) {
  return a == AlgoName::iql || a == AlgoName::vdn || a == AlgoName::qmix;
}

bool is_ppo(AlgoName a) { return a == AlgoName::ippo || a == AlgoName::mappo; }

}  // namespace

void AlgoConfig::validate() const {
  if (gamma < 0.0 || gamma > 1.0)
    throw ConfigError("gamma must lie in [0, 1]");
  if (gae_lambda < 0.0 || gae_lambda > 1.0)
    throw ConfigError("gae_lambda must lie in [0, 1]");
  if (lr_actor <= 0.0 || lr_critic <= 0.0 || lr_mixer <= 0.0)
    throw ConfigError("learning rates must be positive");
  if (ppo_clip <= 0.0) throw ConfigError("ppo_clip must be positive");
  if (entropy_coef < 0.0) throw ConfigError("entropy_coef must be >= 0");
  if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > 1.0)
    throw ConfigError("epsilon schedule endpoints must lie in [0, 1]");
  if (eps_decay_steps < 0) throw ConfigError("eps_decay_steps must be >= 0");
  if (target_update_period < 1)
    throw ConfigError("target_update_period must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (ppo_epochs < 1) throw ConfigError("ppo_epochs must be >= 1");
  if (mixer_hidden < 1) throw ConfigError("mixer_hidden must be >= 1");
  if (replay_capacity < 1) throw ConfigError("replay_capacity must be >= 1");
  optimizer_kind();
  mixer_kind();
}

OptimizerKind AlgoConfig::optimizer_kind() const {
  if (optimizer == "adam") return OptimizerKind::adam;
  if (optimizer == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + optimizer + "' (adam, sgd)");
}

MixerKind AlgoConfig::mixer_kind() const {
  // vdn and qmix define their mixers; vda2c may choose.
  if (algo == AlgoName::vdn) {
    if (!mixer.empty() && mixer != "sum")
      throw ConfigError("vdn always uses the sum mixer");
    return MixerKind::sum;
  }
  if (algo == AlgoName::qmix) {
    if (!mixer.empty() && mixer != "monotonic")
      throw ConfigError("qmix always uses the monotonic mixer");
    return MixerKind::monotonic;
  }
  if (mixer.empty()) return MixerKind::monotonic;
  return mixer_kind_from_string(mixer);
}

void ModelConfig::validate() const {
  if (hidden.empty()) throw ConfigError("model needs at least one hidden layer");
  for (int h : hidden)
    if (h < 1) throw ConfigError("hidden layer widths must be >= 1");
  activation_kind();
}

Activation ModelConfig::activation_kind() const {
  return activation_from_string(activation);
}

// ---------------------------------------------------------------------------
// Scalar building blocks

namespace {

bool legal(const Mask& mask, size_t i) { return mask.empty() || mask[i] != 0; }

size_t require_some_legal(size_t n, const Mask& mask) {
  if (!mask.empty() && mask.size() != n)
    throw ShapeError("mask length does not match action count");
  size_t count = 0;
  for (size_t i = 0; i < n; ++i)
    if (legal(mask, i)) ++count;
  if (count == 0) throw ProtocolError("no legal action available");
  return count;
}

}  // namespace

int masked_argmax(std::span<const double> q, const Mask& mask) {
  require_some_legal(q.size(), mask);
  int best = -1;
  for (size_t i = 0; i < q.size(); ++i) {
    if (!legal(mask, i)) continue;
    if (best < 0 || q[i] > q[static_cast<size_t>(best)])
      best = static_cast<int>(i);
  }
  return best;
}

double masked_max(std::span<const double> q, const Mask& mask) {
  return q[static_cast<size_t>(masked_argmax(q, mask))];
}

Vec masked_softmax(std::span<const double> logits, const Mask& mask) {
  require_some_legal(logits.size(), mask);
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < logits.size(); ++i)
    if (legal(mask, i)) mx = std::max(mx, logits[i]);
  Vec p(logits.size(), 0.0);
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    if (!legal(mask, i)) continue;
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

int epsilon_greedy(std::span<const double> q, const Mask& mask, double eps,
                   Rng& rng) {
  const size_t n_legal = require_some_legal(q.size(), mask);
  if (eps > 0.0 && rng.uniform() < eps) {
    int k = rng.uniform_int(static_cast<int>(n_legal));
    for (size_t i = 0; i < q.size(); ++i) {
      if (!legal(mask, i)) continue;
      if (k-- == 0) return static_cast<int>(i);
    }
  }
  return masked_argmax(q, mask);
}

int sample_categorical(const Vec& probs, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  int last_nonzero = -1;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_nonzero = static_cast<int>(i);
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  if (last_nonzero < 0) throw ProtocolError("sampling from an all-zero distribution");
  return last_nonzero;  // u landed in rounding slack past the last mass
}

double entropy_of(const Vec& probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double q_target(double reward, bool done, double gamma,
                double next_q_legal_max) {
  return reward + (done ? 0.0 : gamma * next_q_legal_max);
}

double pg_actor_loss(const Vec& logp_chosen, const Vec& advantages,
                     const Vec& entropy, double entropy_coef) {
  if (logp_chosen.size() != advantages.size() ||
      logp_chosen.size() != entropy.size())
    throw ShapeError("pg_actor_loss: length mismatch");
  if (logp_chosen.empty()) return 0.0;
  double pg = 0.0, ent = 0.0;
  for (size_t i = 0; i < logp_chosen.size(); ++i) {
    pg += -logp_chosen[i] * advantages[i];
    ent += entropy[i];
  }
  const double n = static_cast<double>(logp_chosen.size());
  return pg / n - entropy_coef * ent / n;
}

double ppo_surrogate(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

double coma_advantage(const Vec& q_all_actions, const Vec& policy_probs,
                      int chosen) {
  if (q_all_actions.size() != policy_probs.size())
    throw ShapeError("coma_advantage: length mismatch");
  if (chosen < 0 || static_cast<size_t>(chosen) >= q_all_actions.size())
    throw ShapeError("coma_advantage: chosen action out of range");
  double baseline = 0.0;
  for (size_t a = 0; a < q_all_actions.size(); ++a)
    baseline += policy_probs[a] * q_all_actions[a];
  return q_all_actions[static_cast<size_t>(chosen)] - baseline;
}

double centralized_critic_loss(const Vec& values, const Vec& returns) {
  if (values.size() != returns.size())
    throw ShapeError("centralized_critic_loss: length mismatch");
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - returns[i];
    s += d * d;
  }
  return s / static_cast<double>(values.size());
}

double vdn_mix(const Vec& per_agent_q_chosen) {
  if (per_agent_q_chosen.empty()) throw ShapeError("vdn_mix: empty input");
  double acc = per_agent_q_chosen[0];
  for (size_t i = 1; i < per_agent_q_chosen.size(); ++i)
    acc += per_agent_q_chosen[i];
  return acc;
}

double qmix_mix(const Vec& per_agent_q_chosen, const Vec& state,
                const Mixer& mixer) {
  return mix_forward(mixer, per_agent_q_chosen, state);
}

double vda2c_mixed_value(const Vec& per_agent_v, const Vec& state,
                         const Mixer& mixer) {
  return mix_forward(mixer, per_agent_v, state);
}

double tabular_q_update(Tabular& q, const std::string& key, int action,
                        double reward, bool done, const std::string& next_key,
                        const Mask& next_mask, double gamma, double lr) {
  const double next_max =
      done ? 0.0 : masked_max(q.lookup(next_key), next_mask);
  const double y = q_target(reward, done, gamma, next_max);
  Vec& row = q.values(key);
  if (action < 0 || action >= q.n_actions)
    throw ShapeError("tabular_q_update: action out of range");
  const double td = y - row[static_cast<size_t>(action)];
  row[static_cast<size_t>(action)] += lr * td;
  return td;
}

// ---------------------------------------------------------------------------
// PolicySet

PolicySet::PolicySet(const EnvSpec& spec, const PolicyMap& map,
                     const AlgoConfig& acfg, const ModelConfig& mcfg,
                     uint64_t master_seed)
    : spec_(spec), map_(map), acfg_(acfg), mcfg_(mcfg) {
  spec_.validate();
  acfg_.validate();
  mcfg_.validate();
  if (spec_.action_space.kind != ActionSpace::Kind::discrete)
    throw ConfigError("only discrete action spaces are supported");
  const int n_actions = spec_.action_space.n;
  const int n = static_cast<int>(spec_.agents.size());
  const Activation act = mcfg_.activation_kind();
  const OptimizerKind ok = acfg_.optimizer_kind();

  auto sizes = [&](int in, int out) {
    std::vector<int> s{in};
    s.insert(s.end(), mcfg_.hidden.begin(), mcfg_.hidden.end());
    s.push_back(out);
    return s;
  };
  const int shared_dim = spec_.state_dim > 0 ? spec_.state_dim
                                             : n * spec_.obs_dim;

  for (const PolicyId& pid : map_.policy_ids) {
    PolicyNets pn;
    pn.id = pid;
    pn.multi_agent = agents_of(map_, spec_, pid).size() > 1;
    pn.actor = init_params(sizes(spec_.obs_dim, n_actions),
                           derive_seed(master_seed, "policy/" + pid + "/actor"),
                           act);
    pn.opt_actor = OptimizerState::make(ok, acfg_.lr_actor, pn.actor);
    if (is_q_family(acfg_.algo)) pn.target_actor = pn.actor;

    int critic_in = 0, critic_out = 1;
    switch (acfg_.algo) {
      case AlgoName::ia2c:
      case AlgoName::ippo:
      case AlgoName::vda2c:
        critic_in = spec_.obs_dim;
        break;
      case AlgoName::maa2c:
      case AlgoName::mappo:
        critic_in = acfg_.cc_use_own_obs
                        ? spec_.obs_dim
                        : shared_dim + spec_.obs_dim +
                              (pn.multi_agent ? n : 0);
        break;
      case AlgoName::coma:
        critic_in = acfg_.cc_use_own_obs
                        ? spec_.obs_dim
                        : shared_dim + (n - 1) * n_actions + spec_.obs_dim +
                              (pn.multi_agent ? n : 0);
        critic_out = n_actions;
        break;
      default:
        break;  // Q family: no critic
    }
    if (critic_in > 0) {
      pn.critic = init_params(
          sizes(critic_in, critic_out),
          derive_seed(master_seed, "policy/" + pid + "/critic"), act);
      pn.opt_critic = OptimizerState::make(ok, acfg_.lr_critic, pn.critic);
    }
    nets_.emplace(pid, std::move(pn));
  }

  if (category() == AlgoCategory::value_decomposition) {
    const MixerKind mk = acfg_.mixer_kind();
    mixer_ = make_mixer(mk, n, mk == MixerKind::monotonic ? shared_dim : 0,
                        acfg_.mixer_hidden, derive_seed(master_seed, "mixer"));
    target_mixer_ = mixer_;
    opt_mixer_ = MixerOptimizer::make(ok, acfg_.lr_mixer, mixer_);
  }
}

const PolicyNets& PolicySet::nets(const PolicyId& id) const {
  auto it = nets_.find(id);
  if (it == nets_.end())
    throw ProtocolError("no nets for policy '" + id + "'");
  return it->second;
}

Vec PolicySet::actor_out(const PolicyId& pid, std::span<const double> obs) const {
  return forward(nets(pid).actor, obs);
}

Vec PolicySet::action_distribution(const AgentId& agent,
                                   const ObservationBundle& bundle,
                                   double epsilon) const {
  const PolicyId& pid = resolve(map_, agent);
  const Vec out = actor_out(pid, bundle.observation);
  const Mask mask = bundle.action_mask.value_or(Mask{});
  if (!is_q_family(acfg_.algo)) return masked_softmax(out, mask);
  const size_t n_legal = require_some_legal(out.size(), mask);
  Vec p(out.size(), 0.0);
  for (size_t i = 0; i < out.size(); ++i)
    if (legal(mask, i)) p[i] = epsilon / static_cast<double>(n_legal);
  p[static_cast<size_t>(masked_argmax(out, mask))] += 1.0 - epsilon;
  return p;
}

ActionSelector PolicySet::make_selector(double epsilon) const {
  if (is_q_family(acfg_.algo)) {
    return [this, epsilon](const AgentId& agent, const ObservationBundle& b,
                           Rng& rng) {
      const Vec q = actor_out(resolve(map_, agent), b.observation);
      return epsilon_greedy(q, b.action_mask.value_or(Mask{}), epsilon, rng);
    };
  }
  return [this](const AgentId& agent, const ObservationBundle& b, Rng& rng) {
    const Vec logits = actor_out(resolve(map_, agent), b.observation);
    const Vec probs = masked_softmax(logits, b.action_mask.value_or(Mask{}));
    return sample_categorical(probs, rng);
  };
}

ActionSelector PolicySet::make_greedy_selector() const {
  // Mode of the policy distribution; for softmax policies the argmax of
  // the logits over legal actions is exactly that.
  return [this](const AgentId& agent, const ObservationBundle& b, Rng&) {
    const Vec out = actor_out(resolve(map_, agent), b.observation);
    return masked_argmax(out, b.action_mask.value_or(Mask{}));
  };
}

// ---------------------------------------------------------------------------
// Inputs and cached estimates

Vec PolicySet::cc_input(const PolicyId& pid, const AgentId& agent,
                        const Transition& t) const {
  if (acfg_.cc_use_own_obs) return t.obs;
  if (!t.shared_obs || !t.shared_actions)
    throw ProtocolError("centralized critic input requested before postprocessing");
  Vec in = *t.shared_obs;
  if (acfg_.algo == AlgoName::coma) {
    const int n_actions = spec_.action_space.n;
    for (int a : *t.shared_actions) {
      const size_t base = in.size();
      in.resize(base + static_cast<size_t>(n_actions), 0.0);
      if (a >= 0) in[base + static_cast<size_t>(a)] = 1.0;
    }
  }
  in.insert(in.end(), t.obs.begin(), t.obs.end());
  if (nets(pid).multi_agent) {
    const size_t base = in.size();
    in.resize(base + spec_.agents.size(), 0.0);
    in[base + static_cast<size_t>(spec_.agent_index(agent))] = 1.0;
  }
  return in;
}

double PolicySet::own_value(const PolicyId& pid, const Transition& t) const {
  return forward(nets(pid).critic, t.obs)[0];
}

double PolicySet::cc_value(const PolicyId& pid, const AgentId& agent,
                           const Transition& t) const {
  const Vec out = forward(nets(pid).critic, cc_input(pid, agent, t));
  if (acfg_.algo == AlgoName::coma) return out[static_cast<size_t>(t.action)];
  return out[0];
}

double PolicySet::logp_of(const PolicyId& pid, const Transition& t) const {
  const Vec probs =
      masked_softmax(forward(nets(pid).actor, t.obs), t.action_mask);
  return std::log(probs[static_cast<size_t>(t.action)]);
}

double PolicySet::target_next_max(const PolicyId& pid,
                                  const Transition& t) const {
  if (t.next_obs.empty()) return 0.0;
  const Vec q = forward(nets(pid).target_actor, t.next_obs);
  return masked_max(q, t.next_action_mask);
}

void PolicySet::postprocess(Buffers& buffers) const {
  switch (category()) {
    case AlgoCategory::independent: {
      if (acfg_.algo == AlgoName::iql) {
        postprocess_independent(buffers, nullptr, acfg_.gamma,
                                acfg_.gae_lambda);
        return;
      }
      OwnEstimators est;
      est.value = [this](const AgentId& a, const Transition& t) {
        return own_value(resolve(map_, a), t);
      };
      est.logp = [this](const AgentId& a, const Transition& t) {
        return logp_of(resolve(map_, a), t);
      };
      postprocess_independent(buffers, &est, acfg_.gamma, acfg_.gae_lambda);
      return;
    }
    case AlgoCategory::centralized_critic: {
      CentralEstimators est;
      est.central_value = [this](const AgentId& a, const Transition& t) {
        return cc_value(resolve(map_, a), a, t);
      };
      est.logp = [this](const AgentId& a, const Transition& t) {
        return logp_of(resolve(map_, a), t);
      };
      postprocess_centralized_critic(buffers, spec_, est, acfg_.gamma,
                                     acfg_.gae_lambda);
      return;
    }
    case AlgoCategory::value_decomposition: {
      const bool needs_state = mixer_.kind == MixerKind::monotonic;
      VdEstimators est;
      if (acfg_.algo == AlgoName::vda2c) {
        est.value = [this](const AgentId& a, const Transition& t) {
          return own_value(resolve(map_, a), t);
        };
        postprocess_value_decomposition(buffers, spec_, est, needs_state,
                                        acfg_.gamma);
      } else {
        est.value = [this](const AgentId& a, const Transition& t) {
          const Vec q = forward(nets(resolve(map_, a)).actor, t.obs);
          return q[static_cast<size_t>(t.action)];
        };
        est.next_value = [this](const AgentId& a, const Transition& t) {
          return target_next_max(resolve(map_, a), t);
        };
        postprocess_value_decomposition(buffers, spec_, est, needs_state,
                                        std::nullopt);
      }
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Updates

UpdateResult PolicySet::update_q(
    const std::vector<std::pair<AgentId, const Transition*>>& sample) {
  std::map<PolicyId, std::vector<const Transition*>> by_pid;
  for (const auto& [agent, t] : sample)
    by_pid[resolve(map_, agent)].push_back(t);

  double sq_sum = 0.0;
  size_t n_total = 0;
  for (auto& [pid, trans] : by_pid) {
    PolicyNets& pn = nets_.at(pid);
    const size_t N = trans.size();
    std::vector<Vec> xs(N);
    for (size_t i = 0; i < N; ++i) xs[i] = trans[i]->obs;
    const std::vector<Vec> qs = kernels::batch_forward(pn.actor, xs);

    std::vector<Vec> next_xs;
    std::vector<size_t> next_idx;
    for (size_t i = 0; i < N; ++i) {
      if (!trans[i]->next_obs.empty()) {
        next_xs.push_back(trans[i]->next_obs);
        next_idx.push_back(i);
      }
    }
    const std::vector<Vec> next_qs =
        kernels::batch_forward(pn.target_actor, next_xs);
    Vec next_max(N, 0.0);
    for (size_t k = 0; k < next_idx.size(); ++k)
      next_max[next_idx[k]] =
          masked_max(next_qs[k], trans[next_idx[k]]->next_action_mask);

    std::vector<Vec> upstreams(N, Vec(static_cast<size_t>(pn.actor.out_dim()), 0.0));
    for (size_t i = 0; i < N; ++i) {
      const Transition& t = *trans[i];
      const double y = q_target(t.reward, t.done, acfg_.gamma, next_max[i]);
      const double diff = qs[i][static_cast<size_t>(t.action)] - y;
      sq_sum += diff * diff;
      upstreams[i][static_cast<size_t>(t.action)] =
          2.0 * diff / static_cast<double>(N);
    }
    n_total += N;
    const GradientSet g = kernels::backward_sum(pn.actor, xs, upstreams);
    apply_update(pn.actor, g, pn.opt_actor);
  }
  const double loss = n_total ? sq_sum / static_cast<double>(n_total) : 0.0;
  if (!std::isfinite(loss)) throw NumericError("iql: non-finite loss");
  UpdateResult r;
  r.losses["loss_q"] = loss;
  return r;
}

UpdateResult PolicySet::update_vd_q(
    const std::vector<std::map<AgentId, const Transition*>>& steps) {
  const size_t n = spec_.agents.size();
  const size_t n_terms = steps.size() * n;
  if (n_terms == 0) return {};
  const double inv = 1.0 / static_cast<double>(n_terms);

  std::map<PolicyId, std::vector<Vec>> xs, upstreams;
  MixerGrads mg = MixerGrads::zeros_like(mixer_);
  double sq_sum = 0.0;

  for (const auto& step : steps) {
    for (size_t i = 0; i < n; ++i) {
      const AgentId& agent = spec_.agents[i];
      const Transition& t = *step.at(agent);
      if (!t.peer_values)
        throw ProtocolError("value-decomposition update before postprocessing");
      const PolicyId& pid = resolve(map_, agent);
      PolicyNets& pn = nets_.at(pid);

      // Own entry live (gradient path), peers as injected at sampling time.
      const Vec q_own = forward(pn.actor, t.obs);
      Vec qvec = *t.peer_values;
      qvec[i] = q_own[static_cast<size_t>(t.action)];

      const Vec state = t.shared_obs ? *t.shared_obs : Vec{};
      const double q_tot = mix_forward(mixer_, qvec, state);

      double y = t.reward;
      if (!t.done) {
        Vec tvec = t.peer_target_values ? *t.peer_target_values : Vec(n, 0.0);
        tvec[i] = target_next_max(pid, t);
        const Vec next_state =
            t.next_shared_obs ? *t.next_shared_obs : Vec{};
        y += acfg_.gamma * mix_forward(target_mixer_, tvec, next_state);
      }
      const double diff = q_tot - y;
      sq_sum += diff * diff;

      // Hypernet grads accumulate in mg across terms; mg.d_q is
      // rewritten per call and read back immediately.
      mix_forward_backward(mixer_, qvec, state, 2.0 * diff * inv, mg);
      Vec up(static_cast<size_t>(pn.actor.out_dim()), 0.0);
      up[static_cast<size_t>(t.action)] = mg.d_q[i];
      xs[pid].push_back(t.obs);
      upstreams[pid].push_back(std::move(up));
    }
  }

  for (auto& [pid, x] : xs) {
    PolicyNets& pn = nets_.at(pid);
    const GradientSet g = kernels::backward_sum(pn.actor, x, upstreams[pid]);
    apply_update(pn.actor, g, pn.opt_actor);
  }
  apply_update(mixer_, mg, opt_mixer_);

  const double loss = sq_sum * inv;
  if (!std::isfinite(loss))
    throw NumericError(to_string(acfg_.algo) + ": non-finite loss");
  UpdateResult r;
  r.losses["loss_q"] = loss;
  return r;
}

UpdateResult PolicySet::update_pg(const SampleBatch& batch) {
  const bool ppo = is_ppo(acfg_.algo);
  const int epochs = ppo ? acfg_.ppo_epochs : 1;
  UpdateResult res;
  double actor_loss_sum = 0.0, critic_loss_sum = 0.0, entropy_sum = 0.0;
  size_t n_total = 0;
  // Mixer gradients pool across every policy's pass; one step at the end.
  MixerGrads mixer_acc = MixerGrads::zeros_like(mixer_);

  for (const auto& [pid, rows] : batch.groups) {
    PolicyNets& pn = nets_.at(pid);
    const size_t N = rows.size();
    if (N == 0) continue;
    const double invN = 1.0 / static_cast<double>(N);
    const int n_actions = pn.actor.out_dim();

    std::vector<Vec> actor_xs(N), critic_xs(N);
    Vec advantages(N, 0.0), returns(N, 0.0), logp_old(N, 0.0);
    std::vector<const Transition*> trans(N);
    for (size_t i = 0; i < N; ++i) {
      const auto& [agent, t] = rows[i];
      trans[i] = t;
      actor_xs[i] = t->obs;
      if (!t->return_)
        throw ProtocolError("policy-gradient update before postprocessing");
      returns[i] = *t->return_;
      if (t->logp_old) logp_old[i] = *t->logp_old;
      switch (acfg_.algo) {
        case AlgoName::ia2c:
        case AlgoName::ippo:
          critic_xs[i] = t->obs;
          if (!t->advantage)
            throw ProtocolError("policy-gradient update before postprocessing");
          advantages[i] = *t->advantage;
          break;
        case AlgoName::maa2c:
        case AlgoName::mappo:
          critic_xs[i] = cc_input(pid, agent, *t);
          if (!t->advantage)
            throw ProtocolError("policy-gradient update before postprocessing");
          advantages[i] = *t->advantage;
          break;
        case AlgoName::coma:
          critic_xs[i] = cc_input(pid, agent, *t);  // advantage comes later
          break;
        case AlgoName::vda2c:
          critic_xs[i] = t->obs;
          break;
        default:
          throw ProtocolError("update_pg called for a Q-family algorithm");
      }
    }

    // COMA: counterfactual advantage from the pre-update critic/actor.
    if (acfg_.algo == AlgoName::coma) {
      const std::vector<Vec> q_all = kernels::batch_forward(pn.critic, critic_xs);
      const std::vector<Vec> logits = kernels::batch_forward(pn.actor, actor_xs);
      for (size_t i = 0; i < N; ++i) {
        const Vec probs = masked_softmax(logits[i], trans[i]->action_mask);
        advantages[i] = coma_advantage(q_all[i], probs, trans[i]->action);
      }
    }
    // VDA2C: advantage = team return - mixed value, all at sampling time.
    if (acfg_.algo == AlgoName::vda2c) {
      for (size_t i = 0; i < N; ++i) {
        const Transition& t = *trans[i];
        if (!t.peer_values)
          throw ProtocolError("vda2c update before postprocessing");
        const Vec state = t.shared_obs ? *t.shared_obs : Vec{};
        advantages[i] = returns[i] - mix_forward(mixer_, *t.peer_values, state);
      }
    }

    if (ppo && acfg_.advantage_norm) {
      double mu = 0.0;
      for (double a : advantages) mu += a;
      mu *= invN;
      double var = 0.0;
      for (double a : advantages) var += (a - mu) * (a - mu);
      const double sd = std::sqrt(var * invN);
      for (auto& a : advantages) a = (a - mu) / (sd + 1e-8);
    }

    for (int epoch = 0; epoch < epochs; ++epoch) {
      const std::vector<Vec> logits = kernels::batch_forward(pn.actor, actor_xs);
      std::vector<Vec> actor_up(N, Vec(static_cast<size_t>(n_actions), 0.0));
      Vec logp(N, 0.0), ent(N, 0.0);
      for (size_t i = 0; i < N; ++i) {
        const Transition& t = *trans[i];
        const Vec probs = masked_softmax(logits[i], t.action_mask);
        const size_t a = static_cast<size_t>(t.action);
        logp[i] = std::log(probs[a]);
        ent[i] = entropy_of(probs);
        // d(-surrogate)/dlogp; A2C surrogate is logp*A itself.
        double dsurr_dlogp = advantages[i];
        if (ppo) {
          const double ratio = std::exp(logp[i] - logp_old[i]);
          const double s1 = ratio * advantages[i];
          const double s2 = std::clamp(ratio, 1.0 - acfg_.ppo_clip,
                                       1.0 + acfg_.ppo_clip) *
                            advantages[i];
          dsurr_dlogp = s1 <= s2 ? s1 : 0.0;
        }
        for (size_t j = 0; j < probs.size(); ++j) {
          if (probs[j] <= 0.0 && j != a) continue;  // illegal: no path
          const double dlogp_dz = (j == a ? 1.0 : 0.0) - probs[j];
          double g = -dsurr_dlogp * dlogp_dz;
          if (probs[j] > 0.0 && acfg_.entropy_coef > 0.0)
            g += acfg_.entropy_coef * probs[j] * (std::log(probs[j]) + ent[i]);
          actor_up[i][j] = g * invN;
        }
      }
      if (epoch == 0) {
        double surr = 0.0;
        if (ppo) {
          for (size_t i = 0; i < N; ++i)
            surr -= ppo_surrogate(std::exp(logp[i] - logp_old[i]),
                                  advantages[i], acfg_.ppo_clip) *
                    invN;
          double e = 0.0;
          for (double h : ent) e += h;
          surr -= acfg_.entropy_coef * e * invN;
          actor_loss_sum += surr * static_cast<double>(N);
        } else {
          actor_loss_sum +=
              pg_actor_loss(logp, advantages, ent, acfg_.entropy_coef) *
              static_cast<double>(N);
        }
        for (double h : ent) entropy_sum += h;
      }

      const GradientSet ga = kernels::backward_sum(pn.actor, actor_xs, actor_up);

      // Critic pass for this epoch.
      GradientSet gc;
      double vloss = 0.0;
      if (acfg_.algo == AlgoName::vda2c) {
        std::vector<Vec> critic_up(N, Vec(1, 0.0));
        const std::vector<Vec> v_own = kernels::batch_forward(pn.critic, critic_xs);
        for (size_t i = 0; i < N; ++i) {
          const Transition& t = *trans[i];
          const size_t slot = static_cast<size_t>(spec_.agent_index(t.agent_id));
          Vec vvec = *t.peer_values;
          vvec[slot] = v_own[i][0];
          const Vec state = t.shared_obs ? *t.shared_obs : Vec{};
          const double v_tot = mix_forward(mixer_, vvec, state);
          const double diff = v_tot - returns[i];
          vloss += diff * diff * invN;
          mix_forward_backward(mixer_, vvec, state, 2.0 * diff * invN,
                               mixer_acc);
          critic_up[i][0] = mixer_acc.d_q[slot];
        }
        gc = kernels::backward_sum(pn.critic, critic_xs, critic_up);
      } else {
        const std::vector<Vec> values = kernels::batch_forward(pn.critic, critic_xs);
        std::vector<Vec> critic_up(
            N, Vec(static_cast<size_t>(pn.critic.out_dim()), 0.0));
        for (size_t i = 0; i < N; ++i) {
          const size_t slot = acfg_.algo == AlgoName::coma
                                  ? static_cast<size_t>(trans[i]->action)
                                  : 0;
          const double diff = values[i][slot] - returns[i];
          vloss += diff * diff * invN;
          critic_up[i][slot] = 2.0 * diff * invN;
        }
        gc = kernels::backward_sum(pn.critic, critic_xs, critic_up);
      }
      if (epoch == 0) critic_loss_sum += vloss * static_cast<double>(N);

      apply_update(pn.actor, ga, pn.opt_actor);
      apply_update(pn.critic, gc, pn.opt_critic);
    }
    n_total += N;
  }
  if (acfg_.algo == AlgoName::vda2c) apply_update(mixer_, mixer_acc, opt_mixer_);

  if (n_total) {
    res.losses["loss_actor"] = actor_loss_sum / static_cast<double>(n_total);
    res.losses["loss_critic"] = critic_loss_sum / static_cast<double>(n_total);
    res.losses["entropy"] = entropy_sum / static_cast<double>(n_total);
    if (!std::isfinite(res.losses["loss_actor"]) ||
        !std::isfinite(res.losses["loss_critic"]))
      throw NumericError(to_string(acfg_.algo) + ": non-finite loss");
  }
  return res;
}

UpdateResult PolicySet::update(const SampleBatch& on_policy_batch,
                               const EpisodeReplay& replay, Rng& sample_rng) {
  switch (acfg_.algo) {
    case AlgoName::iql:
      return update_q(replay.sample_transitions(
          static_cast<size_t>(acfg_.batch_size), sample_rng));
    case AlgoName::vdn:
    case AlgoName::qmix:
      return update_vd_q(replay.sample_steps(
          static_cast<size_t>(acfg_.batch_size), sample_rng));
    default:
      return update_pg(on_policy_batch);
  }
}

void PolicySet::maybe_refresh_targets(long env_steps) {
  if (!is_q_family(acfg_.algo)) return;
  if (env_steps - last_target_refresh_ < acfg_.target_update_period) return;
  for (auto& [pid, pn] : nets_) pn.target_actor = pn.actor;
  target_mixer_ = mixer_;
  last_target_refresh_ = env_steps;
}

uint64_t PolicySet::checksum() const {
  uint64_t h = 1469598103934665603ULL;
  auto mix_in = [&h](uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  for (const auto& [pid, pn] : nets_) {
    mix_in(param_checksum(pn.actor));
    if (!pn.critic.sizes.empty()) mix_in(param_checksum(pn.critic));
    if (!pn.target_actor.sizes.empty()) mix_in(param_checksum(pn.target_actor));
  }
  if (mixer_.kind == MixerKind::monotonic) {
    mix_in(param_checksum(mixer_.hyper_w1));
    mix_in(param_checksum(mixer_.hyper_b1));
    mix_in(param_checksum(mixer_.hyper_w2));
    mix_in(param_checksum(mixer_.hyper_b2));
  }
  return h;
}

void PolicySet::save(std::ostream& os) const {
  os << "policies " << nets_.size() << "\n";
  for (const auto& [pid, pn] : nets_) {
    os << "policy " << pid << " " << (pn.target_actor.sizes.empty() ? 0 : 1)
       << " " << (pn.critic.sizes.empty() ? 0 : 1) << "\n";
    write_mlp(os, pn.actor);
    if (!pn.target_actor.sizes.empty()) write_mlp(os, pn.target_actor);
    if (!pn.critic.sizes.empty()) write_mlp(os, pn.critic);
  }
  const bool has_mixer = category() == AlgoCategory::value_decomposition;
  os << "has_mixer " << (has_mixer ? 1 : 0) << "\n";
  if (has_mixer) {
    write_mixer(os, mixer_);
    write_mixer(os, target_mixer_);
  }
}

void PolicySet::load(std::istream& is) {
  std::string tag;
  size_t n = 0;
  is >> tag >> n;
  if (tag != "policies" || !is)
    throw ShapeError("checkpoint: expected policies record");
  if (n != nets_.size())
    throw ShapeError("checkpoint: policy count mismatch");
  for (size_t k = 0; k < n; ++k) {
    std::string pid;
    int has_target = 0, has_critic = 0;
    is >> tag >> pid >> has_target >> has_critic;
    if (tag != "policy" || !is)
      throw ShapeError("checkpoint: expected policy record");
    auto it = nets_.find(pid);
    if (it == nets_.end())
      throw ShapeError("checkpoint: unknown policy '" + pid + "'");
    it->second.actor = read_mlp(is);
    if (has_target) it->second.target_actor = read_mlp(is);
    if (has_critic) it->second.critic = read_mlp(is);
  }
  int has_mixer = 0;
  is >> tag >> has_mixer;
  if (tag != "has_mixer" || !is)
    throw ShapeError("checkpoint: expected mixer record");
  if (has_mixer) {
    mixer_ = read_mixer(is);
    target_mixer_ = read_mixer(is);
  }
}

}  // namespace marl

// Acceptance gate: runs every release criterion and prints one PASS/FAIL
// line per criterion. Exit code 0 iff all pass. Each check is
// self-contained and uses its own oracle (finite differences, brute-force
// double loops, closed-form optima) rather than trusting library code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "marl/algos.hpp"
#include "marl/approx.hpp"
#include "marl/dataflow.hpp"
#include "marl/envs.hpp"
#include "marl/mixer.hpp"
#include "marl/runner.hpp"

using namespace marl;
namespace fs = std::filesystem;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw CheckFailure(what);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "marl_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string scratch(const std::string& tag) {
  fs::path p = scratch_root() / tag;
  fs::create_directories(p);
  return p.string();
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients vs central finite differences.

// Smallest |pre-activation| over the hidden layers; the output layer is
// linear and has no kink.
double min_abs_preact(const Mlp& net, const Vec& x) {
  double min_abs = 1e300;
  Vec a = x;
  for (size_t l = 0; l < net.n_layers(); ++l) {
    const int rows = net.sizes[l + 1], cols = net.sizes[l];
    Vec pre(rows);
    for (int i = 0; i < rows; ++i) {
      double s = net.biases[l][i];
      for (int j = 0; j < cols; ++j) s += net.weights[l][i * cols + j] * a[j];
      pre[i] = s;
    }
    if (l + 1 == net.n_layers()) break;
    for (double p : pre) min_abs = std::min(min_abs, std::fabs(p));
    a.resize(pre.size());
    for (size_t i = 0; i < pre.size(); ++i)
      a[i] = net.activation == Activation::relu ? std::max(0.0, pre[i])
                                                : std::tanh(pre[i]);
  }
  return min_abs;
}

std::string check_gradients() {
  const std::vector<std::vector<int>> shapes = {
      {2, 3}, {3, 5, 2}, {4, 8, 8, 1}, {5, 4, 4, 4, 3}};
  const double h = 1e-5;
  double worst = 0.0;

  for (int k = 0; k < 50; ++k) {
    const auto& sizes = shapes[k % shapes.size()];
    const Activation act = (k % 2 == 0) ? Activation::tanh : Activation::relu;
    Mlp net = init_params(sizes, derive_seed(1000, k), act);
    Rng rng(derive_seed(2000, k));
    // Zero biases leave dead relu chains sitting exactly on the kink,
    // where the two-sided difference is ill-posed; jitter them off it.
    for (Vec& layer : net.biases)
      for (double& b : layer) b = 0.1 * rng.uniform(-1.0, 1.0);
    Vec x(net.in_dim()), upstream(net.out_dim());
    for (double& v : upstream) v = rng.uniform(-1.0, 1.0);
    for (int attempt = 0;; ++attempt) {
      for (double& v : x) v = rng.uniform(-1.0, 1.0);
      if (act == Activation::tanh || min_abs_preact(net, x) > 1e-3) break;
      require(attempt < 50, "no kink-free relu probe point found");
    }

    const auto loss = [&](const Mlp& m) {
      const Vec y = forward(m, x);
      double s = 0.0;
      for (size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
      return s;
    };

    GradientSet grads = backward(net, x, upstream);
    Vec analytic;
    grads.flatten(analytic);

    Vec theta;
    net.flatten(theta);
    for (size_t i = 0; i < theta.size(); ++i) {
      Vec t = theta;
      t[i] = theta[i] + h;
      net.unflatten(t);
      const double up = loss(net);
      t[i] = theta[i] - h;
      net.unflatten(t);
      const double dn = loss(net);
      net.unflatten(theta);
      const double fd = (up - dn) / (2.0 * h);
      const double rel = std::fabs(analytic[i] - fd) /
                         std::max({1.0, std::fabs(analytic[i]), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
    for (size_t i = 0; i < x.size(); ++i) {
      Vec xs = x;
      xs[i] = x[i] + h;
      const double up = [&] { const Vec y = forward(net, xs); double s = 0; for (size_t j = 0; j < y.size(); ++j) s += upstream[j] * y[j]; return s; }();
      xs[i] = x[i] - h;
      const double dn = [&] { const Vec y = forward(net, xs); double s = 0; for (size_t j = 0; j < y.size(); ++j) s += upstream[j] * y[j]; return s; }();
      const double fd = (up - dn) / (2.0 * h);
      const double rel = std::fabs(grads.d_input[i] - fd) /
                         std::max({1.0, std::fabs(grads.d_input[i]), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
  }
  require(worst <= 1e-4, "max relative error " + fmt(worst) + " > 1e-4");
  return "50 nets, 4 shape families, max rel err " + fmt(worst);
}

// ---------------------------------------------------------------------------
// 2. GAE vs a brute-force double loop.

std::string check_gae() {
  double worst = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    Rng rng(derive_seed(31337, inst));
    const int T = 1 + rng.uniform_int(20);
    const double gamma = rng.uniform();
    const double lambda = rng.uniform();
    Vec rewards(T), values(T + 1);
    for (double& v : rewards) v = rng.uniform(-2.0, 2.0);
    for (double& v : values) v = rng.uniform(-2.0, 2.0);

    const GaeResult got = compute_gae(rewards, values, gamma, lambda);
    for (int t = 0; t < T; ++t) {
      double adv = 0.0;
      for (int l = t; l < T; ++l) {
        const double delta = rewards[l] + gamma * values[l + 1] - values[l];
        adv += std::pow(gamma * lambda, l - t) * delta;
      }
      worst = std::max(worst, std::fabs(got.advantages[t] - adv));
      worst = std::max(worst, std::fabs(got.returns[t] - (adv + values[t])));
    }
  }
  require(worst <= 1e-10, "max abs deviation " + fmt(worst) + " > 1e-10");
  return "1000 instances, max abs deviation " + fmt(worst);
}

// ---------------------------------------------------------------------------
// 3. Category contract: the exact injected-field pattern per algorithm.

std::string check_category_contract() {
  const std::vector<AlgoName> all = {
      AlgoName::iql,   AlgoName::ia2c, AlgoName::ippo,
      AlgoName::maa2c, AlgoName::mappo, AlgoName::coma,
      AlgoName::vdn,   AlgoName::qmix, AlgoName::vda2c};

  const auto run_one = [](AlgoName algo, const std::string& env_name,
                          const nlohmann::json& env_cfg) {
    auto env = make_env(env_name, env_cfg);
    const PolicyMap map = build_policy_map(env->spec(), SharingMode::full);
    AlgoConfig acfg;
    acfg.algo = algo;
    ModelConfig mcfg;
    mcfg.hidden = {8};
    PolicySet ps(env->spec(), map, acfg, mcfg, 99);
    CollectResult res = collect_episode(*env, ps.make_selector(0.5), 1234);
    instrument::drain_postprocess_log();
    ps.postprocess(res.buffers);
    const auto log = instrument::drain_postprocess_log();
    require(log.size() == 1 && log[0] == to_string(category_of(algo)),
            to_string(algo) + ": postprocess dispatched to the wrong category");

    const bool vd_state = category_of(algo) == AlgoCategory::value_decomposition &&
                          acfg.mixer_kind() == MixerKind::monotonic;
    for (const auto& [agent, buf] : res.buffers) {
      (void)agent;
      for (const Transition& t : buf.transitions) {
        switch (category_of(algo)) {
          case AlgoCategory::independent:
            require(!t.shared_obs && !t.shared_actions && !t.peer_values,
                    to_string(algo) + ": independent transition carries shared fields");
            break;
          case AlgoCategory::centralized_critic:
            require(t.shared_obs.has_value() && t.shared_actions.has_value() &&
                        !t.peer_values,
                    to_string(algo) + ": centralized-critic pattern broken");
            break;
          case AlgoCategory::value_decomposition:
            require(t.shared_obs.has_value() == vd_state &&
                        !t.shared_actions && t.peer_values.has_value(),
                    to_string(algo) + ": value-decomposition pattern broken");
            if (t.shared_obs) {
              require(static_cast<int>(t.shared_obs->size()) > 0,
                      to_string(algo) + ": empty shared_obs");
            }
            break;
        }
      }
    }
    return res;
  };

  const nlohmann::json coord = {{"scenario", "coordination"}, {"horizon", 6}};
  for (AlgoName a : all) run_one(a, "matrix", coord);

  // State-conditional branch: with a global state the mixer conditions on
  // it, and shared_obs must be exactly that state.
  CollectResult res = run_one(AlgoName::qmix, "spread_grid",
                              {{"n_agents", 2}, {"horizon", 6}});
  for (const auto& [agent, buf] : res.buffers) {
    (void)agent;
    for (const Transition& t : buf.transitions)
      require(t.shared_obs.has_value() && *t.shared_obs == t.global_state,
              "qmix on spread_grid: shared_obs is not the global state");
  }
  return "9 algorithms on matrix + state-conditional qmix on spread_grid";
}

// ---------------------------------------------------------------------------
// 4. Mixer monotonicity by finite differences.

std::string check_mixer_monotonicity() {
  AlgoConfig qmix_cfg, vda2c_cfg;
  qmix_cfg.algo = AlgoName::qmix;
  vda2c_cfg.algo = AlgoName::vda2c;
  require(qmix_cfg.mixer_kind() == MixerKind::monotonic &&
              vda2c_cfg.mixer_kind() == MixerKind::monotonic,
          "qmix/vda2c are not pinned to the monotonic mixer");

  const double h = 1e-5;
  double min_slope = 1e300;
  for (int p = 0; p < 1000; ++p) {
    Rng rng(derive_seed(4242, p));
    const int n = 2 + rng.uniform_int(4);
    const int state_dim = 1 + rng.uniform_int(4);
    const int hidden = 1 + rng.uniform_int(8);
    const MixerKind kind =
        (p % 2 == 0 ? qmix_cfg : vda2c_cfg).mixer_kind();
    const Mixer mixer = make_mixer(kind, n, state_dim, hidden, derive_seed(777, p));
    Vec q(n), state(state_dim);
    for (double& v : q) v = rng.uniform(-2.0, 2.0);
    for (double& v : state) v = rng.uniform(-1.0, 1.0);

    for (int i = 0; i < n; ++i) {
      Vec qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      const double slope =
          (mix_forward(mixer, qp, state) - mix_forward(mixer, qm, state)) /
          (2.0 * h);
      min_slope = std::min(min_slope, slope);
    }
  }
  require(min_slope >= -1e-9,
          "dQ_tot/dq_i = " + fmt(min_slope) + " below -1e-9");
  return "1000 random (input, parameter) probes, min slope " + fmt(min_slope);
}

// ---------------------------------------------------------------------------
// 5. Reduction identities, checked at 10 points during training.

std::vector<uint64_t> q_family_checksums(AlgoName algo,
                                         const nlohmann::json& env_cfg,
                                         int iterations) {
  auto env = make_env("matrix", env_cfg);
  const PolicyMap map = build_policy_map(env->spec(), SharingMode::full);
  AlgoConfig cfg;
  cfg.algo = algo;
  cfg.batch_size = 16;  // power of two keeps the 1/N scaling bit-exact
  cfg.optimizer = "sgd";
  cfg.lr_actor = 0.05;
  cfg.gamma = 0.9;
  cfg.target_update_period = 24;
  ModelConfig mcfg;
  mcfg.hidden = {8};
  PolicySet ps(env->spec(), map, cfg, mcfg, 321);
  EpisodeReplay replay(400);

  std::vector<uint64_t> sums;
  long env_steps = 0;
  for (int it = 0; it < iterations; ++it) {
    ps.maybe_refresh_targets(env_steps);
    CollectResult res =
        collect_episode(*env, ps.make_selector(0.3), derive_seed(555, it));
    env_steps += res.env_steps;
    ps.postprocess(res.buffers);
    replay.add(std::move(res.buffers));
    Rng rng(derive_seed(777, it));
    ps.update({}, replay, rng);
    sums.push_back(ps.checksum());
  }
  return sums;
}

std::vector<uint64_t> pg_checksums(AlgoName algo, bool cc_own_obs,
                                   int iterations) {
  auto env = make_env("matrix", {{"scenario", "coordination"}, {"horizon", 8}});
  const PolicyMap map = build_policy_map(env->spec(), SharingMode::none);
  AlgoConfig cfg;
  cfg.algo = algo;
  cfg.cc_use_own_obs = cc_own_obs;
  cfg.optimizer = "sgd";
  cfg.lr_actor = 0.02;
  cfg.lr_critic = 0.02;
  cfg.advantage_norm = false;
  ModelConfig mcfg;
  mcfg.hidden = {8};
  PolicySet ps(env->spec(), map, cfg, mcfg, 654);

  std::vector<uint64_t> sums;
  for (int it = 0; it < iterations; ++it) {
    CollectResult res =
        collect_episode(*env, ps.make_selector(0.0), derive_seed(888, it));
    ps.postprocess(res.buffers);
    const SampleBatch batch = build_sample_batch(res.buffers, map);
    EpisodeReplay unused(10);
    Rng rng(derive_seed(999, it));
    ps.update(batch, unused, rng);
    sums.push_back(ps.checksum());
  }
  return sums;
}

std::string check_reductions() {
  const nlohmann::json bandit = {{"scenario", "custom"},
                                 {"n_agents", 1},
                                 {"n_actions", 2},
                                 {"mode", "cooperative"},
                                 {"horizon", 8},
                                 {"payoffs", {{"team", {0.0, 1.0}}}},
                                 {"groups", {{"agent_0", "team"}}}};
  const auto iql = q_family_checksums(AlgoName::iql, bandit, 10);
  const auto vdn = q_family_checksums(AlgoName::vdn, bandit, 10);
  require(iql == vdn, "VDN(n=1) diverged from IQL");
  require(iql.front() != iql.back(), "IQL/VDN run did not train");

  const auto ia2c = pg_checksums(AlgoName::ia2c, false, 10);
  const auto maa2c_own = pg_checksums(AlgoName::maa2c, true, 10);
  require(ia2c == maa2c_own, "MAA2C-with-own-obs diverged from IA2C");
  require(pg_checksums(AlgoName::maa2c, false, 10) != ia2c,
          "default MAA2C unexpectedly equals IA2C");

  // Full sharing: one parameter set, so identical bundles must give
  // bitwise-identical action distributions for every agent, at every
  // checkpoint of a real training run.
  RunConfig cfg = default_config();
  cfg.task.env = "spread_grid";
  cfg.task.env_config = {{"n_agents", 3}, {"horizon", 25}};
  cfg.algorithm.algo = AlgoName::mappo;
  cfg.model.hidden = {16};
  cfg.training.sharing = "full";
  cfg.training.total_steps = 250;
  cfg.training.out_dir = scratch("reductions");
  Trainer trainer(cfg, 5);
  require(trainer.policies().policy_ids().size() == 1,
          "full sharing did not produce a single policy");

  auto probe_env = make_env(cfg.task.env, cfg.task.env_config);
  const ObservationBundle probe = probe_env->reset(123).observations.begin()->second;
  const auto& agents = probe_env->spec().agents;
  int checkpoints = 0;
  while (!trainer.finished()) {
    trainer.run_iteration();
    const Vec ref = trainer.policies().action_distribution(agents[0], probe, 0.0);
    for (const AgentId& a : agents)
      require(trainer.policies().action_distribution(a, probe, 0.0) == ref,
              "full-sharing agents disagreed at iteration " +
                  std::to_string(trainer.iteration()));
    ++checkpoints;
  }
  require(checkpoints >= 10, "fewer than 10 training checkpoints");
  return "all three identities bit-exact at " + std::to_string(checkpoints) +
         " checkpoints";
}

// ---------------------------------------------------------------------------
// 6. Desk-scale convergence on the coordination matrix game.

RunConfig coordination_base(const std::string& tag) {
  RunConfig cfg = default_config();
  cfg.task.env = "matrix";
  cfg.task.env_config = {{"scenario", "coordination"}, {"horizon", 10}};
  cfg.model.hidden = {16, 16};
  cfg.training.sharing = "none";
  cfg.training.total_steps = 50000;
  cfg.training.eval_episodes = 1;  // deterministic greedy bandit
  cfg.training.out_dir = scratch(tag);
  return cfg;
}

// First env-step count at which a greedy evaluation of group `label`
// reaches `threshold` and then holds it for 10 consecutive evals (a
// transient crossing is not convergence); -1 when the budget runs out.
long steps_to_reach(const RunConfig& cfg, uint64_t seed, const std::string& label,
                    double threshold, int eval_every) {
  Trainer t(cfg, seed);
  long streak_start = -1;
  int streak = 0;
  while (!t.finished()) {
    t.run_iteration();
    if (t.iteration() % eval_every != 0) continue;
    if (t.evaluate_now().group_reward.at(label) >= threshold) {
      if (streak == 0) streak_start = t.env_steps();
      if (++streak == 10) return streak_start;
    } else {
      streak = 0;
    }
  }
  return -1;
}

std::string check_convergence() {
  const double optimum =
      coordination_matrix_config().max_payoff("team") * 10;  // horizon 10
  const double threshold = 0.95 * optimum;

  const std::vector<AlgoName> algos = {AlgoName::iql, AlgoName::vdn,
                                       AlgoName::qmix, AlgoName::ippo,
                                       AlgoName::mappo};
  long worst_steps = 0;
  std::string worst_tag;
  for (AlgoName algo : algos) {
    RunConfig cfg = coordination_base("convergence");
    cfg.algorithm.algo = algo;
    const bool q_family = algo == AlgoName::iql || algo == AlgoName::vdn ||
                          algo == AlgoName::qmix;
    if (q_family) {
      cfg.algorithm.lr_actor = 5e-3;
      cfg.algorithm.lr_mixer = 5e-3;
      cfg.algorithm.gamma = 0.9;
      cfg.algorithm.eps_decay_steps = 1500;
      cfg.algorithm.target_update_period = 100;
      cfg.algorithm.replay_capacity = 2000;
    } else {
      cfg.algorithm.lr_actor = 5e-3;
      cfg.algorithm.lr_critic = 5e-3;
      cfg.training.episodes_per_iteration = 10;
    }
    for (uint64_t seed : {1, 2, 3, 4}) {
      const long steps =
          steps_to_reach(cfg, seed, "team", threshold, q_family ? 5 : 1);
      require(steps > 0, to_string(algo) + " seed " + std::to_string(seed) +
                             " missed 95% of optimum within 50k steps");
      if (steps > worst_steps) {
        worst_steps = steps;
        worst_tag = to_string(algo) + "/seed " + std::to_string(seed);
      }
    }
  }
  return "5 algorithms x 4 seeds all >= " + fmt(threshold) +
         "; slowest " + worst_tag + " at " + std::to_string(worst_steps) +
         " steps";
}

// ---------------------------------------------------------------------------
// 7. Constant-sum balance under self-play.

std::string check_constant_sum() {
  // Matching pennies: the group rewards are exact negations, so the sum
  // must be exactly 0.0 at every evaluation — not merely small.
  RunConfig cfg = default_config();
  cfg.task.env = "matrix";
  cfg.task.env_config = {{"scenario", "pennies"}, {"horizon", 10}};
  cfg.algorithm.algo = AlgoName::iql;
  cfg.algorithm.eps_decay_steps = 300;
  cfg.model.hidden = {16};
  cfg.training.sharing = "none";
  cfg.training.total_steps = 600;
  cfg.training.eval_episodes = 2;
  cfg.training.out_dir = scratch("pennies");
  Trainer t(cfg, 11);
  int evals = 0;
  while (!t.finished()) {
    t.run_iteration();
    const EvalRow row = t.evaluate_now();
    require(row.reward_sum == 0.0,
            "pennies eval sum " + fmt(row.reward_sum) + " at iteration " +
                std::to_string(row.iteration));
    ++evals;
  }

  // Mixed 2v2: the team payoffs sum to zero per joint action, so the
  // summed group reward over late training must stay within tolerance.
  RunConfig mixed = default_config();
  mixed.task.env = "matrix";
  mixed.task.env_config = {{"scenario", "mixed_2v2"}, {"horizon", 10}};
  mixed.algorithm.algo = AlgoName::iql;
  mixed.algorithm.eps_decay_steps = 4000;
  mixed.model.hidden = {16};
  mixed.training.sharing = "none";
  mixed.training.total_steps = 10000;
  mixed.training.out_dir = scratch("mixed2v2");
  Trainer tm(mixed, 12);
  while (!tm.finished()) tm.run_iteration();
  const auto& rows = tm.metrics();
  require(!rows.empty(), "mixed 2v2 run produced no metrics");
  const size_t tail_start = rows.size() - rows.size() / 5;
  double acc = 0.0;
  for (size_t i = tail_start; i < rows.size(); ++i)
    acc += std::fabs(rows[i].reward_sum);
  const double tail_mean = acc / (rows.size() - tail_start);
  const double bound = 0.05 * mixed_2v2_config().max_abs_payoff();
  require(tail_mean <= bound, "mixed 2v2 |sum| " + fmt(tail_mean) +
                                  " over the last 20% exceeds " + fmt(bound));
  return "pennies exactly 0 at " + std::to_string(evals) +
         " evaluations; mixed 2v2 tail |sum| " + fmt(tail_mean) + " <= " +
         fmt(bound);
}

// ---------------------------------------------------------------------------
// 8. Interface conformance of every built-in.

std::string check_conformance_suite() {
  long episodes = 0;
  for (const std::string& name : env_registry_names()) {
    for (uint64_t seed : {1, 2, 3, 4}) {
      auto env = make_env(name, nlohmann::json::object());
      const ConformanceReport report = check_conformance(*env, 100, seed);
      require(report.pass(), name + " seed " + std::to_string(seed) + ":\n" +
                                 report.to_text());
      require(report.episodes_run == 100, name + ": short conformance run");
      episodes += report.episodes_run;
    }
  }

  // Async stepping: every agent's buffer holds exactly its turns.
  for (const auto& [n_agents, n_rounds] : std::vector<std::pair<int, int>>{
           {2, 4}, {3, 5}}) {
    auto env = make_env("turn_game",
                        {{"n_agents", n_agents}, {"n_rounds", n_rounds}});
    const int n_actions = env->spec().action_space.n;
    const ActionSelector random_legal =
        [n_actions](const AgentId&, const ObservationBundle& b, Rng& rng) {
          for (int tries = 0;; ++tries) {
            const int a = rng.uniform_int(n_actions);
            if (!b.action_mask || (*b.action_mask)[a]) return a;
            require(tries < 1000, "no legal action found");
          }
        };
    const CollectResult res = collect_episode(*env, random_legal, 77);
    require(res.buffers.size() == static_cast<size_t>(n_agents),
            "turn_game: missing agent buffers");
    for (const auto& [agent, buf] : res.buffers)
      require(buf.transitions.size() == static_cast<size_t>(n_rounds),
              agent + " buffer holds " + std::to_string(buf.transitions.size()) +
                  " transitions, expected " + std::to_string(n_rounds));
  }
  return std::to_string(episodes) + " conformance episodes clean; "
         "turn_game buffers match turns taken";
}

// ---------------------------------------------------------------------------
// 9. Sharing-mode transparency: same run, only the sharing key changes.

std::string check_sharing_transparency() {
  RunConfig base = default_config();
  base.task.env = "matrix";
  base.task.env_config = {{"scenario", "mixed_2v2"}, {"horizon", 10}};
  base.algorithm.algo = AlgoName::mappo;
  base.model.hidden = {16};
  base.training.total_steps = 200;
  base.training.eval_interval = 100;
  base.training.eval_episodes = 1;
  const nlohmann::json base_json = to_json(base);

  const std::map<std::string, size_t> expected = {
      {"full", 1}, {"group", 2}, {"none", 4}};
  for (const auto& [mode, cardinality] : expected) {
    nlohmann::json j = base_json;
    j["training"]["sharing"] = mode;  // the single changed key
    j["training"]["out_dir"] = scratch("sharing_" + mode);
    RunConfig cfg = config_from_json(j);
    Trainer t(cfg, 3);
    require(t.policies().policy_ids().size() == cardinality,
            mode + " sharing built " +
                std::to_string(t.policies().policy_ids().size()) +
                " policies, expected " + std::to_string(cardinality));
    t.run();
    require(t.finished(), mode + " sharing run did not finish");
  }
  return "mappo under full/group/none: 1/2/4 policies, all runs completed";
}

// ---------------------------------------------------------------------------
// 10. Byte-identical reruns from the recorded config.

std::string check_reproducibility() {
  RunConfig cfg = default_config();
  cfg.task.env = "matrix";
  cfg.task.env_config = {{"scenario", "coordination"}, {"horizon", 10}};
  cfg.algorithm.algo = AlgoName::iql;
  cfg.model.hidden = {16};
  cfg.training.total_steps = 300;
  cfg.training.eval_interval = 5;
  cfg.training.eval_episodes = 2;
  cfg.training.seeds = {7};
  cfg.training.workers = 1;
  cfg.training.out_dir = scratch("repro");
  train(cfg);

  const std::string recorded = cfg.training.out_dir + "/config.json";
  const RunConfig from_record = load_config({recorded}, {});
  const std::string metrics = cfg.training.out_dir + "/seed_7/metrics.csv";
  const std::string evals = cfg.training.out_dir + "/seed_7/eval.csv";

  train(from_record);
  const std::string m1 = slurp(metrics), e1 = slurp(evals);
  train(from_record);
  const std::string m2 = slurp(metrics), e2 = slurp(evals);
  require(!m1.empty() && m1.find('\n') != m1.rfind('\n'),
          "metrics file is empty or header-only");
  require(m1 == m2, "metrics.csv differs between reruns");
  require(e1 == e2, "eval.csv differs between reruns");
  return "two reruns from the recorded config byte-identical (" +
         std::to_string(m1.size()) + " bytes of metrics)";
}

// ---------------------------------------------------------------------------
// 11. Near-zero-Q pathology probe: payoffs x 1e-3 slow QMIX down.

std::string check_near_zero_q() {
  const auto make_cfg = [](double payoff_scale) {
    RunConfig cfg = coordination_base("nearzero");
    cfg.task.env_config["payoff_scale"] = payoff_scale;
    cfg.algorithm.algo = AlgoName::qmix;
    cfg.algorithm.optimizer = "sgd";  // keeps step size proportional to scale
    cfg.algorithm.lr_actor = 0.05;
    cfg.algorithm.lr_mixer = 0.05;
    cfg.algorithm.gamma = 0.9;
    cfg.algorithm.eps_decay_steps = 1500;
    cfg.algorithm.target_update_period = 100;
    cfg.algorithm.replay_capacity = 2000;
    cfg.training.total_steps = 40000;
    return cfg;
  };
  const auto threshold = [](double payoff_scale) {
    return 0.95 * coordination_matrix_config(payoff_scale).max_payoff("team") *
           10;
  };

  // Luck control, twice over. The net init can sit on the optimum by
  // chance, so only seeds whose untrained policy is below the bar count
  // (both scales share the init). And a single eval can cross the bar
  // transiently while the ordering is still noise, so time-to-95% is the
  // earliest eval from which the run stays at >= 95% to the end.
  std::vector<uint64_t> seeds;
  for (uint64_t s = 21; seeds.size() < 3; ++s) {
    require(s < 60, "no below-bar initializations found");
    if (Trainer(make_cfg(1.0), s).evaluate_now().group_reward.at("team") <
        threshold(1.0))
      seeds.push_back(s);
  }

  const long budget = make_cfg(1.0).training.total_steps;
  const auto reach_and_hold = [&](double payoff_scale, uint64_t seed,
                                  bool& censored) {
    Trainer t(make_cfg(payoff_scale), seed);
    std::vector<std::pair<long, double>> series;
    while (!t.finished()) {
      t.run_iteration();
      if (t.iteration() % 5 == 0)
        series.emplace_back(t.env_steps(),
                            t.evaluate_now().group_reward.at("team"));
    }
    long reached = -1;
    for (auto it = series.rbegin(); it != series.rend(); ++it) {
      if (it->second < threshold(payoff_scale)) break;
      reached = it->first;
    }
    censored = reached < 0;
    return censored ? budget : reached;  // censored: lower bound
  };

  double sum_unscaled = 0.0, sum_scaled = 0.0;
  int n_censored = 0;
  for (uint64_t seed : seeds) {
    bool censored = false;
    const long tu = reach_and_hold(1.0, seed, censored);
    require(!censored, "unscaled qmix seed " + std::to_string(seed) +
                           " never held 95% of optimum");
    sum_unscaled += tu;
    const long ts = reach_and_hold(1e-3, seed, censored);
    n_censored += censored ? 1 : 0;
    sum_scaled += ts;
  }
  const double ratio = sum_scaled / sum_unscaled;
  require(ratio >= 2.0, "scaled/unscaled time-to-95% ratio only " + fmt(ratio));
  return "3 seeds, mean time-to-95%: unscaled " + fmt(sum_unscaled / 3) +
         " steps, x1e-3 " + fmt(sum_scaled / 3) + " steps (" +
         std::to_string(n_censored) + " at budget), ratio " +
         (n_censored ? ">= " : "") + fmt(ratio);
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<std::string()> body;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 10, check_gradients},
      {2, "GAE oracle equivalence", 5, check_gae},
      {3, "category contract", 60, check_category_contract},
      {4, "mixer monotonicity", 10, check_mixer_monotonicity},
      {5, "reduction identities", 120, check_reductions},
      {6, "desk-scale convergence", 600, check_convergence},
      {7, "constant-sum balance", 300, check_constant_sum},
      {8, "interface conformance", 60, check_conformance_suite},
      {9, "sharing-mode transparency", 300, check_sharing_transparency},
      {10, "reproducibility", 120, check_reproducibility},
      {11, "near-zero-Q probe", 600, check_near_zero_q},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    try {
      detail = c.body();
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (ok && secs > c.budget_seconds) {
      ok = false;
      detail += " [exceeded " + fmt(c.budget_seconds) + "s budget]";
    }
    std::printf("[%s] %2d. %s: %s (%.1fs)\n", ok ? "PASS" : "FAIL", c.id,
                c.name.c_str(), detail.c_str(), secs);
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  if (failures) std::printf("%d of 11 criteria FAILED\n", failures);
  else std::printf("all 11 criteria passed\n");
  return failures == 0 ? 0 : 1;
}

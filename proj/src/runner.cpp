#include "marl/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "marl/kernels.hpp"

namespace marl {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// --- key validation -------------------------------------------------------

const std::vector<std::string> kSections = {"task", "algorithm", "model",
                                            "training"};

const std::vector<std::string> kTaskKeys = {"env", "env_config"};

const std::vector<std::string> kAlgorithmKeys = {
    "algo",        "gamma",           "lr_actor",
    "lr_critic",   "lr_mixer",        "ppo_clip",
    "gae_lambda",  "entropy_coef",    "eps_start",
    "eps_end",     "eps_decay_steps", "target_update_period",
    "batch_size",  "ppo_epochs",      "mixer_hidden",
    "replay_capacity", "advantage_norm", "cc_use_own_obs",
    "mixer",       "optimizer"};

const std::vector<std::string> kModelKeys = {"hidden", "activation"};

const std::vector<std::string> kTrainingKeys = {
    "total_steps", "workers",      "episodes_per_iteration",
    "eval_interval", "eval_episodes", "seeds",
    "sharing",     "policy_table", "out_dir",
    "dump_transitions"};

size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string suggest(const std::string& key,
                    const std::vector<std::string>& known) {
  size_t best = std::string::npos;
  std::string hit;
  for (const auto& k : known) {
    size_t d = edit_distance(key, k);
    if (d < best) {
      best = d;
      hit = k;
    }
  }
  if (best <= std::max<size_t>(2, key.size() / 3))
    return "; did you mean '" + hit + "'?";
  return "";
}

[[noreturn]] void unknown_key(const std::string& section,
                              const std::string& key,
                              const std::vector<std::string>& known) {
  throw ConfigError("config: unknown key '" + key + "' in section '" +
                    section + "'" + suggest(key, known));
}

[[noreturn]] void bad_type(const std::string& section, const std::string& key,
                           const char* want, const json& got) {
  throw ConfigError("config: " + section + "." + key + " expects " + want +
                    ", got " + got.type_name());
}

double as_double(const std::string& s, const std::string& k, const json& v) {
  if (!v.is_number()) bad_type(s, k, "a number", v);
  return v.get<double>();
}

long as_long(const std::string& s, const std::string& k, const json& v) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    bad_type(s, k, "an integer", v);
  return v.get<long>();
}

int as_int(const std::string& s, const std::string& k, const json& v) {
  return static_cast<int>(as_long(s, k, v));
}

bool as_bool(const std::string& s, const std::string& k, const json& v) {
  if (!v.is_boolean()) bad_type(s, k, "a boolean", v);
  return v.get<bool>();
}

std::string as_string(const std::string& s, const std::string& k,
                      const json& v) {
  if (!v.is_string()) bad_type(s, k, "a string", v);
  return v.get<std::string>();
}

void parse_task(const json& obj, TaskConfig& out) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "env") {
      out.env = as_string("task", key, value);
    } else if (key == "env_config") {
      if (!value.is_object()) bad_type("task", key, "an object", value);
      out.env_config = value;
    } else {
      unknown_key("task", key, kTaskKeys);
    }
  }
}

void parse_algorithm(const json& obj, AlgoConfig& out) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "algo") out.algo = algo_from_string(as_string("algorithm", key, value));
    else if (key == "gamma") out.gamma = as_double("algorithm", key, value);
    else if (key == "lr_actor") out.lr_actor = as_double("algorithm", key, value);
    else if (key == "lr_critic") out.lr_critic = as_double("algorithm", key, value);
    else if (key == "lr_mixer") out.lr_mixer = as_double("algorithm", key, value);
    else if (key == "ppo_clip") out.ppo_clip = as_double("algorithm", key, value);
    else if (key == "gae_lambda") out.gae_lambda = as_double("algorithm", key, value);
    else if (key == "entropy_coef") out.entropy_coef = as_double("algorithm", key, value);
    else if (key == "eps_start") out.eps_start = as_double("algorithm", key, value);
    else if (key == "eps_end") out.eps_end = as_double("algorithm", key, value);
    else if (key == "eps_decay_steps") out.eps_decay_steps = as_long("algorithm", key, value);
    else if (key == "target_update_period") out.target_update_period = as_int("algorithm", key, value);
    else if (key == "batch_size") out.batch_size = as_int("algorithm", key, value);
    else if (key == "ppo_epochs") out.ppo_epochs = as_int("algorithm", key, value);
    else if (key == "mixer_hidden") out.mixer_hidden = as_int("algorithm", key, value);
    else if (key == "replay_capacity") out.replay_capacity = as_int("algorithm", key, value);
    else if (key == "advantage_norm") out.advantage_norm = as_bool("algorithm", key, value);
    else if (key == "cc_use_own_obs") out.cc_use_own_obs = as_bool("algorithm", key, value);
    else if (key == "mixer") out.mixer = as_string("algorithm", key, value);
    else if (key == "optimizer") out.optimizer = as_string("algorithm", key, value);
    else unknown_key("algorithm", key, kAlgorithmKeys);
  }
}

void parse_model(const json& obj, ModelConfig& out) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "hidden") {
      if (!value.is_array()) bad_type("model", key, "an array of integers", value);
      out.hidden.clear();
      for (const auto& v : value) out.hidden.push_back(as_int("model", key, v));
    } else if (key == "activation") {
      out.activation = as_string("model", key, value);
    } else {
      unknown_key("model", key, kModelKeys);
    }
  }
}

void parse_training(const json& obj, TrainingConfig& out) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "total_steps") out.total_steps = as_long("training", key, value);
    else if (key == "workers") out.workers = as_int("training", key, value);
    else if (key == "episodes_per_iteration") out.episodes_per_iteration = as_int("training", key, value);
    else if (key == "eval_interval") out.eval_interval = as_int("training", key, value);
    else if (key == "eval_episodes") out.eval_episodes = as_int("training", key, value);
    else if (key == "seeds") {
      if (!value.is_array() || value.empty())
        bad_type("training", key, "a non-empty array of integers", value);
      out.seeds.clear();
      for (const auto& v : value) {
        if (!v.is_number_integer() && !v.is_number_unsigned())
          bad_type("training", key, "a non-empty array of integers", value);
        out.seeds.push_back(v.get<uint64_t>());
      }
    } else if (key == "sharing") out.sharing = as_string("training", key, value);
    else if (key == "policy_table") {
      if (!value.is_object()) bad_type("training", key, "an object", value);
      out.policy_table.clear();
      for (const auto& [agent, pid] : value.items())
        out.policy_table[agent] = as_string("training", key, pid);
    } else if (key == "out_dir") out.out_dir = as_string("training", key, value);
    else if (key == "dump_transitions") out.dump_transitions = as_bool("training", key, value);
    else unknown_key("training", key, kTrainingKeys);
  }
}

// Objects merge per key, everything else is replaced outright.
void deep_merge(json& base, const json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object())
      deep_merge(base[key], value);
    else
      base[key] = value;
  }
}

std::vector<std::string> split_path(const std::string& dotted) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : dotted) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

json parse_override_value(const std::string& raw) {
  json v = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (v.is_discarded()) return json(raw);  // bare words are strings
  return v;
}

void set_path(json& root, const std::string& dotted, const json& value) {
  auto parts = split_path(dotted);
  if (parts.size() < 2 || parts.front().empty() || parts.back().empty())
    throw ConfigError("config: override path '" + dotted +
                      "' must look like section.key");
  if (std::find(kSections.begin(), kSections.end(), parts[0]) ==
      kSections.end())
    throw ConfigError("config: unknown section '" + parts[0] + "' in '" +
                      dotted + "'" + suggest(parts[0], kSections));
  json* node = &root;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
      (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

bool uses_replay(AlgoName a) {
  return a == AlgoName::iql || a == AlgoName::vdn || a == AlgoName::qmix;
}

std::string csv_escape_free(const std::string& s) {
  // Group labels and loss keys never contain commas by construction;
  // keep the writer trivial and assert instead of quoting.
  if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
    throw ConfigError("metrics column name contains a separator: " + s);
  return s;
}

}  // namespace

// --- config ----------------------------------------------------------------

void TrainingConfig::validate() const {
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (episodes_per_iteration < 1)
    throw ConfigError("episodes_per_iteration must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  SharingMode mode = sharing_mode();
  if (mode == SharingMode::custom && policy_table.empty())
    throw ConfigError("sharing=custom requires a policy_table");
  if (mode != SharingMode::custom && !policy_table.empty())
    throw ConfigError("policy_table is only used with sharing=custom");
}

SharingMode TrainingConfig::sharing_mode() const {
  return sharing_mode_from_string(sharing);
}

void RunConfig::validate() const {
  algorithm.validate();
  model.validate();
  training.validate();
}

RunConfig default_config() { return RunConfig{}; }

json to_json(const RunConfig& cfg) {
  json j;
  j["task"]["env"] = cfg.task.env;
  j["task"]["env_config"] = cfg.task.env_config;
  auto& a = j["algorithm"];
  a["algo"] = to_string(cfg.algorithm.algo);
  a["gamma"] = cfg.algorithm.gamma;
  a["lr_actor"] = cfg.algorithm.lr_actor;
  a["lr_critic"] = cfg.algorithm.lr_critic;
  a["lr_mixer"] = cfg.algorithm.lr_mixer;
  a["ppo_clip"] = cfg.algorithm.ppo_clip;
  a["gae_lambda"] = cfg.algorithm.gae_lambda;
  a["entropy_coef"] = cfg.algorithm.entropy_coef;
  a["eps_start"] = cfg.algorithm.eps_start;
  a["eps_end"] = cfg.algorithm.eps_end;
  a["eps_decay_steps"] = cfg.algorithm.eps_decay_steps;
  a["target_update_period"] = cfg.algorithm.target_update_period;
  a["batch_size"] = cfg.algorithm.batch_size;
  a["ppo_epochs"] = cfg.algorithm.ppo_epochs;
  a["mixer_hidden"] = cfg.algorithm.mixer_hidden;
  a["replay_capacity"] = cfg.algorithm.replay_capacity;
  a["advantage_norm"] = cfg.algorithm.advantage_norm;
  a["cc_use_own_obs"] = cfg.algorithm.cc_use_own_obs;
  a["mixer"] = cfg.algorithm.mixer;
  a["optimizer"] = cfg.algorithm.optimizer;
  j["model"]["hidden"] = cfg.model.hidden;
  j["model"]["activation"] = cfg.model.activation;
  auto& t = j["training"];
  t["total_steps"] = cfg.training.total_steps;
  t["workers"] = cfg.training.workers;
  t["episodes_per_iteration"] = cfg.training.episodes_per_iteration;
  t["eval_interval"] = cfg.training.eval_interval;
  t["eval_episodes"] = cfg.training.eval_episodes;
  t["seeds"] = cfg.training.seeds;
  t["sharing"] = cfg.training.sharing;
  t["policy_table"] = cfg.training.policy_table;
  t["out_dir"] = cfg.training.out_dir;
  t["dump_transitions"] = cfg.training.dump_transitions;
  return j;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(kSections.begin(), kSections.end(), key) == kSections.end())
      throw ConfigError("config: unknown section '" + key + "'" +
                        suggest(key, kSections));
  }
  RunConfig cfg;
  if (j.contains("task")) {
    if (!j["task"].is_object()) bad_type("config", "task", "an object", j["task"]);
    parse_task(j["task"], cfg.task);
  }
  if (j.contains("algorithm")) {
    if (!j["algorithm"].is_object())
      bad_type("config", "algorithm", "an object", j["algorithm"]);
    parse_algorithm(j["algorithm"], cfg.algorithm);
  }
  if (j.contains("model")) {
    if (!j["model"].is_object())
      bad_type("config", "model", "an object", j["model"]);
    parse_model(j["model"], cfg.model);
  }
  if (j.contains("training")) {
    if (!j["training"].is_object())
      bad_type("config", "training", "an object", j["training"]);
    parse_training(j["training"], cfg.training);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::vector<std::string>& paths,
                      const CliOverrides& overrides) {
  json merged = to_json(default_config());
  for (const auto& path : paths) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot read '" + path + "'");
    json j = json::parse(is, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
      throw ConfigError("config: '" + path + "' is not valid JSON");
    if (!j.is_object())
      throw ConfigError("config: '" + path + "' must hold an object");
    for (const auto& [key, value] : j.items()) {
      (void)value;
      if (std::find(kSections.begin(), kSections.end(), key) ==
          kSections.end())
        throw ConfigError("config: unknown section '" + key + "' in '" + path +
                          "'" + suggest(key, kSections));
    }
    deep_merge(merged, j);
  }
  for (const auto& [path, raw] : overrides)
    set_path(merged, path, parse_override_value(raw));
  return config_from_json(merged);
}

std::string record_config(const RunConfig& cfg, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw ConfigError("cannot create output directory '" + out_dir +
                      "': " + ec.message());
  std::string path = out_dir + "/config.json";
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << to_json(cfg).dump(2) << "\n";
  if (!os) throw ConfigError("failed while writing '" + path + "'");
  return path;
}

// --- evaluation --------------------------------------------------------------

EvalResult evaluate(const PolicySet& policies, const EnvFactory& factory,
                    int n_episodes, uint64_t seed) {
  if (n_episodes < 1) throw ConfigError("evaluate: n_episodes must be >= 1");
  const EnvSpec& spec = policies.spec();
  ActionSelector greedy = policies.make_greedy_selector();
  std::map<std::string, double> sums;
  std::map<std::string, int> sizes;
  for (const auto& [agent, label] : spec.groups) {
    (void)agent;
    sums[label] = 0.0;
    sizes[label] += 1;
  }
  for (int e = 0; e < n_episodes; ++e) {
    auto env = factory();
    CollectResult res =
        collect_episode(*env, greedy, derive_seed(seed, static_cast<uint64_t>(e)));
    for (const auto& [agent, ret] : res.agent_returns)
      sums[spec.groups.at(agent)] += ret;
  }
  EvalResult out;
  for (auto& [label, total] : sums) {
    out.group_means[label] = total / (n_episodes * sizes[label]);
    out.sum += out.group_means[label];
  }
  return out;
}

// --- trainer -----------------------------------------------------------------

Trainer::Trainer(RunConfig cfg, uint64_t seed)
    : cfg_(std::move(cfg)),
      seed_(seed),
      replay_(static_cast<size_t>(std::max(1, cfg_.algorithm.replay_capacity))),
      replay_rng_(derive_seed(seed, "replay")) {
  cfg_.validate();
  factory_ = make_env_factory(cfg_.task.env, cfg_.task.env_config);
  spec_ = factory_()->spec();
  if (cfg_.training.sharing_mode() == SharingMode::custom) {
    std::map<AgentId, PolicyId> table(cfg_.training.policy_table.begin(),
                                      cfg_.training.policy_table.end());
    map_ = build_policy_map(spec_, table);
  } else {
    map_ = build_policy_map(spec_, cfg_.training.sharing_mode());
  }
  // Surfaced here so an impossible algorithm/env pairing is a config
  // error before training, not a mid-run abort.
  if (category_of(cfg_.algorithm.algo) == AlgoCategory::value_decomposition) {
    if (spec_.task_mode != TaskMode::cooperative)
      throw ConfigError(to_string(cfg_.algorithm.algo) +
                        " needs a cooperative task; " + cfg_.task.env +
                        " is " + to_string(spec_.task_mode));
    if (spec_.interaction != Interaction::synchronous)
      throw ConfigError(to_string(cfg_.algorithm.algo) +
                        " needs synchronous interaction; " + cfg_.task.env +
                        " is asynchronous");
  }
  policies_ = std::make_unique<PolicySet>(spec_, map_, cfg_.algorithm,
                                          cfg_.model, derive_seed(seed, "params"));
  episode_seed_base_ = derive_seed(seed, "episodes");
  eps_decay_steps_ = cfg_.algorithm.eps_decay_steps > 0
                         ? cfg_.algorithm.eps_decay_steps
                         : std::max<long>(1, cfg_.training.total_steps / 2);
}

Trainer::~Trainer() = default;

double Trainer::epsilon() const {
  double f = std::min(1.0, static_cast<double>(env_steps_) /
                               static_cast<double>(eps_decay_steps_));
  return cfg_.algorithm.eps_start +
         f * (cfg_.algorithm.eps_end - cfg_.algorithm.eps_start);
}

std::string Trainer::run_dir() const {
  return cfg_.training.out_dir + "/seed_" + std::to_string(seed_);
}

void Trainer::run_iteration() {
  const char* phase = "targets";
  try {
    policies_->maybe_refresh_targets(env_steps_);

    phase = "collect";
    int n_ep = cfg_.training.episodes_per_iteration;
    std::vector<uint64_t> seeds(n_ep);
    for (int i = 0; i < n_ep; ++i)
      seeds[i] = derive_seed(episode_seed_base_,
                             static_cast<uint64_t>(episode_counter_ + i));
    episode_counter_ += n_ep;
    std::vector<CollectResult> episodes(n_ep);
    ActionSelector select = policies_->make_selector(epsilon());
    kernels::parallel_for_index(
        static_cast<size_t>(n_ep), cfg_.training.workers, [&](size_t i) {
          auto env = factory_();
          episodes[i] = collect_episode(*env, select, seeds[i]);
        });

    phase = "postprocess";
    for (auto& ep : episodes) {
      policies_->postprocess(ep.buffers);
      if (on_postprocessed) on_postprocessed(ep.buffers);
    }
    if (dump_os_) dump_iteration_transitions(episodes, *dump_os_);

    phase = "batch";
    long steps_this_iter = 0;
    std::map<std::string, double> group_sum;
    std::map<std::string, int> group_size;
    for (const auto& [agent, label] : spec_.groups) {
      (void)agent;
      group_sum[label] = 0.0;
      group_size[label] += 1;
    }
    for (const auto& ep : episodes) {
      steps_this_iter += ep.env_steps;
      for (const auto& [agent, ret] : ep.agent_returns)
        group_sum[spec_.groups.at(agent)] += ret;
    }
    Buffers merged;
    if (uses_replay(cfg_.algorithm.algo)) {
      for (auto& ep : episodes) replay_.add(std::move(ep.buffers));
    } else {
      for (auto& ep : episodes)
        for (auto& [agent, buf] : ep.buffers)
          merged[agent].append_episode(std::move(buf.transitions));
      for (auto& [agent, buf] : merged) buf.agent_id = agent;
    }
    SampleBatch batch = build_sample_batch(merged, map_);

    phase = "update";
    UpdateResult result = policies_->update(batch, replay_, replay_rng_);

    phase = "metrics";
    env_steps_ += steps_this_iter;
    iteration_ += 1;
    MetricsRow row;
    row.iteration = iteration_;
    row.env_steps = env_steps_;
    for (const auto& [label, total] : group_sum) {
      row.group_reward[label] =
          total / (cfg_.training.episodes_per_iteration * group_size[label]);
      row.reward_sum += row.group_reward[label];
    }
    row.losses = result.losses;
    metrics_.push_back(std::move(row));
  } catch (const std::exception& e) {
    throw std::runtime_error("training aborted at iteration " +
                             std::to_string(iteration_ + 1) + ", phase " +
                             phase + ": " + e.what());
  }
}

EvalRow Trainer::evaluate_now() {
  EvalResult r = evaluate(*policies_, factory_, cfg_.training.eval_episodes,
                          derive_seed(seed_, "eval"));
  EvalRow row;
  row.iteration = iteration_;
  row.env_steps = env_steps_;
  row.group_reward = r.group_means;
  row.reward_sum = r.sum;
  return row;
}

void Trainer::run() {
  std::error_code ec;
  fs::create_directories(run_dir(), ec);
  if (ec)
    throw ConfigError("cannot create output directory '" + run_dir() +
                      "': " + ec.message());
  if (cfg_.training.dump_transitions) {
    dump_os_ = std::make_unique<std::ofstream>(run_dir() + "/transitions.jsonl");
    if (!*dump_os_)
      throw ConfigError("cannot write '" + run_dir() + "/transitions.jsonl'");
  }

  evals_.push_back(evaluate_now());
  save_checkpoint(*policies_, cfg_, run_dir() + "/checkpoint.txt");

  while (!finished()) {
    auto t0 = std::chrono::steady_clock::now();
    run_iteration();
    metrics_.back().wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (iteration_ % cfg_.training.eval_interval == 0 || finished()) {
      evals_.push_back(evaluate_now());
      save_checkpoint(*policies_, cfg_, run_dir() + "/checkpoint.txt");
    }
  }
  write_outputs();
}

void Trainer::write_outputs() const {
  std::vector<std::string> labels = spec_.group_labels();
  static const std::vector<std::string> kLossCols = {
      "loss_q", "loss_actor", "loss_critic", "loss_mixer", "entropy"};

  std::ofstream ms(run_dir() + "/metrics.csv");
  if (!ms) throw ConfigError("cannot write metrics.csv in " + run_dir());
  ms << "iteration,env_steps";
  for (const auto& g : labels) ms << ",reward_" << csv_escape_free(g);
  ms << ",reward_sum";
  for (const auto& c : kLossCols) ms << "," << c;
  ms << "\n";
  for (const auto& row : metrics_) {
    ms << row.iteration << "," << row.env_steps;
    for (const auto& g : labels) ms << "," << format_double(row.group_reward.at(g));
    ms << "," << format_double(row.reward_sum);
    for (const auto& c : kLossCols) {
      auto it = row.losses.find(c);
      ms << ",";
      if (it != row.losses.end()) ms << format_double(it->second);
    }
    ms << "\n";
  }

  std::ofstream es(run_dir() + "/eval.csv");
  if (!es) throw ConfigError("cannot write eval.csv in " + run_dir());
  es << "iteration,env_steps";
  for (const auto& g : labels) es << ",reward_" << csv_escape_free(g);
  es << ",reward_sum\n";
  for (const auto& row : evals_) {
    es << row.iteration << "," << row.env_steps;
    for (const auto& g : labels) es << "," << format_double(row.group_reward.at(g));
    es << "," << format_double(row.reward_sum) << "\n";
  }

  // Wall-clock lives in its own file so metrics.csv stays byte-identical
  // across reruns of the same (config, seed).
  std::ofstream ts(run_dir() + "/timing.csv");
  if (!ts) throw ConfigError("cannot write timing.csv in " + run_dir());
  ts << "iteration,wall_seconds\n";
  for (const auto& row : metrics_)
    ts << row.iteration << "," << format_double(row.wall_seconds) << "\n";
}

void Trainer::dump_iteration_transitions(
    const std::vector<CollectResult>& episodes, std::ostream& os) const {
  long ep_index = episode_counter_ - static_cast<long>(episodes.size());
  for (const auto& ep : episodes) {
    for (const auto& [agent, buf] : ep.buffers) {
      for (size_t t = 0; t < buf.transitions.size(); ++t) {
        const Transition& tr = buf.transitions[t];
        json j;
        j["episode"] = ep_index;
        j["agent"] = agent;
        j["t"] = t;
        j["env_step"] = tr.env_step;
        j["obs"] = tr.obs;
        j["action"] = tr.action;
        j["reward"] = tr.reward;
        j["done"] = tr.done;
        if (tr.shared_obs) j["shared_obs"] = *tr.shared_obs;
        if (tr.shared_actions) j["shared_actions"] = *tr.shared_actions;
        if (tr.peer_values) j["peer_values"] = *tr.peer_values;
        if (tr.peer_target_values) j["peer_target_values"] = *tr.peer_target_values;
        if (tr.centralized_value) j["centralized_value"] = *tr.centralized_value;
        if (tr.logp_old) j["logp_old"] = *tr.logp_old;
        if (tr.return_) j["return"] = *tr.return_;
        if (tr.advantage) j["advantage"] = *tr.advantage;
        os << j.dump() << "\n";
      }
    }
    ++ep_index;
  }
}

void train(const RunConfig& cfg) {
  cfg.validate();
  record_config(cfg, cfg.training.out_dir);
  for (uint64_t seed : cfg.training.seeds) {
    Trainer trainer(cfg, seed);
    trainer.run();
  }
}

// --- checkpoints ---------------------------------------------------------------

void save_checkpoint(const PolicySet& policies, const RunConfig& cfg,
                     const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write checkpoint '" + path + "'");
  os << "marl-checkpoint v1\n";
  os << to_json(cfg).dump() << "\n";
  policies.save(os);
  if (!os) throw ConfigError("failed while writing checkpoint '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read checkpoint '" + path + "'");
  std::string magic;
  std::getline(is, magic);
  if (magic != "marl-checkpoint v1")
    throw ConfigError("'" + path + "' is not a checkpoint file");
  std::string cfg_line;
  std::getline(is, cfg_line);
  json j = json::parse(cfg_line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded())
    throw ConfigError("checkpoint '" + path + "' has a corrupt config line");
  LoadedCheckpoint out;
  out.config = config_from_json(j);
  EnvFactory factory =
      make_env_factory(out.config.task.env, out.config.task.env_config);
  EnvSpec spec = factory()->spec();
  PolicyMap map;
  if (out.config.training.sharing_mode() == SharingMode::custom) {
    std::map<AgentId, PolicyId> table(out.config.training.policy_table.begin(),
                                      out.config.training.policy_table.end());
    map = build_policy_map(spec, table);
  } else {
    map = build_policy_map(spec, out.config.training.sharing_mode());
  }
  out.policies = std::make_unique<PolicySet>(
      spec, map, out.config.algorithm, out.config.model, /*seed=*/0);
  out.policies->load(is);
  return out;
}

// --- plotting -------------------------------------------------------------------

namespace {

struct SeedCurves {
  std::vector<double> steps;
  std::map<std::string, std::vector<double>> reward;  // group label -> series
};

SeedCurves read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("plot: cannot read '" + path + "'");
  std::string header;
  if (!std::getline(is, header))
    throw ConfigError("plot: '" + path + "' is empty");
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
  }
  int steps_col = -1;
  std::map<int, std::string> reward_cols;
  for (size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == "env_steps") steps_col = static_cast<int>(i);
    else if (cols[i].rfind("reward_", 0) == 0 && cols[i] != "reward_sum")
      reward_cols[static_cast<int>(i)] = cols[i].substr(7);
  }
  if (steps_col < 0 || reward_cols.empty())
    throw ConfigError("plot: '" + path + "' lacks env_steps/reward_* columns");
  SeedCurves out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int i = 0;
    while (std::getline(ss, cell, ',')) {
      if (i == steps_col) out.steps.push_back(std::strtod(cell.c_str(), nullptr));
      auto it = reward_cols.find(i);
      if (it != reward_cols.end())
        out.reward[it->second].push_back(std::strtod(cell.c_str(), nullptr));
      ++i;
    }
  }
  if (out.steps.empty())
    throw ConfigError("plot: '" + path + "' has no data rows");
  return out;
}

std::string svg_color(size_t i) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                   "#9467bd", "#ff7f0e", "#8c564b"};
  return kPalette[i % 6];
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

void emit_curves(const std::vector<std::string>& metrics_files,
                 const std::string& out_dir, const std::string& name) {
  if (metrics_files.empty())
    throw ConfigError("plot: no metrics files given");
  std::vector<SeedCurves> seeds;
  for (const auto& f : metrics_files) seeds.push_back(read_metrics_csv(f));

  size_t t_len = seeds[0].steps.size();
  for (const auto& s : seeds) t_len = std::min(t_len, s.steps.size());
  std::vector<std::string> groups;
  for (const auto& [g, series] : seeds[0].reward) {
    (void)series;
    groups.push_back(g);
  }
  for (const auto& s : seeds)
    for (const auto& g : groups)
      if (!s.reward.count(g))
        throw ConfigError("plot: group columns differ across seed files");

  // Pointwise mean and min/max band across seeds, per group.
  std::map<std::string, std::vector<double>> mean, lo, hi;
  for (const auto& g : groups) {
    mean[g].resize(t_len);
    lo[g].assign(t_len, std::numeric_limits<double>::infinity());
    hi[g].assign(t_len, -std::numeric_limits<double>::infinity());
    for (size_t t = 0; t < t_len; ++t) {
      double acc = 0.0;
      for (const auto& s : seeds) {
        double v = s.reward.at(g)[t];
        acc += v;
        lo[g][t] = std::min(lo[g][t], v);
        hi[g][t] = std::max(hi[g][t], v);
      }
      mean[g][t] = acc / seeds.size();
    }
  }

  double x_min = seeds[0].steps[0], x_max = seeds[0].steps[t_len - 1];
  if (x_max <= x_min) x_max = x_min + 1.0;
  double y_min = std::numeric_limits<double>::infinity();
  double y_max = -std::numeric_limits<double>::infinity();
  for (const auto& g : groups)
    for (size_t t = 0; t < t_len; ++t) {
      y_min = std::min(y_min, lo[g][t]);
      y_max = std::max(y_max, hi[g][t]);
    }
  if (!(y_max > y_min)) {
    y_min -= 1.0;
    y_max += 1.0;
  }
  double pad = 0.05 * (y_max - y_min);
  y_min -= pad;
  y_max += pad;

  const double W = 760, H = 420, ML = 70, MR = 20, MT = 30, MB = 50;
  auto px = [&](double x) {
    return ML + (x - x_min) / (x_max - x_min) * (W - ML - MR);
  };
  auto py = [&](double y) {
    return H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB);
  };

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw ConfigError("plot: cannot create '" + out_dir + "': " + ec.message());
  std::string svg_path = out_dir + "/" + name + ".svg";
  std::ofstream os(svg_path);
  if (!os) throw ConfigError("plot: cannot write '" + svg_path + "'");

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"14\">"
     << name << "</text>\n";
  // axes
  os << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR
     << "\" y2=\"" << H - MB << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML
     << "\" y2=\"" << H - MB << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    double xv = x_min + k * (x_max - x_min) / 5;
    double yv = y_min + k * (y_max - y_min) / 5;
    os << "<line x1=\"" << fmt2(px(xv)) << "\" y1=\"" << H - MB << "\" x2=\""
       << fmt2(px(xv)) << "\" y2=\"" << H - MB + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt2(px(xv)) << "\" y=\"" << H - MB + 20
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt4(xv) << "</text>\n";
    os << "<line x1=\"" << ML - 5 << "\" y1=\"" << fmt2(py(yv)) << "\" x2=\""
       << ML << "\" y2=\"" << fmt2(py(yv)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ML - 8 << "\" y=\"" << fmt2(py(yv) + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
       << fmt4(yv) << "</text>\n";
  }
  os << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"12\">env steps</text>\n";
  os << "<text x=\"16\" y=\"" << (MT + H - MB) / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        "transform=\"rotate(-90 16 "
     << (MT + H - MB) / 2 << ")\">mean episode reward</text>\n";

  size_t color_i = 0;
  for (const auto& g : groups) {
    std::string color = svg_color(color_i++);
    // band: max curve forward, min curve backward
    os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" "
          "stroke=\"none\" points=\"";
    for (size_t t = 0; t < t_len; ++t)
      os << fmt2(px(seeds[0].steps[t])) << "," << fmt2(py(hi[g][t])) << " ";
    for (size_t t = t_len; t-- > 0;)
      os << fmt2(px(seeds[0].steps[t])) << "," << fmt2(py(lo[g][t])) << " ";
    os << "\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    for (size_t t = 0; t < t_len; ++t)
      os << fmt2(px(seeds[0].steps[t])) << "," << fmt2(py(mean[g][t])) << " ";
    os << "\"/>\n";
  }
  // legend
  double ly = MT + 8;
  color_i = 0;
  for (const auto& g : groups) {
    std::string color = svg_color(color_i++);
    os << "<line x1=\"" << W - MR - 150 << "\" y1=\"" << ly << "\" x2=\""
       << W - MR - 125 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - MR - 118 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << g
       << "</text>\n";
    ly += 18;
  }
  os << "</svg>\n";

  std::string sum_path = out_dir + "/" + name + "_summary.txt";
  std::ofstream ss(sum_path);
  if (!ss) throw ConfigError("plot: cannot write '" + sum_path + "'");
  ss << name << ": final mean episode reward over " << seeds.size()
     << " seed(s), " << fmt4(seeds[0].steps[t_len - 1]) << " env steps\n\n";
  ss << "group            mean        min        max\n";
  double final_sum = 0.0;
  for (const auto& g : groups) {
    size_t t = t_len - 1;
    final_sum += mean[g][t];
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12s %10s %10s %10s\n", g.c_str(),
                  fmt4(mean[g][t]).c_str(), fmt4(lo[g][t]).c_str(),
                  fmt4(hi[g][t]).c_str());
    ss << buf;
  }
  ss << "\nsum of group means: " << fmt4(final_sum) << "\n";
}

}  // namespace marl

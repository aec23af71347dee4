// Command-line front end: train / validate / plot / eval.
// Exit codes: 0 success, 1 validation or config error, 2 runtime error.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "marl/runner.hpp"

namespace fs = std::filesystem;
using namespace marl;

namespace {

std::string quoted_json(const std::string& s) {
  return nlohmann::json(s).dump();
}

int cmd_train(const std::vector<std::string>& scenarios,
              const std::string& algo, const std::string& env,
              const std::string& sharing, const std::vector<uint64_t>& seeds,
              long steps, int workers, const std::string& out,
              const std::vector<std::string>& sets, bool dump_transitions) {
  CliOverrides ov;
  if (!algo.empty()) ov.emplace_back("algorithm.algo", quoted_json(algo));
  if (!env.empty()) ov.emplace_back("task.env", quoted_json(env));
  if (!sharing.empty())
    ov.emplace_back("training.sharing", quoted_json(sharing));
  if (!seeds.empty())
    ov.emplace_back("training.seeds", nlohmann::json(seeds).dump());
  if (steps >= 0)
    ov.emplace_back("training.total_steps", std::to_string(steps));
  if (workers > 0) ov.emplace_back("training.workers", std::to_string(workers));
  if (!out.empty()) ov.emplace_back("training.out_dir", quoted_json(out));
  if (dump_transitions) ov.emplace_back("training.dump_transitions", "true");
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    ov.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }

  RunConfig cfg = load_config(scenarios, ov);
  train(cfg);

  std::cout << "trained " << to_string(cfg.algorithm.algo) << " on "
            << cfg.task.env << " for " << cfg.training.total_steps
            << " steps x " << cfg.training.seeds.size() << " seed(s)\n"
            << "outputs in " << cfg.training.out_dir << "\n";
  return 0;
}

int cmd_validate(const std::vector<std::string>& scenarios,
                 const std::string& env, int episodes, uint64_t seed) {
  CliOverrides ov;
  if (!env.empty()) ov.emplace_back("task.env", quoted_json(env));
  RunConfig cfg = load_config(scenarios, ov);
  auto instance = make_env(cfg.task.env, cfg.task.env_config);
  ConformanceReport report = check_conformance(*instance, episodes, seed);
  std::cout << report.to_text();
  return report.pass() ? 0 : 1;
}

int cmd_plot(const std::string& in_dir, const std::string& out_dir) {
  std::vector<std::string> files;
  if (fs::is_directory(in_dir)) {
    for (const auto& entry : fs::directory_iterator(in_dir)) {
      if (!entry.is_directory()) continue;
      std::string name = entry.path().filename().string();
      if (name.rfind("seed_", 0) != 0) continue;
      fs::path metrics = entry.path() / "metrics.csv";
      if (fs::exists(metrics)) files.push_back(metrics.string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty() && fs::exists(fs::path(in_dir) / "metrics.csv"))
      files.push_back((fs::path(in_dir) / "metrics.csv").string());
  }
  if (files.empty())
    throw ConfigError("plot: no metrics.csv found under '" + in_dir + "'");
  std::string name = fs::path(in_dir).filename().string();
  if (name.empty()) name = "run";
  emit_curves(files, out_dir, name);
  std::cout << "wrote " << out_dir << "/" << name << ".svg and " << out_dir
            << "/" << name << "_summary.txt from " << files.size()
            << " seed file(s)\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, int episodes, uint64_t seed) {
  LoadedCheckpoint lc = load_checkpoint(checkpoint);
  EnvFactory factory =
      make_env_factory(lc.config.task.env, lc.config.task.env_config);
  EvalResult r = evaluate(*lc.policies, factory, episodes, seed);
  std::cout << "greedy evaluation: " << episodes << " episode(s) of "
            << lc.config.task.env << " with "
            << to_string(lc.config.algorithm.algo) << " policies\n";
  for (const auto& [group, mean] : r.group_means)
    std::cout << "  " << group << ": " << format_double(mean) << "\n";
  std::cout << "  sum: " << format_double(r.sum) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-agent RL trainer"};
  app.require_subcommand(1);

  // train
  auto* tr = app.add_subcommand("train", "train policies on an environment");
  std::vector<std::string> tr_scenarios;
  std::string tr_algo, tr_env, tr_sharing, tr_out;
  std::vector<uint64_t> tr_seeds;
  long tr_steps = -1;
  int tr_workers = 0;
  std::vector<std::string> tr_sets;
  bool tr_dump = false;
  tr->add_option("--scenario", tr_scenarios,
                 "config file(s), merged in order (JSON)");
  tr->add_option("--algo", tr_algo,
                 "iql|ia2c|ippo|maa2c|mappo|coma|vdn|qmix|vda2c");
  tr->add_option("--env", tr_env, "environment registry name");
  tr->add_option("--sharing", tr_sharing, "full|group|none|custom");
  tr->add_option("--seed", tr_seeds, "training seed(s)");
  tr->add_option("--steps", tr_steps, "total env steps per seed");
  tr->add_option("--workers", tr_workers, "parallel episode collectors");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--set", tr_sets, "override any key: section.key=value");
  tr->add_flag("--dump-transitions", tr_dump,
               "write postprocessed transitions as jsonl");

  // validate
  auto* va = app.add_subcommand("validate",
                                "run the env conformance checker");
  std::vector<std::string> va_scenarios;
  std::string va_env;
  int va_episodes = 100;
  uint64_t va_seed = 1;
  va->add_option("--scenario", va_scenarios, "config file(s) with a task section");
  va->add_option("--env", va_env, "environment registry name");
  va->add_option("--episodes", va_episodes, "episodes to probe");
  va->add_option("--seed", va_seed, "probe seed");

  // plot
  auto* pl = app.add_subcommand("plot", "render reward curves from a run");
  std::string pl_in, pl_out;
  pl->add_option("--in", pl_in, "run directory (contains seed_*/metrics.csv)")
      ->required();
  pl->add_option("--out", pl_out, "output directory for svg + summary")
      ->required();

  // eval
  auto* ev = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  std::string ev_checkpoint;
  int ev_episodes = 32;
  uint64_t ev_seed = 1;
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint file")->required();
  ev->add_option("--episodes", ev_episodes, "episodes to average");
  ev->add_option("--seed", ev_seed, "evaluation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (tr->parsed())
      return cmd_train(tr_scenarios, tr_algo, tr_env, tr_sharing, tr_seeds,
                       tr_steps, tr_workers, tr_out, tr_sets, tr_dump);
    if (va->parsed()) return cmd_validate(va_scenarios, va_env, va_episodes, va_seed);
    if (pl->parsed()) return cmd_plot(pl_in, pl_out);
    if (ev->parsed()) return cmd_eval(ev_checkpoint, ev_episodes, ev_seed);
  } catch (const ConfigError& e) {  // RegistryError derives from it
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

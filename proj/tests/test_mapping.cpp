#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <set>

#include "doctest.h"
#include "marl/envs.hpp"
#include "marl/mapping.hpp"

using namespace marl;

namespace {

EnvSpec three_agents() {
  EnvSpec s;
  s.agents = {"a0", "a1", "a2"};
  s.obs_dim = 2;
  s.action_space.n = 2;
  s.task_mode = TaskMode::mixed;
  s.groups = {{"a0", "red"}, {"a1", "red"}, {"a2", "blue"}};
  s.episode_limit = 4;
  s.validate();
  return s;
}

}  // namespace

TEST_CASE("full sharing binds everyone to shared_0") {
  auto map = build_policy_map(three_agents(), SharingMode::full);
  CHECK(map.policy_ids == std::vector<PolicyId>{"shared_0"});
  for (const auto& [agent, pid] : map.bindings) CHECK(pid == "shared_0");
  CHECK(resolve(map, "a1") == "shared_0");
}

TEST_CASE("non-sharing gives each agent its own policy") {
  EnvSpec spec = three_agents();
  auto map = build_policy_map(spec, SharingMode::none);
  CHECK(map.policy_ids.size() == 3);
  std::set<PolicyId> distinct(map.policy_ids.begin(), map.policy_ids.end());
  CHECK(distinct.size() == 3);
  CHECK(resolve(map, "a1") == "a1");  // policy named after the agent
}

TEST_CASE("group sharing binds by label") {
  auto map = build_policy_map(three_agents(), SharingMode::group);
  CHECK(map.policy_ids.size() == 2);
  CHECK(resolve(map, "a0") == "red");
  CHECK(resolve(map, "a1") == "red");
  CHECK(resolve(map, "a2") == "blue");
}

TEST_CASE("group mode requires groups") {
  EnvSpec s = three_agents();
  s.groups.clear();
  CHECK_THROWS_AS(build_policy_map(s, SharingMode::group), ConfigError);
}

TEST_CASE("custom tables are validated against the agent set") {
  EnvSpec spec = three_agents();
  std::map<AgentId, PolicyId> table = {
      {"a0", "p_left"}, {"a1", "p_left"}, {"a2", "p_right"}};
  auto map = build_policy_map(spec, table);
  CHECK(map.policy_ids.size() == 2);
  CHECK(resolve(map, "a0") == "p_left");

  table.erase("a2");  // missing agent
  CHECK_THROWS_AS(build_policy_map(spec, table), ConfigError);

  table["a2"] = "p_right";
  table["ghost"] = "p_left";  // undeclared agent
  CHECK_THROWS_AS(build_policy_map(spec, table), ConfigError);
}

TEST_CASE("resolve rejects unknown agents") {
  auto map = build_policy_map(three_agents(), SharingMode::full);
  CHECK_THROWS_AS(resolve(map, "nope"), ProtocolError);
}

TEST_CASE("agents_of returns members in declared order") {
  EnvSpec spec = three_agents();
  auto map = build_policy_map(spec, SharingMode::group);
  CHECK(agents_of(map, spec, "red") == std::vector<AgentId>{"a0", "a1"});
  CHECK(agents_of(map, spec, "blue") == std::vector<AgentId>{"a2"});
}

TEST_CASE("mode cardinalities hold on a real env") {
  auto env = make_env("matrix", {{"scenario", "mixed_2v2"}});
  const EnvSpec& spec = env->spec();
  CHECK(build_policy_map(spec, SharingMode::full).policy_ids.size() == 1);
  CHECK(build_policy_map(spec, SharingMode::group).policy_ids.size() == 2);
  CHECK(build_policy_map(spec, SharingMode::none).policy_ids.size() == 4);
}

TEST_CASE("sharing mode round-trips through strings") {
  for (auto mode : {SharingMode::full, SharingMode::group, SharingMode::none,
                    SharingMode::custom})
    CHECK(sharing_mode_from_string(to_string(mode)) == mode);
  CHECK_THROWS_AS(sharing_mode_from_string("toggle"), ConfigError);
}

TEST_CASE("maps are deterministic for fixed inputs") {
  EnvSpec spec = three_agents();
  auto a = build_policy_map(spec, SharingMode::group);
  auto b = build_policy_map(spec, SharingMode::group);
  CHECK(a.bindings == b.bindings);
  CHECK(a.policy_ids == b.policy_ids);
}

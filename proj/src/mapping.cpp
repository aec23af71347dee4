#include "marl/mapping.hpp"

#include <algorithm>
#include <set>

namespace marl {

std::string to_string(SharingMode m) {
  switch (m) {
    case SharingMode::full: return "full";
    case SharingMode::group: return "group";
    case SharingMode::none: return "none";
    case SharingMode::custom: return "custom";
  }
  return "?";
}

SharingMode sharing_mode_from_string(const std::string& s) {
  if (s == "full") return SharingMode::full;
  if (s == "group") return SharingMode::group;
  if (s == "none") return SharingMode::none;
  if (s == "custom") return SharingMode::custom;
  throw ConfigError("unknown sharing mode '" + s + "' (full, group, none, custom)");
}

PolicyMap build_policy_map(const EnvSpec& spec, SharingMode mode) {
  PolicyMap map;
  switch (mode) {
    case SharingMode::full:
      map.policy_ids = {"shared_0"};
      for (const auto& a : spec.agents) map.bindings[a] = "shared_0";
      break;
    case SharingMode::group: {
      if (spec.groups.empty())
        throw ConfigError("group sharing requires EnvSpec.groups");
      map.policy_ids = spec.group_labels();
      for (const auto& a : spec.agents) map.bindings[a] = spec.groups.at(a);
      break;
    }
    case SharingMode::none:
      for (const auto& a : spec.agents) {
        map.bindings[a] = a;
        map.policy_ids.push_back(a);
      }
      break;
    case SharingMode::custom:
      throw ConfigError("custom sharing needs an explicit binding table");
  }
  return map;
}

PolicyMap build_policy_map(const EnvSpec& spec,
                           const std::map<AgentId, PolicyId>& table) {
  PolicyMap map;
  std::set<PolicyId> ids;
  for (const auto& a : spec.agents) {
    auto it = table.find(a);
    if (it == table.end())
      throw ConfigError("custom policy map: agent '" + a + "' has no binding");
    if (it->second.empty())
      throw ConfigError("custom policy map: empty policy id for '" + a + "'");
    map.bindings[a] = it->second;
    ids.insert(it->second);
  }
  for (const auto& [agent, policy] : table)
    if (std::find(spec.agents.begin(), spec.agents.end(), agent) == spec.agents.end())
      throw ConfigError("custom policy map: unknown agent '" + agent + "'");
  map.policy_ids.assign(ids.begin(), ids.end());
  return map;
}

const PolicyId& resolve(const PolicyMap& map, const AgentId& agent) {
  auto it = map.bindings.find(agent);
  if (it == map.bindings.end())
    throw ProtocolError("resolve: agent '" + agent + "' is not bound to any policy");
  return it->second;
}

std::vector<AgentId> agents_of(const PolicyMap& map, const EnvSpec& spec,
                               const PolicyId& policy) {
  std::vector<AgentId> out;
  for (const auto& a : spec.agents)
    if (resolve(map, a) == policy) out.push_back(a);
  return out;
}

}  // namespace marl

#pragma once

#include <map>
#include <string>
#include <vector>

#include "marl/interface.hpp"

namespace marl {

using PolicyId = std::string;

// How virtual per-agent policies bind to physical parameter-owning
// policies: all agents on one policy, one per group label, one per
// agent, or an explicit table.
enum class SharingMode { full, group, none, custom };

std::string to_string(SharingMode m);
SharingMode sharing_mode_from_string(const std::string& s);

// Immutable after construction; safe to read from any thread.
struct PolicyMap {
  std::map<AgentId, PolicyId> bindings;
  std::vector<PolicyId> policy_ids;  // distinct, deterministic order
};

// Deterministic naming: full -> "shared_0", group -> group label,
// none -> agent id. Group mode requires EnvSpec.groups.
PolicyMap build_policy_map(const EnvSpec& spec, SharingMode mode);

// Custom binding table, validated against the declared agent set.
PolicyMap build_policy_map(const EnvSpec& spec,
                           const std::map<AgentId, PolicyId>& table);

const PolicyId& resolve(const PolicyMap& map, const AgentId& agent);

// Agents bound to `policy`, in declared agent order.
std::vector<AgentId> agents_of(const PolicyMap& map, const EnvSpec& spec,
                               const PolicyId& policy);

}  // namespace marl

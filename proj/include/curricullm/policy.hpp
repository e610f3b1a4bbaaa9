#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "curricullm/env.hpp"

namespace curricullm {

inline constexpr const char* kPolicyArchitecture = "linear-tanh-v1";

struct PolicyProvenance {
    int subtask = -1;    // -1 for a fresh policy
    int candidate = -1;
    std::uint64_t seed = 0;
};

// Flat-parameter linear policy: action[i] = tanh(W[i] . features + b[i]),
// features = concatenated normalized observation variables in registry order.
// params flatten (W|b) row-major, length action_dims * (feature_dims + 1).
struct PolicyCheckpoint {
    std::string env_id;
    std::string architecture = kPolicyArchitecture;
    std::vector<double> params;
    PolicyProvenance provenance;

    static PolicyCheckpoint zeros(const EnvironmentDefinition& env);
    static int param_count(const EnvironmentDefinition& env);

    std::vector<double> act(const EnvironmentDefinition& env,
                            const std::vector<double>& features) const;

    std::string serialize() const;
    static PolicyCheckpoint deserialize(const std::string& text);
};

}  // namespace curricullm

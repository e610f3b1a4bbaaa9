#include "curricullm/policy.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "curricullm/errors.hpp"

namespace curricullm {

int PolicyCheckpoint::param_count(const EnvironmentDefinition& env) {
    return env.action_dims * (env.feature_dims() + 1);
}

PolicyCheckpoint PolicyCheckpoint::zeros(const EnvironmentDefinition& env) {
    PolicyCheckpoint p;
    p.env_id = env.id;
    p.params.assign(param_count(env), 0.0);
    return p;
}

std::vector<double> PolicyCheckpoint::act(const EnvironmentDefinition& env,
                                          const std::vector<double>& features) const {
    const int n = env.feature_dims();
    std::vector<double> action(env.action_dims);
    for (int i = 0; i < env.action_dims; ++i) {
        const double* row = params.data() + static_cast<std::size_t>(i) * (n + 1);
        double z = row[n];  // bias
        for (int j = 0; j < n; ++j) z += row[j] * features[j];
        action[i] = std::tanh(z);
    }
    return action;
}

std::string PolicyCheckpoint::serialize() const {
    nlohmann::json doc;
    doc["architecture"] = architecture;
    doc["env_id"] = env_id;
    doc["params"] = params;
    doc["provenance"] = {{"subtask", provenance.subtask},
                         {"candidate", provenance.candidate},
                         {"seed", provenance.seed}};
    return doc.dump(2) + "\n";
}

PolicyCheckpoint PolicyCheckpoint::deserialize(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
    PolicyCheckpoint p;
    p.architecture = doc.at("architecture").get<std::string>();
    if (p.architecture != kPolicyArchitecture) {
        throw ConfigError("unsupported policy architecture '" + p.architecture + "'");
    }
    p.env_id = doc.at("env_id").get<std::string>();
    p.params = doc.at("params").get<std::vector<double>>();
    const auto& prov = doc.at("provenance");
    p.provenance.subtask = prov.at("subtask").get<int>();
    p.provenance.candidate = prov.at("candidate").get<int>();
    p.provenance.seed = prov.at("seed").get<std::uint64_t>();
    return p;
}

}  // namespace curricullm

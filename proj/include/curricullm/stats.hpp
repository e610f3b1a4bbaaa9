#pragma once

#include <map>
#include <string>
#include <vector>

#include "curricullm/env.hpp"
#include "curricullm/trainer.hpp"

namespace curricullm {

// Per-variable component-wise statistics over all steps of all non-faulted
// episodes in a batch. Means feed the evaluation prompt; std/min/max go only
// to the machine-readable record.
struct TrajectorySummary {
    std::map<std::string, std::vector<double>> means;
    std::map<std::string, std::vector<double>> stddevs;
    std::map<std::string, std::vector<double>> minima;
    std::map<std::string, std::vector<double>> maxima;
    double episode_length_mean = 0.0;
    double success_rate = 0.0;
    int fault_count = 0;
    int episode_count = 0;
    int candidate_index = 0;
};

struct EmptyBatch : Error {
    EmptyBatch() : Error("cannot summarize an empty trajectory batch") {}
};

TrajectorySummary summarize(const TrajectoryBatch& batch, const EnvironmentDefinition& env);

// "Agent k:" blocks in the evaluation-prompt format: variables in registry
// order, values rounded half-away-from-zero to 3 decimals, vectors
// space-separated in square brackets, then episode_length and success_rate.
std::string render_summaries(const std::vector<TrajectorySummary>& summaries,
                             const EnvironmentDefinition& env);

// 3-decimal half-away-from-zero rounding used by the renderer; trailing zeros
// trimmed down to one decimal place.
std::string format_stat(double value);

std::string summary_to_json(const TrajectorySummary& summary);
TrajectorySummary summary_from_json(const std::string& text);

}  // namespace curricullm

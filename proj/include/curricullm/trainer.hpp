#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "curricullm/dsl.hpp"
#include "curricullm/env.hpp"
#include "curricullm/policy.hpp"

namespace curricullm {

struct TrainConfig {
    int population = 64;
    int elite_count = 8;
    int iterations = 30;          // per-subtask budget
    int episodes_per_fitness = 4;
    double sigma_init_fresh = 0.5;
    double sigma_init_warm = 0.2;
    double sigma_min = 0.02;
    double discount = 0.99;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency; results do not depend on this

    void validate() const;  // throws ConfigError
};

struct Episode {
    std::vector<Transition> transitions;
    int length = 0;
    bool success = false;
    bool faulted = false;            // task-code runtime fault during return computation
    double discounted_return = 0.0;  // under the supplied task code; 0 when none given
};

struct TrajectoryBatch {
    std::vector<Episode> episodes;
};

struct FitnessPoint {
    int iteration = 0;
    double mean_fitness = 0.0;  // over non-faulted members
    double best_fitness = 0.0;
    double best_so_far = 0.0;
};

struct TrainResult {
    PolicyCheckpoint checkpoint;  // best-ever-evaluated member
    std::vector<FitnessPoint> curve;
    double best_fitness = 0.0;
    std::uint64_t env_steps = 0;
};

// Per-step reward for training; throws dsl::DslError on task-code faults.
using RewardFn =
    std::function<double(const EnvironmentDefinition&, const Transition&)>;

// Cross-entropy method over the flat policy parameters. Warm-starts at `init`
// when given (reduced initial sigma), otherwise from zeros. Fitness is the
// mean discounted reward-program return over episodes_per_fitness episodes
// with common random numbers across the population. Deterministic in cfg.seed.
TrainResult train(const std::optional<PolicyCheckpoint>& init, const EnvironmentDefinition& env,
                  const dsl::TaskCode& code, const TrainConfig& cfg);

// Same optimizer with an arbitrary reward; backs the sparse baseline.
TrainResult train_with_reward(const std::optional<PolicyCheckpoint>& init,
                              const EnvironmentDefinition& env, const RewardFn& reward,
                              const GoalDistributionSpec& goal_spec, const TrainConfig& cfg);

// Deterministic rollouts; episodes use seeds seed .. seed+n_episodes-1. When a
// task code is supplied, per-episode discounted returns are computed and DSL
// faults are recorded per episode.
TrajectoryBatch rollout(const PolicyCheckpoint& policy, const EnvironmentDefinition& env,
                        const GoalDistributionSpec& spec, int n_episodes, std::uint64_t seed,
                        const dsl::TaskCode* code = nullptr, double discount = 0.99);

struct TargetEvalResult {
    double success_rate = 0.0;
    double mean_sparse_return = 0.0;  // discounted, 1 on the success step else 0
};

// Empirical target-task performance under the environment's target goal
// distribution.
TargetEvalResult evaluate_target(const PolicyCheckpoint& policy, const EnvironmentDefinition& env,
                                 int n_episodes, std::uint64_t seed, double discount = 0.99);

}  // namespace curricullm

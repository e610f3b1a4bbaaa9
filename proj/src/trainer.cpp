#include "curricullm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "curricullm/errors.hpp"
#include "curricullm/rng.hpp"

namespace curricullm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t episode_seed(std::uint64_t base, int iteration, int episode) {
    return mix_seed(base ^ 0x65706973ULL, static_cast<std::uint64_t>(iteration),
                    static_cast<std::uint64_t>(episode));
}

struct EpisodeOutcome {
    double discounted_return = 0.0;
    int steps = 0;
    bool success = false;
    bool faulted = false;
};

EpisodeOutcome run_fitness_episode(const EnvironmentDefinition& env_def,
                                   const std::vector<double>& params, const RewardFn& reward,
                                   const GoalDistributionSpec& spec, std::uint64_t seed,
                                   double discount) {
    EpisodeOutcome out;
    Environment env(env_def);
    Observation obs = env.reset(spec, seed);
    PolicyCheckpoint policy;  // transient view over the parameter vector
    policy.env_id = env_def.id;
    policy.params = params;
    double gamma_t = 1.0;
    while (!env.done()) {
        const std::vector<double> features = flatten_observation(env_def, obs);
        const std::vector<double> action = policy.act(env_def, features);
        Transition t = env.step(action);
        ++out.steps;
        try {
            out.discounted_return += gamma_t * reward(env_def, t);
        } catch (const dsl::DslError&) {
            out.faulted = true;
            break;
        }
        gamma_t *= discount;
        obs = std::move(t.next_observation);
    }
    out.success = env.succeeded();
    return out;
}

void parallel_members(int population, int threads, const std::function<void(int)>& body) {
    if (threads <= 1 || population <= 1) {
        for (int i = 0; i < population; ++i) body(i);
        return;
    }
    const int n_threads = std::min(threads, population);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < population; i += n_threads) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

void TrainConfig::validate() const {
    if (population < 1) throw ConfigError("population must be positive");
    if (elite_count < 1 || elite_count > population) {
        throw ConfigError("elite_count must be in [1, population]");
    }
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (episodes_per_fitness < 1) throw ConfigError("episodes_per_fitness must be positive");
    if (discount <= 0.0 || discount > 1.0) throw ConfigError("discount must be in (0, 1]");
    if (sigma_init_fresh <= 0.0 || sigma_init_warm <= 0.0 || sigma_min <= 0.0) {
        throw ConfigError("sigma parameters must be positive");
    }
}

TrainResult train_with_reward(const std::optional<PolicyCheckpoint>& init,
                              const EnvironmentDefinition& env, const RewardFn& reward,
                              const GoalDistributionSpec& goal_spec, const TrainConfig& cfg) {
    cfg.validate();
    check_goal_spec(env, goal_spec);
    const int dim = PolicyCheckpoint::param_count(env);
    if (init && static_cast<int>(init->params.size()) != dim) {
        throw ConfigError("warm-start checkpoint does not match the environment architecture");
    }

    TrainResult result;
    std::vector<double> mean = init ? init->params : std::vector<double>(dim, 0.0);
    std::vector<double> sigma(dim, init ? cfg.sigma_init_warm : cfg.sigma_init_fresh);

    result.checkpoint.env_id = env.id;
    result.checkpoint.params = mean;
    result.checkpoint.provenance.seed = cfg.seed;
    if (init) result.checkpoint.provenance = init->provenance;
    result.best_fitness = kNegInf;

    const int threads =
        cfg.threads > 0 ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());

    std::vector<std::vector<double>> members(cfg.population, std::vector<double>(dim));
    std::vector<double> fitness(cfg.population);
    std::vector<std::uint64_t> member_steps(cfg.population);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        Rng sampler(mix_seed(cfg.seed ^ 0x706f7075ULL, static_cast<std::uint64_t>(iter)));
        for (auto& member : members) {
            for (int j = 0; j < dim; ++j) member[j] = mean[j] + sigma[j] * sampler.normal();
        }
        std::vector<std::uint64_t> seeds(cfg.episodes_per_fitness);
        for (int e = 0; e < cfg.episodes_per_fitness; ++e) seeds[e] = episode_seed(cfg.seed, iter, e);

        parallel_members(cfg.population, threads, [&](int i) {
            double total = 0.0;
            std::uint64_t steps = 0;
            bool faulted = false;
            for (std::uint64_t seed : seeds) {
                EpisodeOutcome out =
                    run_fitness_episode(env, members[i], reward, goal_spec, seed, cfg.discount);
                steps += out.steps;
                if (out.faulted) {
                    faulted = true;
                    break;
                }
                total += out.discounted_return;
            }
            member_steps[i] = steps;
            fitness[i] = faulted ? kNegInf : total / cfg.episodes_per_fitness;
        });
        result.env_steps += std::accumulate(member_steps.begin(), member_steps.end(), 0ull);

        std::vector<int> order(cfg.population);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return fitness[a] > fitness[b]; });

        int finite_count = 0;
        double finite_sum = 0.0;
        for (double f : fitness) {
            if (std::isfinite(f)) {
                ++finite_count;
                finite_sum += f;
            }
        }
        if (finite_count == 0 && iter == 0) {
            throw TaskCodeRuntimeFault("every population member faulted in the first iteration");
        }

        const double iter_best = fitness[order[0]];
        if (std::isfinite(iter_best) && iter_best > result.best_fitness) {
            result.best_fitness = iter_best;
            result.checkpoint.params = members[order[0]];
        }

        FitnessPoint point;
        point.iteration = iter;
        point.mean_fitness = finite_count > 0 ? finite_sum / finite_count : kNegInf;
        point.best_fitness = iter_best;
        point.best_so_far = result.best_fitness;
        result.curve.push_back(point);

        const int elite_n = std::min(cfg.elite_count, finite_count);
        if (elite_n > 0) {
            for (int j = 0; j < dim; ++j) {
                double m = 0.0;
                for (int e = 0; e < elite_n; ++e) m += members[order[e]][j];
                m /= elite_n;
                double var = 0.0;
                for (int e = 0; e < elite_n; ++e) {
                    const double d = members[order[e]][j] - m;
                    var += d * d;
                }
                mean[j] = m;
                sigma[j] = std::max(std::sqrt(var / elite_n), cfg.sigma_min);
            }
        }
    }
    if (!std::isfinite(result.best_fitness) && cfg.iterations == 0) {
        result.best_fitness = 0.0;
    }
    return result;
}

TrainResult train(const std::optional<PolicyCheckpoint>& init, const EnvironmentDefinition& env,
                  const dsl::TaskCode& code, const TrainConfig& cfg) {
    RewardFn reward = [&code](const EnvironmentDefinition& e, const Transition& t) {
        return code.program.evaluate_reward(e, t);
    };
    return train_with_reward(init, env, reward, code.goal_spec, cfg);
}

TrajectoryBatch rollout(const PolicyCheckpoint& policy, const EnvironmentDefinition& env_def,
                        const GoalDistributionSpec& spec, int n_episodes, std::uint64_t seed,
                        const dsl::TaskCode* code, double discount) {
    check_goal_spec(env_def, spec);
    TrajectoryBatch batch;
    batch.episodes.reserve(std::max(n_episodes, 0));
    for (int e = 0; e < n_episodes; ++e) {
        Episode episode;
        Environment env(env_def);
        Observation obs = env.reset(spec, seed + e);
        double gamma_t = 1.0;
        while (!env.done()) {
            const std::vector<double> features = flatten_observation(env_def, obs);
            Transition t = env.step(policy.act(env_def, features));
            obs = t.next_observation;
            if (code != nullptr && !episode.faulted) {
                try {
                    episode.discounted_return += gamma_t * code->program.evaluate_reward(env_def, t);
                } catch (const dsl::DslError&) {
                    episode.faulted = true;
                    episode.discounted_return = 0.0;
                }
            }
            gamma_t *= discount;
            episode.transitions.push_back(std::move(t));
        }
        episode.length = env.steps();
        episode.success = env.succeeded();
        batch.episodes.push_back(std::move(episode));
    }
    return batch;
}

TargetEvalResult evaluate_target(const PolicyCheckpoint& policy,
                                 const EnvironmentDefinition& env_def, int n_episodes,
                                 std::uint64_t seed, double discount) {
    TargetEvalResult result;
    if (n_episodes <= 0) return result;
    int successes = 0;
    double total_return = 0.0;
    for (int e = 0; e < n_episodes; ++e) {
        Environment env(env_def);
        Observation obs = env.reset(env_def.target_goal_spec, seed + e);
        double gamma_t = 1.0;
        double ep_return = 0.0;
        while (!env.done()) {
            const std::vector<double> features = flatten_observation(env_def, obs);
            Transition t = env.step(policy.act(env_def, features));
            if (t.success) ep_return += gamma_t;
            gamma_t *= discount;
            obs = std::move(t.next_observation);
        }
        if (env.succeeded()) ++successes;
        total_return += ep_return;
    }
    result.success_rate = static_cast<double>(successes) / n_episodes;
    result.mean_sparse_return = total_return / n_episodes;
    return result;
}

}  // namespace curricullm

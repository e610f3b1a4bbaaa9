#include <doctest/doctest.h>

#include <cmath>

#include "curricullm/dsl.hpp"
#include "curricullm/env.hpp"
#include "curricullm/policy.hpp"
#include "curricullm/trainer.hpp"

using namespace curricullm;

namespace {

dsl::TaskCode open_center_code() {
    const auto env = Environment::definition("point_open");
    // agent_pos is normalized, so the workspace center is (0, 0) and staying
    // put is the analytic optimum with value 0
    return dsl::compile_task_code(
        "```reward\nreturn 0 - sq(agent_pos[0]) - sq(agent_pos[1])\n```\n"
        "```goal\ngoal_radius: [1, 1]\n```\n",
        env);
}

TrainConfig small_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.population = 16;
    cfg.elite_count = 4;
    cfg.iterations = 5;
    cfg.episodes_per_fitness = 2;
    cfg.seed = seed;
    return cfg;
}

bool same_result(const TrainResult& a, const TrainResult& b) {
    if (a.checkpoint.params != b.checkpoint.params) return false;
    if (a.best_fitness != b.best_fitness) return false;
    if (a.env_steps != b.env_steps) return false;
    if (a.curve.size() != b.curve.size()) return false;
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        if (a.curve[i].mean_fitness != b.curve[i].mean_fitness) return false;
        if (a.curve[i].best_fitness != b.curve[i].best_fitness) return false;
        if (a.curve[i].best_so_far != b.curve[i].best_so_far) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.population = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.elite_count = 100;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.discount = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.episodes_per_fitness = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("zero iterations return the initial policy untouched") {
    const auto env = Environment::definition("point_open");
    const auto code = open_center_code();
    TrainConfig cfg = small_config(3);
    cfg.iterations = 0;

    SUBCASE("fresh start") {
        const TrainResult r = train(std::nullopt, env, code, cfg);
        CHECK(r.checkpoint.params == std::vector<double>(PolicyCheckpoint::param_count(env), 0.0));
        CHECK(r.curve.empty());
        CHECK(r.env_steps == 0);
    }
    SUBCASE("warm start") {
        PolicyCheckpoint init = PolicyCheckpoint::zeros(env);
        init.params[0] = 0.75;
        init.provenance = {2, 1, 99};
        const TrainResult r = train(init, env, code, cfg);
        CHECK(r.checkpoint.params == init.params);
        CHECK(r.checkpoint.provenance.subtask == 2);
        CHECK(r.checkpoint.provenance.candidate == 1);
    }
}

TEST_CASE("training is deterministic and thread-count independent") {
    const auto env = Environment::definition("point_open");
    const auto code = open_center_code();
    TrainConfig cfg = small_config(11);

    cfg.threads = 1;
    const TrainResult serial = train(std::nullopt, env, code, cfg);
    const TrainResult serial2 = train(std::nullopt, env, code, cfg);
    CHECK(same_result(serial, serial2));

    cfg.threads = 8;
    const TrainResult parallel = train(std::nullopt, env, code, cfg);
    CHECK(same_result(serial, parallel));

    cfg.threads = 1;
    cfg.seed = 12;
    const TrainResult other_seed = train(std::nullopt, env, code, cfg);
    CHECK_FALSE(same_result(serial, other_seed));
}

TEST_CASE("env-step accounting is exact on a fixed-horizon environment") {
    // point_open never terminates early, so every fitness episode runs the
    // full horizon and the step count has a closed form.
    const auto env = Environment::definition("point_open");
    const auto code = open_center_code();
    TrainConfig cfg = small_config(7);
    const TrainResult r = train(std::nullopt, env, code, cfg);
    const std::uint64_t expected = static_cast<std::uint64_t>(cfg.population) *
                                   cfg.episodes_per_fitness * env.horizon * cfg.iterations;
    CHECK(r.env_steps == expected);
    CHECK(r.curve.size() == static_cast<std::size_t>(cfg.iterations));
}

TEST_CASE("optimization approaches the analytic optimum of a stay-still reward") {
    const auto env = Environment::definition("point_open");
    const auto code = open_center_code();
    TrainConfig cfg = small_config(21);
    cfg.population = 32;
    cfg.elite_count = 6;
    cfg.iterations = 15;
    const TrainResult r = train(std::nullopt, env, code, cfg);

    for (std::size_t i = 1; i < r.curve.size(); ++i) {
        CHECK(r.curve[i].best_so_far >= r.curve[i - 1].best_so_far);
    }
    CHECK(r.curve.back().best_so_far == doctest::Approx(r.best_fitness));
    CHECK(r.best_fitness > -0.5);  // discounted cost of drifting is far below this
    CHECK(r.best_fitness <= 0.0 + 1e-12);
    CHECK(r.curve.back().best_so_far > r.curve.front().mean_fitness);
}

TEST_CASE("warm starts use the tighter search width around the given policy") {
    const auto env = Environment::definition("point_open");
    const auto code = open_center_code();
    TrainConfig cfg = small_config(31);
    cfg.iterations = 3;

    PolicyCheckpoint init = PolicyCheckpoint::zeros(env);
    init.provenance = {1, 0, 5};
    const TrainResult warm = train(init, env, code, cfg);
    const TrainResult fresh = train(std::nullopt, env, code, cfg);
    // same mean, different initial sigma, so the sampled populations differ
    CHECK_FALSE(same_result(warm, fresh));
}

TEST_CASE("a reward that always faults aborts training with a typed error") {
    const auto env = Environment::definition("point_open");
    const auto code = dsl::compile_task_code(
        "```reward\nreturn 1 / (is_alive - is_alive)\n```\n"
        "```goal\ngoal_radius: [1, 1]\n```\n",
        env);
    TrainConfig cfg = small_config(41);
    CHECK_THROWS_AS(train(std::nullopt, env, code, cfg), TaskCodeRuntimeFault);
}

TEST_CASE("rollout returns match a step-by-step recomputation") {
    const auto env = Environment::definition("point_maze");
    const auto code = dsl::compile_task_code(
        "```reward\nreturn 0 - dist_to_goal - 0.1 * sum_sq(action)\n```\n"
        "```goal\ngoal_distance: [0, 6]\n```\n",
        env);
    PolicyCheckpoint policy = PolicyCheckpoint::zeros(env);
    policy.params[3] = 0.4;
    policy.params[14] = -0.6;

    const TrajectoryBatch batch = rollout(policy, env, code.goal_spec, 8, 100, &code, 0.99);
    REQUIRE(batch.episodes.size() == 8);
    for (const auto& ep : batch.episodes) {
        REQUIRE_FALSE(ep.faulted);
        CHECK(ep.length == static_cast<int>(ep.transitions.size()));
        double expected = 0.0;
        double gamma_t = 1.0;
        bool any_success = false;
        for (const auto& t : ep.transitions) {
            expected += gamma_t * code.program.evaluate_reward(env, t);
            gamma_t *= 0.99;
            any_success = any_success || t.success;
        }
        CHECK(ep.discounted_return == doctest::Approx(expected).epsilon(1e-12));
        CHECK(ep.success == any_success);
    }

    const TrajectoryBatch again = rollout(policy, env, code.goal_spec, 8, 100, &code, 0.99);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(again.episodes[i].discounted_return == batch.episodes[i].discounted_return);
        CHECK(again.episodes[i].length == batch.episodes[i].length);
    }

    // shifting the base seed shifts which episodes are produced
    const TrajectoryBatch shifted = rollout(policy, env, code.goal_spec, 7, 101, &code, 0.99);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(shifted.episodes[i].length == batch.episodes[i + 1].length);
    }
}

TEST_CASE("target evaluation scores an immediate-success setup exactly") {
    auto def = Environment::definition("point_open");
    def.target_goal_spec.ranges = {{"goal_radius", {0.0, 0.0}}};
    const PolicyCheckpoint policy = PolicyCheckpoint::zeros(def);
    const TargetEvalResult r = evaluate_target(policy, def, 10, 0, 0.99);
    // the goal coincides with the start, so the very first step succeeds
    CHECK(r.success_rate == doctest::Approx(1.0));
    CHECK(r.mean_sparse_return > 0.9);
}

TEST_CASE("policy checkpoints serialize losslessly") {
    const auto env = Environment::definition("point_push");
    PolicyCheckpoint p = PolicyCheckpoint::zeros(env);
    CHECK(static_cast<int>(p.params.size()) == 2 * (env.feature_dims() + 1));
    p.params[5] = -0.123456789012345;
    p.provenance = {3, 2, 777};
    const PolicyCheckpoint q = PolicyCheckpoint::deserialize(p.serialize());
    CHECK(q.params == p.params);
    CHECK(q.env_id == p.env_id);
    CHECK(q.architecture == p.architecture);
    CHECK(q.provenance.subtask == 3);
    CHECK(q.provenance.candidate == 2);
    CHECK(q.provenance.seed == 777);
}

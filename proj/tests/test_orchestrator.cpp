#include <doctest/doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curricullm/dsl.hpp"
#include "curricullm/orchestrator.hpp"
#include "curricullm/rng.hpp"

using namespace curricullm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTrainStream = 0x747261696eULL;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("curricullm_orch_" + tag);
    fs::remove_all(dir);
    return dir;
}

// All persisted files keyed by relative path, minus the timestamped log.
std::map<std::string, std::string> snapshot(const fs::path& run_dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), run_dir).string();
        if (rel == "run.log") continue;
        files[rel] = read_file(entry.path());
    }
    return files;
}

// Delegates to an inner backend for a fixed number of calls, then starts
// failing with a transport error, to simulate an interrupted run.
class FlakyBackend : public ChatBackend {
public:
    FlakyBackend(std::unique_ptr<ChatBackend> inner, int budget)
        : inner_(std::move(inner)), budget_(budget) {}

protected:
    std::string complete_locked(const ChatRequest& request, const CallKey& key) override {
        if (budget_-- <= 0) throw TransportError("injected transport failure");
        return inner_->complete(request, key);
    }

private:
    std::unique_ptr<ChatBackend> inner_;
    int budget_;
};

RunConfig maze_config() {
    RunConfig cfg;
    cfg.env_id = "point_maze";
    cfg.backend = "scripted:" FIXTURE_DIR "/maze_curriculum.json";
    cfg.seed = 1;
    cfg.train.population = 32;
    cfg.train.iterations = 10;
    return cfg;
}

std::unique_ptr<ChatBackend> maze_backend() {
    return std::make_unique<ScriptedBackend>(FIXTURE_DIR "/maze_curriculum.json");
}

// One shared full run on the maze fixtures; several cases inspect it.
struct FixtureRun {
    fs::path dir;
    RunState state;
};

const FixtureRun& fixture_run() {
    static const FixtureRun run = [] {
        FixtureRun r;
        r.dir = fresh_dir("fixture_shared");
        auto backend = maze_backend();
        Orchestrator orchestrator(maze_config(), r.dir, backend.get());
        r.state = orchestrator.run();
        return r;
    }();
    return run;
}

const char* kOpenTaskCode =
    "```reward\nreturn 0 - sq(agent_pos[0]) - sq(agent_pos[1])\n```\n"
    "```goal\ngoal_radius: [1, 1]\n```\n";
const char* kOpenFaultingCode =
    "```reward\nreturn 1 / (is_alive - is_alive)\n```\n"
    "```goal\ngoal_radius: [1, 1]\n```\n";
const char* kOpenBadCode =
    "```reward\nreturn no_such_variable\n```\n"
    "```goal\ngoal_radius: [1, 1]\n```\n";

std::string one_task_curriculum() {
    return "Task 1\nName: Original task\nDescription: Reach the goal region.\n"
           "Reason: Direct training on the target.\n";
}

// Minimal-budget config for the fixed-horizon open arena.
RunConfig open_config(const std::string& mode, int candidates) {
    RunConfig cfg;
    cfg.env_id = "point_open";
    cfg.backend = "scripted:unused";
    cfg.mode = mode;
    cfg.candidates = candidates;
    cfg.retries = 0;
    cfg.eval_episodes = 1;
    cfg.final_eval_episodes = 1;
    cfg.seed = 7;
    cfg.train.population = 4;
    cfg.train.elite_count = 2;
    cfg.train.iterations = 1;
    cfg.train.episodes_per_fitness = 1;
    return cfg;
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad overrides") {
    CHECK_THROWS_AS(RunConfig::from_json(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"train": {"bogus": 1}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"seed": "not a number"})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json("not json"), ConfigError);
    CHECK_THROWS_AS(parse_config_with_overrides("{}", {"noequals"}), ConfigError);
    CHECK_THROWS_AS(parse_config_with_overrides("{}", {"bogus=1"}), ConfigError);
    CHECK_THROWS_AS(parse_config_with_overrides("{}", {"train.bogus=1"}), ConfigError);
}

TEST_CASE("overrides reach top-level and trainer keys") {
    const RunConfig cfg = parse_config_with_overrides(
        R"({"env_id": "point_maze", "backend": "scripted:x", "candidates": 3})",
        {"seed=5", "train.population=32", "mode=zeroshot", "model=my-model"});
    CHECK(cfg.env_id == "point_maze");
    CHECK(cfg.candidates == 3);
    CHECK(cfg.seed == 5);
    CHECK(cfg.train.population == 32);
    CHECK(cfg.mode == "zeroshot");
    CHECK(cfg.model == "my-model");
    CHECK(RunConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
}

TEST_CASE("config validation bounds the candidate count and mode") {
    RunConfig cfg = maze_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.candidates = kMaxCandidates + 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = maze_config();
    cfg.candidates = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = maze_config();
    cfg.mode = "imitation";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = maze_config();
    cfg.backend.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.mode = "sparse";  // sparse mode needs no backend
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("the fixture curriculum trains to a successful final policy") {
    const FixtureRun& run = fixture_run();
    CHECK(run.state.finished);
    REQUIRE(run.state.curriculum.tasks.size() == 3);
    CHECK(run.state.curriculum.tasks[2].name == "Original task");
    REQUIRE(run.state.history.size() == 3);
    CHECK(run.state.final_target.success_rate >= 0.8);
    REQUIRE(run.state.metrics.size() == 4);
    CHECK(run.state.metrics[3].stage == "final");
    CHECK(run.state.metrics[3].env_steps == run.state.total_env_steps);
}

TEST_CASE("a finished run directory contains every persisted stage") {
    const fs::path dir = fixture_run().dir;
    for (const char* name : {"config", "manifest", "curriculum", "history",
                             "target_metrics.csv", "run.log"}) {
        CHECK(fs::exists(dir / name));
    }
    CHECK_FALSE(fs::exists(dir / ".lock"));
    for (int n = 1; n <= 3; ++n) {
        char stage[32];
        std::snprintf(stage, sizeof(stage), "subtask_%02d", n);
        const fs::path sdir = dir / stage;
        for (const char* name : {"evaluation_prompt.txt", "evaluation_response.txt", "selected"}) {
            CHECK(fs::exists(sdir / name));
        }
        for (int k = 0; k < 4; ++k) {
            const fs::path cdir = sdir / ("candidate_" + std::to_string(k));
            CHECK(fs::exists(cdir / "task_code.txt"));
            CHECK(fs::exists(cdir / "checkpoint"));
            CHECK(fs::exists(cdir / "summary"));
            CHECK(fs::exists(cdir / "fitness_curve.csv"));
        }
    }
    const json manifest = json::parse(read_file(dir / "manifest"));
    CHECK(manifest.at("finished") == true);
    CHECK(manifest.at("completed_subtasks") == 3);
    CHECK(manifest.at("metrics").size() == 4);
    const std::string csv = read_file(dir / "target_metrics.csv");
    CHECK(csv.rfind("stage,selected_candidate,success_rate,mean_sparse_return,"
                    "episode_length_mean,env_steps\n", 0) == 0);
    CHECK(load_run_config(dir).to_json() == maze_config().to_json());
}

TEST_CASE("every log line is timestamped") {
    std::istringstream lines(read_file(fixture_run().dir / "run.log"));
    std::string line;
    const std::regex stamp(R"(^\[\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z\] .+$)");
    int count = 0;
    while (std::getline(lines, line)) {
        CHECK(std::regex_match(line, stamp));
        ++count;
    }
    CHECK(count > 5);
}

TEST_CASE("each subtask warm-starts from the previously selected policy") {
    const FixtureRun& run = fixture_run();
    const auto env = Environment::definition("point_maze");
    const std::uint64_t seed = maze_config().seed;

    // policy lineage ends at the last subtask's selected candidate
    const int last_selected = run.state.history[2].selected_candidate;
    CHECK(run.state.policy.provenance.subtask == 3);
    CHECK(run.state.policy.provenance.candidate == last_selected);

    // retrain subtask 2's selected candidate from subtask 1's selected
    // checkpoint with the recorded seed; the stored checkpoint must match
    const int sel1 = run.state.history[0].selected_candidate;
    const int sel2 = run.state.history[1].selected_candidate;
    PolicyCheckpoint parent = PolicyCheckpoint::deserialize(read_file(
        run.dir / "subtask_01" / ("candidate_" + std::to_string(sel1)) / "checkpoint"));
    const auto code = dsl::compile_task_code(
        read_file(run.dir / "subtask_02" / ("candidate_" + std::to_string(sel2)) /
                  "task_code.txt"),
        env);
    TrainConfig tcfg = maze_config().train;
    tcfg.iterations = maze_config().train.iterations;
    tcfg.seed = mix_seed(seed ^ kTrainStream, 2, sel2);
    TrainResult retrained = train(parent, env, code, tcfg);
    retrained.checkpoint.provenance = {2, sel2, tcfg.seed};
    const PolicyCheckpoint stored = PolicyCheckpoint::deserialize(read_file(
        run.dir / "subtask_02" / ("candidate_" + std::to_string(sel2)) / "checkpoint"));
    CHECK(retrained.checkpoint.params == stored.params);
}

TEST_CASE("identical configs produce byte-identical run directories") {
    const fs::path dir = fresh_dir("determinism");
    auto backend = maze_backend();
    Orchestrator orchestrator(maze_config(), dir, backend.get());
    orchestrator.run();
    CHECK(snapshot(dir) == snapshot(fixture_run().dir));
    fs::remove_all(dir);
}

TEST_CASE("an interrupted run resumes to a byte-identical directory") {
    const fs::path dir = fresh_dir("resume");
    {
        // 6 calls cover the curriculum, subtask 1's four candidates, and its
        // evaluation; the first call of subtask 2 then fails
        FlakyBackend flaky(maze_backend(), 6);
        Orchestrator orchestrator(maze_config(), dir, &flaky);
        CHECK_THROWS_AS(orchestrator.run(), TransportError);
    }
    CHECK(json::parse(read_file(dir / "manifest")).at("completed_subtasks") == 1);
    CHECK_FALSE(fs::exists(dir / ".lock"));

    auto backend = maze_backend();
    const RunState resumed = Orchestrator::resume(dir, backend.get());
    CHECK(resumed.finished);
    CHECK(snapshot(dir) == snapshot(fixture_run().dir));

    // resuming a finished run is a no-op
    const RunState again = Orchestrator::resume(dir, backend.get());
    CHECK(again.finished);
    CHECK(again.final_target.success_rate == resumed.final_target.success_rate);
    fs::remove_all(dir);
}

TEST_CASE("resume validates the directory and any supplied config") {
    const fs::path dir = fresh_dir("resume_errors");
    fs::create_directories(dir);
    auto backend = maze_backend();
    CHECK_THROWS_AS(Orchestrator::resume(dir, backend.get()), CorruptRunDirectory);

    RunConfig other = maze_config();
    other.candidates = 3;
    CHECK_THROWS_AS(Orchestrator::resume(fixture_run().dir, backend.get(), other),
                    ConfigMismatch);
    CHECK_NOTHROW(Orchestrator::resume(fixture_run().dir, backend.get(), maze_config()));
    fs::remove_all(dir);
}

TEST_CASE("a fresh run refuses a non-empty directory") {
    auto backend = maze_backend();
    Orchestrator orchestrator(maze_config(), fixture_run().dir, backend.get());
    CHECK_THROWS_AS(orchestrator.run(), ConfigError);
}

TEST_CASE("a subtask whose candidates all fail aborts with its index") {
    const fs::path dir = fresh_dir("all_fail");
    json fixture = {{"curriculum:0", one_task_curriculum()},
                    {"task_code:1", {kOpenBadCode, kOpenBadCode}}};
    auto backend = ScriptedBackend::from_text(fixture.dump());
    Orchestrator orchestrator(open_config("curriculum", 2), dir, backend.get());
    try {
        orchestrator.run();
        FAIL("expected AllCandidatesFailed");
    } catch (const AllCandidatesFailed& e) {
        CHECK(e.subtask == 1);
    }
    CHECK(fs::exists(dir / "subtask_01" / "candidate_0" / "failed"));
    CHECK(fs::exists(dir / "subtask_01" / "candidate_1" / "failed"));
    fs::remove_all(dir);
}

TEST_CASE("failed candidates are excluded and agent indices remapped") {
    const fs::path dir = fresh_dir("remap");
    // slots 0 and 2 fail (bad code, runtime fault); 1 and 3 survive
    json fixture = {{"curriculum:0", one_task_curriculum()},
                    {"task_code:1",
                     {kOpenBadCode, kOpenTaskCode, kOpenFaultingCode, kOpenTaskCode}},
                    {"evaluation:1", "Decision: Agent 1\nReason: second block wins"}};
    auto backend = ScriptedBackend::from_text(fixture.dump());
    Orchestrator orchestrator(open_config("curriculum", 4), dir, backend.get());
    const RunState state = orchestrator.run();

    const std::string prompt = read_file(dir / "subtask_01" / "evaluation_prompt.txt");
    CHECK(prompt.find("Agent 0:") != std::string::npos);
    CHECK(prompt.find("Agent 1:") != std::string::npos);
    CHECK(prompt.find("Agent 2:") == std::string::npos);

    const json selected = json::parse(read_file(dir / "subtask_01" / "selected"));
    CHECK(selected.at("method") == "llm");
    CHECK(selected.at("agent_index") == 1);
    CHECK(selected.at("candidate") == 3);  // agent 1 is the second surviving slot
    CHECK(state.history[0].selected_candidate == 3);
    CHECK(fs::exists(dir / "subtask_01" / "candidate_0" / "failed"));
    CHECK(fs::exists(dir / "subtask_01" / "candidate_2" / "failed"));
    CHECK_FALSE(fs::exists(dir / "subtask_01" / "candidate_2" / "checkpoint"));
    fs::remove_all(dir);
}

TEST_CASE("a single candidate still goes through the evaluation query") {
    const fs::path dir = fresh_dir("single");
    json fixture = {{"curriculum:0", one_task_curriculum()},
                    {"task_code:1", {kOpenTaskCode}},
                    {"evaluation:1", "Decision: Agent 0\nReason: only agent"}};
    auto backend = ScriptedBackend::from_text(fixture.dump());
    Orchestrator orchestrator(open_config("curriculum", 1), dir, backend.get());
    orchestrator.run();
    CHECK(backend->call_count() == 3);  // curriculum, one task code, one evaluation
    const json selected = json::parse(read_file(dir / "subtask_01" / "selected"));
    CHECK(selected.at("method") == "llm");
    CHECK(selected.at("candidate") == 0);
    fs::remove_all(dir);
}

TEST_CASE("an unusable evaluation response falls back to target success") {
    const fs::path dir = fresh_dir("fallback");
    json fixture = {{"curriculum:0", one_task_curriculum()},
                    {"task_code:1", {kOpenTaskCode, kOpenTaskCode}},
                    {"evaluation:1", "I cannot choose between these agents."}};
    auto backend = ScriptedBackend::from_text(fixture.dump());
    Orchestrator orchestrator(open_config("curriculum", 2), dir, backend.get());
    const RunState state = orchestrator.run();
    const json selected = json::parse(read_file(dir / "subtask_01" / "selected"));
    CHECK(selected.at("method") == "fallback");
    // identical candidates tie on target success, so the lowest index wins
    CHECK(selected.at("candidate") == 0);
    CHECK(state.history[0].selected_candidate == 0);
    fs::remove_all(dir);
}

TEST_CASE("a missing evaluation fixture also falls back deterministically") {
    const fs::path dir = fresh_dir("fallback_missing");
    json fixture = {{"curriculum:0", one_task_curriculum()},
                    {"task_code:1", {kOpenTaskCode, kOpenTaskCode}}};
    auto backend = ScriptedBackend::from_text(fixture.dump());
    Orchestrator orchestrator(open_config("curriculum", 2), dir, backend.get());
    orchestrator.run();
    CHECK(json::parse(read_file(dir / "subtask_01" / "selected")).at("method") == "fallback");
    fs::remove_all(dir);
}

TEST_CASE("zeroshot mode spends the multiplied budget on a fixed-horizon env") {
    const fs::path dir = fresh_dir("zeroshot");
    json fixture = {{"task_code:0", {kOpenTaskCode, kOpenTaskCode}}};
    auto backend = ScriptedBackend::from_text(fixture.dump());
    RunConfig cfg = open_config("zeroshot", 2);
    cfg.train.iterations = 2;
    cfg.zeroshot_budget_multiplier = 3;
    Orchestrator orchestrator(cfg, dir, backend.get());
    const RunState state = orchestrator.run();

    const auto env = Environment::definition("point_open");
    const std::uint64_t per_candidate = static_cast<std::uint64_t>(cfg.train.population) *
                                        cfg.train.episodes_per_fitness * env.horizon *
                                        (cfg.train.iterations * cfg.zeroshot_budget_multiplier);
    REQUIRE(state.metrics.size() == 2);
    CHECK(state.metrics[0].env_steps == 2 * per_candidate);
    CHECK(state.total_env_steps == 2 * per_candidate);
    CHECK(state.finished);
    CHECK(json::parse(read_file(dir / "subtask_01" / "selected")).at("method") ==
          "target_success");
    CHECK(backend->call_count() == 2);  // no curriculum, no evaluation queries

    // resuming a completed zeroshot run does not retrain
    const RunState resumed = Orchestrator::resume(dir, backend.get());
    CHECK(resumed.finished);
    CHECK(backend->call_count() == 2);
    fs::remove_all(dir);
}

TEST_CASE("sparse mode trains a builtin reward without any backend") {
    const fs::path dir = fresh_dir("sparse");
    RunConfig cfg = open_config("sparse", 1);
    cfg.backend.clear();
    Orchestrator orchestrator(cfg, dir, nullptr);
    const RunState state = orchestrator.run();
    CHECK(state.finished);
    CHECK(fs::exists(dir / "subtask_01" / "candidate_0" / "task_code.txt"));
    CHECK(fs::exists(dir / "subtask_01" / "candidate_0" / "fitness_curve.csv"));
    CHECK(json::parse(read_file(dir / "subtask_01" / "selected")).at("method") == "builtin");
    CHECK(state.policy.provenance.subtask == 1);
    fs::remove_all(dir);
}

TEST_CASE("oversized curricula are truncated at the hard cap") {
    const fs::path dir = fresh_dir("truncate");
    std::ostringstream curriculum;
    for (int i = 1; i <= 9; ++i) {
        curriculum << "Task " << i << "\nName: " << (i == 9 ? "Original task" : "Stage")
                   << "\nDescription: step " << i << "\nReason: progression\n\n";
    }
    json fixture = {{"curriculum:0", curriculum.str()}};
    for (int i = 1; i <= 8; ++i) {
        fixture["task_code:" + std::to_string(i)] = json::array({kOpenTaskCode});
        fixture["evaluation:" + std::to_string(i)] = "Decision: Agent 0\nReason: only one";
    }
    auto backend = ScriptedBackend::from_text(fixture.dump());
    Orchestrator orchestrator(open_config("curriculum", 1), dir, backend.get());
    const RunState state = orchestrator.run();
    CHECK(state.curriculum.tasks.size() == 8);
    CHECK(state.history.size() == 8);
    CHECK(json::parse(read_file(dir / "curriculum")).at("tasks").size() == 8);
    CHECK(fs::exists(dir / "subtask_08"));
    CHECK_FALSE(fs::exists(dir / "subtask_09"));
    fs::remove_all(dir);
}

TEST_CASE("an unparseable curriculum exhausts its retries and aborts") {
    const fs::path dir = fresh_dir("bad_curriculum");
    json fixture = {{"curriculum:0", {"no tasks here", "still nothing"}}};
    auto backend = ScriptedBackend::from_text(fixture.dump());
    RunConfig cfg = open_config("curriculum", 1);
    cfg.retries = 1;
    Orchestrator orchestrator(cfg, dir, backend.get());
    CHECK_THROWS_AS(orchestrator.run(), CurriculumParseFailure);
    CHECK(backend->call_count() == 2);
    fs::remove_all(dir);
}

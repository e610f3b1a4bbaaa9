#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "curricullm/backend.hpp"
#include "curricullm/policy.hpp"
#include "curricullm/prompts.hpp"
#include "curricullm/stats.hpp"
#include "curricullm/trainer.hpp"

namespace curricullm {

inline constexpr int kMaxCandidates = 5;  // K cap

struct RunConfig {
    std::string env_id;
    std::string backend;  // live:<url>,<model> | scripted:<path> | replay:<dir>[,...]
    std::string model = "gpt-4-turbo";
    std::string mode = "curriculum";  // curriculum | zeroshot | sparse
    int candidates = 4;               // K task-code samples per subtask
    int retries = 2;                  // extra attempts per candidate slot / evaluation query
    int eval_episodes = 20;
    int final_eval_episodes = 100;
    int zeroshot_budget_multiplier = 3;  // matches an N-subtask curriculum budget
    int history_char_budget = 8000;
    std::uint64_t seed = 0;
    TrainConfig train;

    void validate() const;
    std::string to_json() const;  // canonical form, also the on-disk `config` file
    static RunConfig from_json(const std::string& text);
};

struct HistoryEntry {
    TaskSpec task;
    std::string code_source;  // full selected task-code response text
    TrajectorySummary summary;
    int selected_candidate = 0;
};

struct SubtaskMetrics {
    std::string stage;  // "subtask_01", ..., "final"
    int selected_candidate = -1;
    double success_rate = 0.0;
    double mean_sparse_return = 0.0;
    double episode_length_mean = 0.0;
    std::uint64_t env_steps = 0;
};

struct RunState {
    RunConfig config;
    Curriculum curriculum;
    std::vector<HistoryEntry> history;
    PolicyCheckpoint policy;
    std::vector<SubtaskMetrics> metrics;
    TargetEvalResult final_target;
    std::uint64_t total_env_steps = 0;
    bool finished = false;
};

// Loads the stored config of an existing run directory.
RunConfig load_run_config(const std::filesystem::path& run_dir);

// Parses a config document and applies `key=value` overrides (dotted paths
// reach into the trainer block, e.g. train.population=32). Overrides must
// name existing config keys.
RunConfig parse_config_with_overrides(const std::string& json_text,
                                      const std::vector<std::string>& overrides);

// Executes the pipeline in a run directory and persists every stage. One
// orchestrator owns a run directory at a time (lock file); LLM traffic is
// serialized by the backend, candidate training runs seed-isolated.
class Orchestrator {
public:
    Orchestrator(RunConfig config, std::filesystem::path run_dir, ChatBackend* backend);

    // Fresh run; the directory must be empty or absent.
    RunState run();

    // Continues after the last fully persisted subtask. When `expected` is
    // given it must match the stored config (ConfigMismatch otherwise).
    static RunState resume(const std::filesystem::path& run_dir, ChatBackend* backend,
                           const std::optional<RunConfig>& expected = std::nullopt);

private:
    struct CandidateResult {
        int index = 0;
        bool ok = false;
        std::string failure;
        std::string code_source;
        TrainResult train;
        TrajectorySummary summary;
        TargetEvalResult target;
    };

    RunState run_impl(bool resuming);
    RunState run_curriculum_mode(RunState state, int completed_subtasks);
    RunState run_zeroshot_mode(RunState state, int completed_subtasks);
    RunState run_sparse_mode(RunState state, int completed_subtasks);

    Curriculum obtain_curriculum(RunState& state);
    void run_subtask(RunState& state, int subtask_index, const TaskSpec& task, bool warm_start,
                     int train_iterations);
    CandidateResult build_candidate(RunState& state, int subtask_index, int candidate,
                                    const TaskSpec& task, bool warm_start, int train_iterations,
                                    int* attempt_counter);
    std::pair<int, Decision> select_candidate(RunState& state, int subtask_index,
                                              const TaskSpec& task,
                                              const std::vector<CandidateResult>& candidates,
                                              bool* used_fallback);
    void finalize(RunState& state);

    std::vector<HistoryItem> history_items(const RunState& state) const;
    std::filesystem::path subtask_dir(int subtask_index) const;
    void persist_candidate(int subtask_index, const CandidateResult& result);
    void persist_manifest(const RunState& state, int completed_subtasks);
    void persist_history(const RunState& state);
    void persist_metrics(const RunState& state);
    void log(const std::string& message);

    RunConfig config_;
    std::filesystem::path run_dir_;
    ChatBackend* backend_;
    EnvironmentDefinition env_;
    PromptOptions prompt_opts_;
};

}  // namespace curricullm

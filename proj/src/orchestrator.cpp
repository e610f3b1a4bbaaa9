#include "curricullm/orchestrator.hpp"

#include <charconv>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "curricullm/dsl.hpp"
#include "curricullm/rng.hpp"

namespace curricullm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed-stream tags so the trainer, rollout, target-eval, and final-eval
// streams never overlap.
constexpr std::uint64_t kTrainStream = 0x747261696eULL;
constexpr std::uint64_t kRolloutStream = 0x726f6c6cULL;
constexpr std::uint64_t kTargetStream = 0x746172676574ULL;
constexpr std::uint64_t kFinalStream = 0x66696e616cULL;

std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptRunDirectory("cannot read '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw PipelineError("cannot write '" + tmp.string() + "'");
        out << content;
    }
    fs::rename(tmp, path);
}

json task_to_json(const TaskSpec& task) {
    return {{"index", task.index},
            {"name", task.name},
            {"description", task.description},
            {"reason", task.reason}};
}

TaskSpec task_from_json(const json& doc) {
    TaskSpec task;
    task.index = doc.at("index").get<int>();
    task.name = doc.at("name").get<std::string>();
    task.description = doc.at("description").get<std::string>();
    task.reason = doc.at("reason").get<std::string>();
    return task;
}

json train_to_json(const TrainConfig& cfg) {
    return {{"population", cfg.population},
            {"elite_count", cfg.elite_count},
            {"iterations", cfg.iterations},
            {"episodes_per_fitness", cfg.episodes_per_fitness},
            {"sigma_init_fresh", cfg.sigma_init_fresh},
            {"sigma_init_warm", cfg.sigma_init_warm},
            {"sigma_min", cfg.sigma_min},
            {"discount", cfg.discount},
            {"threads", cfg.threads}};
}

json metrics_to_json(const SubtaskMetrics& m) {
    return {{"stage", m.stage},
            {"selected_candidate", m.selected_candidate},
            {"success_rate", m.success_rate},
            {"mean_sparse_return", m.mean_sparse_return},
            {"episode_length_mean", m.episode_length_mean},
            {"env_steps", m.env_steps}};
}

SubtaskMetrics metrics_from_json(const json& doc) {
    SubtaskMetrics m;
    m.stage = doc.at("stage").get<std::string>();
    m.selected_candidate = doc.at("selected_candidate").get<int>();
    m.success_rate = doc.at("success_rate").get<double>();
    m.mean_sparse_return = doc.at("mean_sparse_return").get<double>();
    m.episode_length_mean = doc.at("episode_length_mean").get<double>();
    m.env_steps = doc.at("env_steps").get<std::uint64_t>();
    return m;
}

std::string render_request_text(const ChatRequest& req) {
    std::ostringstream out;
    for (const auto& m : req.messages) {
        out << (m.role == Role::system ? "[system]\n" : "[user]\n");
        out << m.content << "\n";
    }
    return out.str();
}

// Lock file marking a directory as owned by a running orchestrator.
struct RunLock {
    explicit RunLock(const fs::path& run_dir) : path(run_dir / ".lock") {
        if (fs::exists(path)) {
            throw PipelineError("run directory '" + run_dir.string() +
                                "' is locked by another orchestrator");
        }
        std::ofstream out(path);
        out << "pid " << ::getpid() << "\n";
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path, ec);
    }
    fs::path path;
};

}  // namespace

void RunConfig::validate() const {
    if (env_id.empty()) throw ConfigError("env_id is required");
    if (mode != "curriculum" && mode != "zeroshot" && mode != "sparse") {
        throw ConfigError("mode must be curriculum, zeroshot, or sparse; got '" + mode + "'");
    }
    if (candidates < 1) throw ConfigError("candidates must be at least 1");
    if (candidates > kMaxCandidates) {
        throw ConfigError("candidates must be at most " + std::to_string(kMaxCandidates));
    }
    if (retries < 0) throw ConfigError("retries must be non-negative");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be at least 1");
    if (final_eval_episodes < 1) throw ConfigError("final_eval_episodes must be at least 1");
    if (zeroshot_budget_multiplier < 1) {
        throw ConfigError("zeroshot_budget_multiplier must be at least 1");
    }
    if (history_char_budget < 1) throw ConfigError("history_char_budget must be positive");
    if (mode != "sparse" && backend.empty()) {
        throw ConfigError("backend is required for mode '" + mode + "'");
    }
    train.validate();
}

std::string RunConfig::to_json() const {
    json doc = {{"env_id", env_id},
                {"backend", backend},
                {"model", model},
                {"mode", mode},
                {"candidates", candidates},
                {"retries", retries},
                {"eval_episodes", eval_episodes},
                {"final_eval_episodes", final_eval_episodes},
                {"zeroshot_budget_multiplier", zeroshot_budget_multiplier},
                {"history_char_budget", history_char_budget},
                {"seed", seed},
                {"train", train_to_json(train)}};
    return doc.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    RunConfig cfg;
    const json train_defaults = train_to_json(cfg.train);
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string& key = it.key();
        try {
            if (key == "env_id") cfg.env_id = it.value().get<std::string>();
            else if (key == "backend") cfg.backend = it.value().get<std::string>();
            else if (key == "model") cfg.model = it.value().get<std::string>();
            else if (key == "mode") cfg.mode = it.value().get<std::string>();
            else if (key == "candidates") cfg.candidates = it.value().get<int>();
            else if (key == "retries") cfg.retries = it.value().get<int>();
            else if (key == "eval_episodes") cfg.eval_episodes = it.value().get<int>();
            else if (key == "final_eval_episodes") cfg.final_eval_episodes = it.value().get<int>();
            else if (key == "zeroshot_budget_multiplier")
                cfg.zeroshot_budget_multiplier = it.value().get<int>();
            else if (key == "history_char_budget")
                cfg.history_char_budget = it.value().get<int>();
            else if (key == "seed") cfg.seed = it.value().get<std::uint64_t>();
            else if (key == "train") {
                for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) {
                    const std::string& tkey = jt.key();
                    if (!train_defaults.contains(tkey)) {
                        throw ConfigError("unknown config key 'train." + tkey + "'");
                    }
                    if (tkey == "population") cfg.train.population = jt.value().get<int>();
                    else if (tkey == "elite_count") cfg.train.elite_count = jt.value().get<int>();
                    else if (tkey == "iterations") cfg.train.iterations = jt.value().get<int>();
                    else if (tkey == "episodes_per_fitness")
                        cfg.train.episodes_per_fitness = jt.value().get<int>();
                    else if (tkey == "sigma_init_fresh")
                        cfg.train.sigma_init_fresh = jt.value().get<double>();
                    else if (tkey == "sigma_init_warm")
                        cfg.train.sigma_init_warm = jt.value().get<double>();
                    else if (tkey == "sigma_min") cfg.train.sigma_min = jt.value().get<double>();
                    else if (tkey == "discount") cfg.train.discount = jt.value().get<double>();
                    else if (tkey == "threads") cfg.train.threads = jt.value().get<int>();
                }
            } else {
                throw ConfigError("unknown config key '" + key + "'");
            }
        } catch (const json::exception& e) {
            throw ConfigError("bad value for config key '" + key + "': " + e.what());
        }
    }
    return cfg;
}

RunConfig parse_config_with_overrides(const std::string& json_text,
                                      const std::vector<std::string>& overrides) {
    json doc;
    try {
        doc = json_text.empty() ? json::object() : json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    for (const std::string& entry : overrides) {
        auto eq = entry.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("override '" + entry + "' is not of the form key=value");
        }
        const std::string key = entry.substr(0, eq);
        const std::string value = entry.substr(eq + 1);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;  // unquoted strings pass through as-is
        }
        auto dot = key.find('.');
        if (dot == std::string::npos) {
            doc[key] = parsed;
        } else {
            doc[key.substr(0, dot)][key.substr(dot + 1)] = parsed;
        }
    }
    return RunConfig::from_json(doc.dump());
}

RunConfig load_run_config(const fs::path& run_dir) {
    const fs::path path = run_dir / "config";
    if (!fs::exists(path)) {
        throw CorruptRunDirectory("no config file in '" + run_dir.string() + "'");
    }
    try {
        return RunConfig::from_json(read_text(path));
    } catch (const ConfigError& e) {
        throw CorruptRunDirectory(std::string("stored config unreadable: ") + e.what());
    }
}

Orchestrator::Orchestrator(RunConfig config, fs::path run_dir, ChatBackend* backend)
    : config_(std::move(config)), run_dir_(std::move(run_dir)), backend_(backend) {
    config_.validate();
    env_ = Environment::definition(config_.env_id);
    if (config_.mode != "sparse" && backend_ == nullptr) {
        throw ConfigError("mode '" + config_.mode + "' needs a backend");
    }
    prompt_opts_.model = config_.model;
    prompt_opts_.history_char_budget = config_.history_char_budget;
}

RunState Orchestrator::run() {
    if (fs::exists(run_dir_) && !fs::is_empty(run_dir_)) {
        throw ConfigError("run directory '" + run_dir_.string() + "' is not empty");
    }
    return run_impl(false);
}

RunState Orchestrator::run_impl(bool resuming) {
    fs::create_directories(run_dir_);
    RunLock lock(run_dir_);
    if (!resuming) {
        write_text(run_dir_ / "config", config_.to_json());
        log("run started: mode=" + config_.mode + " env=" + config_.env_id +
            " seed=" + std::to_string(config_.seed));
    } else {
        log("run resumed");
    }

    RunState state;
    state.config = config_;
    state.policy = PolicyCheckpoint::zeros(env_);

    int completed = 0;
    if (resuming) {
        const fs::path manifest_path = run_dir_ / "manifest";
        if (!fs::exists(manifest_path)) {
            throw CorruptRunDirectory("no manifest in '" + run_dir_.string() + "'");
        }
        json manifest;
        try {
            manifest = json::parse(read_text(manifest_path));
            completed = manifest.at("completed_subtasks").get<int>();
            state.total_env_steps = manifest.at("total_env_steps").get<std::uint64_t>();
            state.finished = manifest.at("finished").get<bool>();
            for (const auto& row : manifest.at("metrics")) {
                state.metrics.push_back(metrics_from_json(row));
            }
            if (state.finished) {
                state.final_target.success_rate = manifest.at("final_success_rate").get<double>();
                state.final_target.mean_sparse_return =
                    manifest.at("final_mean_sparse_return").get<double>();
            }
        } catch (const json::exception& e) {
            throw CorruptRunDirectory(std::string("malformed manifest: ") + e.what());
        }

        if (fs::exists(run_dir_ / "curriculum")) {
            try {
                const json doc = json::parse(read_text(run_dir_ / "curriculum"));
                for (const auto& t : doc.at("tasks")) {
                    state.curriculum.tasks.push_back(task_from_json(t));
                }
            } catch (const json::exception& e) {
                throw CorruptRunDirectory(std::string("malformed curriculum: ") + e.what());
            }
        }
        if (fs::exists(run_dir_ / "history")) {
            try {
                const json doc = json::parse(read_text(run_dir_ / "history"));
                for (const auto& entry : doc) {
                    HistoryEntry h;
                    h.task = task_from_json(entry.at("task"));
                    h.code_source = entry.at("code").get<std::string>();
                    h.summary = summary_from_json(entry.at("summary").dump());
                    h.selected_candidate = entry.at("selected_candidate").get<int>();
                    if (!h.code_source.empty()) {
                        try {
                            dsl::compile_task_code(h.code_source, env_);
                        } catch (const dsl::DslError& e) {
                            throw CorruptRunDirectory("history entry for subtask " +
                                                      std::to_string(h.task.index) +
                                                      " no longer compiles: " + e.what());
                        }
                    }
                    state.history.push_back(std::move(h));
                }
            } catch (const json::exception& e) {
                throw CorruptRunDirectory(std::string("malformed history: ") + e.what());
            }
        }
        if (completed > 0) {
            if (static_cast<int>(state.history.size()) < completed && config_.mode != "sparse") {
                throw CorruptRunDirectory("history shorter than completed subtask count");
            }
            const fs::path sel_path = subtask_dir(completed) / "selected";
            try {
                const json sel = json::parse(read_text(sel_path));
                const int candidate = sel.at("candidate").get<int>();
                const fs::path ckpt = subtask_dir(completed) /
                                      ("candidate_" + std::to_string(candidate)) / "checkpoint";
                state.policy = PolicyCheckpoint::deserialize(read_text(ckpt));
            } catch (const json::exception& e) {
                throw CorruptRunDirectory(std::string("malformed selection record: ") + e.what());
            } catch (const Error& e) {
                throw CorruptRunDirectory(std::string("cannot restore selected checkpoint: ") +
                                          e.what());
            }
        }
        if (state.finished) {
            log("run already finished; nothing to do");
            return state;
        }
        // Drop any final-metrics row written by an interrupted finalize pass.
        while (!state.metrics.empty() && state.metrics.back().stage == "final") {
            state.metrics.pop_back();
        }
    }

    if (config_.mode == "zeroshot") return run_zeroshot_mode(std::move(state), completed);
    if (config_.mode == "sparse") return run_sparse_mode(std::move(state), completed);
    return run_curriculum_mode(std::move(state), completed);
}

RunState Orchestrator::run_curriculum_mode(RunState state, int completed_subtasks) {
    if (state.curriculum.tasks.empty()) {
        state.curriculum = obtain_curriculum(state);
        persist_manifest(state, 0);
    }
    for (int n = completed_subtasks + 1; n <= static_cast<int>(state.curriculum.tasks.size());
         ++n) {
        run_subtask(state, n, state.curriculum.tasks[n - 1], true, config_.train.iterations);
    }
    finalize(state);
    return state;
}

Curriculum Orchestrator::obtain_curriculum(RunState& state) {
    const ChatRequest req = render_curriculum_prompt(env_, prompt_opts_);
    std::string response;
    Curriculum curriculum;
    std::string last_error;
    bool parsed = false;
    for (int attempt = 0; attempt <= config_.retries && !parsed; ++attempt) {
        response = backend_->complete(req, {"curriculum", 0, attempt});
        try {
            curriculum = parse_curriculum(response);
            parsed = true;
        } catch (const PromptParseError& e) {
            last_error = e.what();
            log("curriculum attempt " + std::to_string(attempt) + " unparseable: " + last_error);
        }
    }
    if (!parsed) {
        throw CurriculumParseFailure("curriculum response unusable after " +
                                     std::to_string(config_.retries + 1) +
                                     " attempt(s): " + last_error);
    }
    if (static_cast<int>(curriculum.tasks.size()) > kCurriculumHardCap) {
        log("curriculum has " + std::to_string(curriculum.tasks.size()) +
            " tasks; truncating to " + std::to_string(kCurriculumHardCap));
        curriculum.tasks.resize(kCurriculumHardCap);
    } else if (static_cast<int>(curriculum.tasks.size()) > kCurriculumWarnAbove) {
        log("warning: curriculum has " + std::to_string(curriculum.tasks.size()) +
            " tasks, more than the suggested maximum of " +
            std::to_string(kCurriculumWarnAbove));
    }
    json doc = {{"raw", response}, {"tasks", json::array()}};
    for (const auto& task : curriculum.tasks) doc["tasks"].push_back(task_to_json(task));
    write_text(run_dir_ / "curriculum", doc.dump(2) + "\n");
    log("curriculum parsed: " + std::to_string(curriculum.tasks.size()) + " task(s)");
    state.curriculum = curriculum;
    return curriculum;
}

void Orchestrator::run_subtask(RunState& state, int subtask_index, const TaskSpec& task,
                               bool warm_start, int train_iterations) {
    const fs::path dir = subtask_dir(subtask_index);
    fs::create_directories(dir);
    log("subtask " + std::to_string(subtask_index) + " '" + task.name + "' started");

    int attempt_counter = 0;
    std::vector<CandidateResult> results;
    std::uint64_t subtask_env_steps = 0;
    for (int k = 0; k < config_.candidates; ++k) {
        CandidateResult result = build_candidate(state, subtask_index, k, task, warm_start,
                                                 train_iterations, &attempt_counter);
        subtask_env_steps += result.train.env_steps;
        persist_candidate(subtask_index, result);
        log("subtask " + std::to_string(subtask_index) + " candidate " + std::to_string(k) +
            (result.ok ? " trained, target success " + fmt_double(result.target.success_rate)
                       : " failed: " + result.failure));
        results.push_back(std::move(result));
    }

    bool used_fallback = false;
    auto [selected, decision] = select_candidate(state, subtask_index, task, results,
                                                 &used_fallback);
    const CandidateResult& chosen = results[selected];

    state.policy = chosen.train.checkpoint;
    HistoryEntry entry;
    entry.task = task;
    entry.code_source = chosen.code_source;
    entry.summary = chosen.summary;
    entry.selected_candidate = selected;
    state.history.push_back(std::move(entry));

    SubtaskMetrics metrics;
    char stage[32];
    std::snprintf(stage, sizeof(stage), "subtask_%02d", subtask_index);
    metrics.stage = stage;
    metrics.selected_candidate = selected;
    metrics.success_rate = chosen.target.success_rate;
    metrics.mean_sparse_return = chosen.target.mean_sparse_return;
    metrics.episode_length_mean = chosen.summary.episode_length_mean;
    metrics.env_steps = subtask_env_steps;
    state.metrics.push_back(metrics);
    state.total_env_steps += subtask_env_steps;

    persist_history(state);
    persist_metrics(state);
    persist_manifest(state, subtask_index);
    log("subtask " + std::to_string(subtask_index) + " selected candidate " +
        std::to_string(selected) + (used_fallback ? " (fallback)" : "") + ", target success " +
        fmt_double(chosen.target.success_rate));
}

Orchestrator::CandidateResult Orchestrator::build_candidate(RunState& state, int subtask_index,
                                                            int candidate, const TaskSpec& task,
                                                            bool warm_start, int train_iterations,
                                                            int* attempt_counter) {
    CandidateResult result;
    result.index = candidate;
    const int fixture_subtask = config_.mode == "zeroshot" ? 0 : subtask_index;

    std::optional<dsl::TaskCode> code;
    const ChatRequest req =
        render_task_code_prompt(env_, task, history_items(state), prompt_opts_);
    for (int attempt = 0; attempt <= config_.retries && !code; ++attempt) {
        std::string response;
        try {
            response = backend_->complete(req, {"task_code", fixture_subtask,
                                                (*attempt_counter)++});
        } catch (const FixtureExhausted& e) {
            if (result.failure.empty()) result.failure = e.what();
            break;
        } catch (const FixtureKeyMissing& e) {
            if (result.failure.empty()) result.failure = e.what();
            break;
        }
        result.code_source = response;
        try {
            code = dsl::compile_task_code(response, env_);
        } catch (const dsl::DslError& e) {
            result.failure = e.what();
            log("subtask " + std::to_string(subtask_index) + " candidate " +
                std::to_string(candidate) + " attempt " + std::to_string(attempt) +
                " rejected: " + result.failure);
        }
    }
    if (!code) return result;

    TrainConfig tcfg = config_.train;
    tcfg.iterations = train_iterations;
    tcfg.seed = mix_seed(config_.seed ^ kTrainStream, subtask_index, candidate);
    std::optional<PolicyCheckpoint> init;
    if (warm_start && state.policy.provenance.subtask >= 0) init = state.policy;
    try {
        result.train = train(init, env_, *code, tcfg);
    } catch (const TaskCodeRuntimeFault& e) {
        result.failure = e.what();
        return result;
    }
    result.train.checkpoint.provenance = {subtask_index, candidate, tcfg.seed};

    const TrajectoryBatch batch =
        rollout(result.train.checkpoint, env_, code->goal_spec, config_.eval_episodes,
                mix_seed(config_.seed ^ kRolloutStream, subtask_index, candidate), &*code,
                tcfg.discount);
    result.summary = summarize(batch, env_);
    result.summary.candidate_index = candidate;
    result.target = evaluate_target(
        result.train.checkpoint, env_, config_.eval_episodes,
        mix_seed(config_.seed ^ kTargetStream, subtask_index, candidate), tcfg.discount);
    result.ok = true;
    return result;
}

std::pair<int, Decision> Orchestrator::select_candidate(
    RunState& state, int subtask_index, const TaskSpec& task,
    const std::vector<CandidateResult>& candidates, bool* used_fallback) {
    std::vector<int> agents;  // agent index -> candidate index
    std::vector<TrajectorySummary> summaries;
    for (const auto& c : candidates) {
        if (!c.ok) continue;
        agents.push_back(c.index);
        summaries.push_back(c.summary);
    }
    if (agents.empty()) throw AllCandidatesFailed(subtask_index);

    const fs::path dir = subtask_dir(subtask_index);
    const std::string block = render_summaries(summaries, env_);
    std::vector<HistoryItem> history = history_items(state);
    const ChatRequest req = render_evaluation_prompt(task, history, block,
                                                     static_cast<int>(agents.size()),
                                                     prompt_opts_);
    write_text(dir / "evaluation_prompt.txt", render_request_text(req));

    std::optional<Decision> decision;
    std::string last_response;
    for (int attempt = 0; attempt <= config_.retries && !decision; ++attempt) {
        try {
            last_response = backend_->complete(req, {"evaluation", subtask_index, attempt});
        } catch (const FixtureExhausted&) {
            break;
        } catch (const FixtureKeyMissing&) {
            break;
        }
        try {
            decision = parse_decision(last_response, static_cast<int>(agents.size()));
        } catch (const PromptParseError& e) {
            log("subtask " + std::to_string(subtask_index) + " evaluation attempt " +
                std::to_string(attempt) + " unusable: " + e.what());
        }
    }
    write_text(dir / "evaluation_response.txt", last_response);

    int candidate;
    json record;
    if (decision) {
        candidate = agents[decision->agent_index];
        *used_fallback = false;
        record = {{"candidate", candidate},
                  {"agent_index", decision->agent_index},
                  {"method", "llm"},
                  {"reason", decision->reason}};
    } else {
        // Deterministic fallback: best target success rate, lowest index wins ties.
        candidate = agents[0];
        for (int idx : agents) {
            if (candidates[idx].target.success_rate > candidates[candidate].target.success_rate) {
                candidate = idx;
            }
        }
        *used_fallback = true;
        decision = Decision{};
        decision->agent_index = -1;
        record = {{"candidate", candidate},
                  {"agent_index", -1},
                  {"method", "fallback"},
                  {"reason", "evaluation response unusable; selected by target success rate"}};
    }
    write_text(dir / "selected", record.dump(2) + "\n");
    return {candidate, *decision};
}

RunState Orchestrator::run_zeroshot_mode(RunState state, int completed_subtasks) {
    if (completed_subtasks >= 1) {
        finalize(state);
        return state;
    }
    TaskSpec task;
    task.index = 1;
    task.name = "Original task";
    task.description = env_.target_description;
    task.reason = "Learn the target task directly, without a curriculum.";

    const fs::path dir = subtask_dir(1);
    fs::create_directories(dir);
    const int iterations = config_.train.iterations * config_.zeroshot_budget_multiplier;
    log("zeroshot run started, " + std::to_string(iterations) + " iterations per candidate");

    int attempt_counter = 0;
    std::vector<CandidateResult> results;
    std::uint64_t env_steps = 0;
    for (int k = 0; k < config_.candidates; ++k) {
        CandidateResult result =
            build_candidate(state, 1, k, task, false, iterations, &attempt_counter);
        env_steps += result.train.env_steps;
        persist_candidate(1, result);
        log("zeroshot candidate " + std::to_string(k) +
            (result.ok ? " trained, target success " + fmt_double(result.target.success_rate)
                       : " failed: " + result.failure));
        results.push_back(std::move(result));
    }

    int selected = -1;
    for (const auto& r : results) {
        if (!r.ok) continue;
        if (selected < 0 || r.target.success_rate > results[selected].target.success_rate) {
            selected = r.index;
        }
    }
    if (selected < 0) throw AllCandidatesFailed(1);
    const CandidateResult& chosen = results[selected];

    json record = {{"candidate", selected},
                   {"agent_index", -1},
                   {"method", "target_success"},
                   {"reason", "zeroshot mode selects the best target success rate"}};
    write_text(dir / "selected", record.dump(2) + "\n");

    state.policy = chosen.train.checkpoint;
    HistoryEntry entry;
    entry.task = task;
    entry.code_source = chosen.code_source;
    entry.summary = chosen.summary;
    entry.selected_candidate = selected;
    state.history.push_back(std::move(entry));

    SubtaskMetrics metrics;
    metrics.stage = "subtask_01";
    metrics.selected_candidate = selected;
    metrics.success_rate = chosen.target.success_rate;
    metrics.mean_sparse_return = chosen.target.mean_sparse_return;
    metrics.episode_length_mean = chosen.summary.episode_length_mean;
    metrics.env_steps = env_steps;
    state.metrics.push_back(metrics);
    state.total_env_steps += env_steps;

    persist_history(state);
    persist_metrics(state);
    persist_manifest(state, 1);
    finalize(state);
    return state;
}

RunState Orchestrator::run_sparse_mode(RunState state, int completed_subtasks) {
    if (completed_subtasks >= 1) {
        finalize(state);
        return state;
    }
    const fs::path dir = subtask_dir(1);
    fs::create_directories(dir / "candidate_0");
    const int iterations = config_.train.iterations * config_.zeroshot_budget_multiplier;
    log("sparse baseline started, " + std::to_string(iterations) + " iterations");

    TrainConfig tcfg = config_.train;
    tcfg.iterations = iterations;
    tcfg.seed = mix_seed(config_.seed ^ kTrainStream, 1, 0);
    const RewardFn sparse = [](const EnvironmentDefinition&, const Transition& t) {
        return t.success ? 1.0 : 0.0;
    };
    TrainResult trained =
        train_with_reward(std::nullopt, env_, sparse, env_.target_goal_spec, tcfg);
    trained.checkpoint.provenance = {1, 0, tcfg.seed};

    const TrajectoryBatch batch =
        rollout(trained.checkpoint, env_, env_.target_goal_spec, config_.eval_episodes,
                mix_seed(config_.seed ^ kRolloutStream, 1, 0), nullptr, tcfg.discount);
    TrajectorySummary summary = summarize(batch, env_);
    const TargetEvalResult target =
        evaluate_target(trained.checkpoint, env_, config_.eval_episodes,
                        mix_seed(config_.seed ^ kTargetStream, 1, 0), tcfg.discount);

    const fs::path cdir = dir / "candidate_0";
    write_text(cdir / "task_code.txt",
               "builtin sparse reward: 1 on the success step, 0 otherwise\n");
    write_text(cdir / "checkpoint", trained.checkpoint.serialize());
    write_text(cdir / "summary", summary_to_json(summary));
    std::ostringstream curve;
    curve << "iteration,mean_fitness,best_fitness,best_so_far\n";
    for (const auto& p : trained.curve) {
        curve << p.iteration << "," << fmt_double(p.mean_fitness) << ","
              << fmt_double(p.best_fitness) << "," << fmt_double(p.best_so_far) << "\n";
    }
    write_text(cdir / "fitness_curve.csv", curve.str());
    json record = {{"candidate", 0},
                   {"agent_index", -1},
                   {"method", "builtin"},
                   {"reason", "sparse mode trains a single builtin-reward candidate"}};
    write_text(dir / "selected", record.dump(2) + "\n");

    state.policy = trained.checkpoint;
    SubtaskMetrics metrics;
    metrics.stage = "subtask_01";
    metrics.selected_candidate = 0;
    metrics.success_rate = target.success_rate;
    metrics.mean_sparse_return = target.mean_sparse_return;
    metrics.episode_length_mean = summary.episode_length_mean;
    metrics.env_steps = trained.env_steps;
    state.metrics.push_back(metrics);
    state.total_env_steps += trained.env_steps;

    persist_history(state);
    persist_metrics(state);
    persist_manifest(state, 1);
    finalize(state);
    return state;
}

void Orchestrator::finalize(RunState& state) {
    state.final_target =
        evaluate_target(state.policy, env_, config_.final_eval_episodes,
                        mix_seed(config_.seed ^ kFinalStream, 0, 0), config_.train.discount);
    SubtaskMetrics metrics;
    metrics.stage = "final";
    metrics.success_rate = state.final_target.success_rate;
    metrics.mean_sparse_return = state.final_target.mean_sparse_return;
    metrics.env_steps = state.total_env_steps;
    state.metrics.push_back(metrics);
    state.finished = true;
    persist_metrics(state);
    persist_manifest(state, static_cast<int>(state.history.size()) == 0
                                ? 1
                                : static_cast<int>(state.history.size()));
    log("run finished: final target success " + fmt_double(state.final_target.success_rate) +
        ", total env steps " + std::to_string(state.total_env_steps));
}

RunState Orchestrator::resume(const fs::path& run_dir, ChatBackend* backend,
                              const std::optional<RunConfig>& expected) {
    if (!fs::exists(run_dir) || !fs::exists(run_dir / "config") ||
        !fs::exists(run_dir / "manifest")) {
        throw CorruptRunDirectory("'" + run_dir.string() +
                                  "' does not contain a resumable run");
    }
    RunConfig stored = load_run_config(run_dir);
    if (expected && expected->to_json() != stored.to_json()) {
        throw ConfigMismatch("supplied config differs from the one stored in '" +
                             run_dir.string() + "'");
    }
    Orchestrator orchestrator(std::move(stored), run_dir, backend);
    return orchestrator.run_impl(true);
}

std::vector<HistoryItem> Orchestrator::history_items(const RunState& state) const {
    std::vector<HistoryItem> items;
    items.reserve(state.history.size());
    for (const auto& entry : state.history) {
        items.push_back({entry.task, entry.code_source});
    }
    return items;
}

fs::path Orchestrator::subtask_dir(int subtask_index) const {
    char name[32];
    std::snprintf(name, sizeof(name), "subtask_%02d", subtask_index);
    return run_dir_ / name;
}

void Orchestrator::persist_candidate(int subtask_index, const CandidateResult& result) {
    const fs::path dir = subtask_dir(subtask_index) /
                         ("candidate_" + std::to_string(result.index));
    fs::create_directories(dir);
    write_text(dir / "task_code.txt", result.code_source);
    if (!result.ok) {
        write_text(dir / "failed", result.failure + "\n");
        return;
    }
    write_text(dir / "checkpoint", result.train.checkpoint.serialize());
    write_text(dir / "summary", summary_to_json(result.summary));
    std::ostringstream curve;
    curve << "iteration,mean_fitness,best_fitness,best_so_far\n";
    for (const auto& p : result.train.curve) {
        curve << p.iteration << "," << fmt_double(p.mean_fitness) << ","
              << fmt_double(p.best_fitness) << "," << fmt_double(p.best_so_far) << "\n";
    }
    write_text(dir / "fitness_curve.csv", curve.str());
}

void Orchestrator::persist_manifest(const RunState& state, int completed_subtasks) {
    json doc = {{"format_version", 1},
                {"env_id", config_.env_id},
                {"mode", config_.mode},
                {"seed", config_.seed},
                {"curriculum_size", state.curriculum.tasks.size()},
                {"completed_subtasks", completed_subtasks},
                {"total_env_steps", state.total_env_steps},
                {"finished", state.finished},
                {"metrics", json::array()}};
    for (const auto& m : state.metrics) doc["metrics"].push_back(metrics_to_json(m));
    if (state.finished) {
        doc["final_success_rate"] = state.final_target.success_rate;
        doc["final_mean_sparse_return"] = state.final_target.mean_sparse_return;
    }
    write_text(run_dir_ / "manifest", doc.dump(2) + "\n");
}

void Orchestrator::persist_history(const RunState& state) {
    json doc = json::array();
    for (const auto& entry : state.history) {
        doc.push_back({{"task", task_to_json(entry.task)},
                       {"code", entry.code_source},
                       {"selected_candidate", entry.selected_candidate},
                       {"summary", json::parse(summary_to_json(entry.summary))}});
    }
    write_text(run_dir_ / "history", doc.dump(2) + "\n");
}

void Orchestrator::persist_metrics(const RunState& state) {
    std::ostringstream out;
    out << "stage,selected_candidate,success_rate,mean_sparse_return,episode_length_mean,"
           "env_steps\n";
    for (const auto& m : state.metrics) {
        out << m.stage << ",";
        if (m.selected_candidate >= 0) out << m.selected_candidate;
        out << "," << fmt_double(m.success_rate) << "," << fmt_double(m.mean_sparse_return)
            << "," << fmt_double(m.episode_length_mean) << "," << m.env_steps << "\n";
    }
    write_text(run_dir_ / "target_metrics.csv", out.str());
}

void Orchestrator::log(const std::string& message) {
    std::ofstream out(run_dir_ / "run.log", std::ios::app);
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    out << "[" << stamp << "] " << message << "\n";
}

}  // namespace curricullm

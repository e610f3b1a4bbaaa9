#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI/CLI.hpp>
#include <nlohmann/json.hpp>

#include "curricullm/backend.hpp"
#include "curricullm/dsl.hpp"
#include "curricullm/env.hpp"
#include "curricullm/errors.hpp"
#include "curricullm/orchestrator.hpp"
#include "curricullm/policy.hpp"
#include "curricullm/report.hpp"
#include "curricullm/trainer.hpp"

namespace fs = std::filesystem;
using namespace curricullm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitPipeline = 4;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::string backend_spec;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts* opts, bool need_out) {
    cmd->add_option("--config", opts->config_path, "Config file (JSON)");
    auto* out = cmd->add_option("--out", opts->out_dir, "Run directory");
    if (need_out) out->required();
    cmd->add_option("--backend", opts->backend_spec,
                    "Backend spec: live:<url>,<model> | scripted:<fixture> | "
                    "replay:<dir>[,<url>,<model>]");
    cmd->add_option("--seed", opts->seed, "Master seed")
        ->each([opts](const std::string&) { opts->seed_set = true; });
    cmd->add_option("--set", opts->overrides, "Config override key=value (repeatable)");
}

RunConfig load_config(const CommonOpts& opts, const std::string& mode) {
    const std::string text = opts.config_path.empty() ? "{}" : read_file(opts.config_path);
    RunConfig cfg = parse_config_with_overrides(text, opts.overrides);
    cfg.mode = mode;
    if (!opts.backend_spec.empty()) cfg.backend = opts.backend_spec;
    if (opts.seed_set) cfg.seed = opts.seed;
    return cfg;
}

int run_pipeline(const CommonOpts& opts, const std::string& mode) {
    RunConfig cfg = load_config(opts, mode);
    cfg.validate();
    std::unique_ptr<ChatBackend> backend;
    if (mode != "sparse") backend = make_backend(cfg.backend);
    Orchestrator orchestrator(cfg, opts.out_dir, backend.get());
    RunState state = orchestrator.run();
    std::cout << "final target success_rate: " << state.final_target.success_rate << "\n";
    std::cout << "total env steps: " << state.total_env_steps << "\n";
    return kExitOk;
}

int run_resume(const CommonOpts& opts) {
    std::optional<RunConfig> expected;
    if (!opts.config_path.empty()) {
        expected = parse_config_with_overrides(read_file(opts.config_path), opts.overrides);
    }
    RunConfig stored = load_run_config(opts.out_dir);
    std::unique_ptr<ChatBackend> backend;
    if (stored.mode != "sparse") {
        backend = make_backend(opts.backend_spec.empty() ? stored.backend : opts.backend_spec);
    }
    RunState state = Orchestrator::resume(opts.out_dir, backend.get(), expected);
    std::cout << "final target success_rate: " << state.final_target.success_rate << "\n";
    return kExitOk;
}

int run_eval(const CommonOpts& opts, int episodes) {
    RunConfig stored = load_run_config(opts.out_dir);
    const EnvironmentDefinition env = Environment::definition(stored.env_id);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file((fs::path(opts.out_dir) / "manifest").string()));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptRunDirectory(std::string("malformed manifest: ") + e.what());
    }
    const int completed = manifest.at("completed_subtasks").get<int>();
    if (completed < 1) throw CorruptRunDirectory("run has no completed subtask to evaluate");
    char stage[32];
    std::snprintf(stage, sizeof(stage), "subtask_%02d", completed);
    const nlohmann::json sel = nlohmann::json::parse(
        read_file((fs::path(opts.out_dir) / stage / "selected").string()));
    const fs::path ckpt = fs::path(opts.out_dir) / stage /
                          ("candidate_" + std::to_string(sel.at("candidate").get<int>())) /
                          "checkpoint";
    const PolicyCheckpoint policy = PolicyCheckpoint::deserialize(read_file(ckpt.string()));

    const std::uint64_t seed = opts.seed_set ? opts.seed : stored.seed + 1;
    const TargetEvalResult result =
        evaluate_target(policy, env, episodes, seed, stored.train.discount);
    std::cout << "episodes: " << episodes << "\n";
    std::cout << "success_rate: " << result.success_rate << "\n";
    std::cout << "mean_sparse_return: " << result.mean_sparse_return << "\n";
    return kExitOk;
}

int run_report(const CommonOpts& opts) {
    const Report report = write_report(opts.out_dir);
    std::cout << report.table;
    return kExitOk;
}

int run_validate_dsl(const std::string& path, const std::string& env_id) {
    const EnvironmentDefinition env = Environment::definition(env_id);
    const std::string text = read_file(path);
    if (text.find("```reward") != std::string::npos) {
        const dsl::TaskCode code = dsl::compile_task_code(text, env);
        std::cout << "OK: task code valid for " << env_id << "\n";
        std::cout << dsl::pretty_print(code.program.program());
    } else {
        const dsl::TypedProgram program = dsl::typecheck(dsl::parse_program(text), env);
        std::cout << "OK: reward program valid for " << env_id << "\n";
        std::cout << dsl::pretty_print(program.program());
    }
    return kExitOk;
}

int run_dump_env(const std::string& env_id) {
    if (env_id.empty()) {
        for (const auto& id : Environment::builtin_ids()) std::cout << id << "\n";
        return kExitOk;
    }
    std::cout << env_description(Environment::definition(env_id));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LLM-driven curriculum learning pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    auto* run_cmd = app.add_subcommand("run", "Run the full curriculum pipeline");
    add_common(run_cmd, &opts, true);
    auto* zeroshot_cmd = app.add_subcommand("zeroshot", "Run the LLM-zeroshot baseline");
    add_common(zeroshot_cmd, &opts, true);
    auto* sparse_cmd = app.add_subcommand("sparse", "Run the sparse-reward baseline (no LLM)");
    add_common(sparse_cmd, &opts, true);
    auto* resume_cmd = app.add_subcommand("resume", "Resume an interrupted run");
    add_common(resume_cmd, &opts, true);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a run's final policy on the target task");
    int eval_episodes = 100;
    add_common(eval_cmd, &opts, true);
    eval_cmd->add_option("--episodes", eval_episodes, "Evaluation episode count");

    auto* report_cmd = app.add_subcommand("report", "Render result tables and curves for a run");
    add_common(report_cmd, &opts, true);

    auto* validate_cmd = app.add_subcommand("validate-dsl", "Check a reward program file");
    std::string dsl_path;
    std::string dsl_env = "point_maze";
    validate_cmd->add_option("file", dsl_path, "Program or task-code file")->required();
    validate_cmd->add_option("--env", dsl_env, "Environment id to typecheck against");

    auto* dump_cmd = app.add_subcommand("dump-env", "Print an environment description");
    std::string dump_env_id;
    dump_cmd->add_option("env", dump_env_id, "Environment id (omit to list)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (run_cmd->parsed()) return run_pipeline(opts, "curriculum");
        if (zeroshot_cmd->parsed()) return run_pipeline(opts, "zeroshot");
        if (sparse_cmd->parsed()) return run_pipeline(opts, "sparse");
        if (resume_cmd->parsed()) return run_resume(opts);
        if (eval_cmd->parsed()) return run_eval(opts, eval_episodes);
        if (report_cmd->parsed()) return run_report(opts);
        if (validate_cmd->parsed()) return run_validate_dsl(dsl_path, dsl_env);
        if (dump_cmd->parsed()) return run_dump_env(dump_env_id);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const dsl::DslError& e) {
        std::cerr << "task-code error: " << e.what() << "\n";
        return kExitPipeline;
    } catch (const Error& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return kExitPipeline;
    }
    return kExitConfig;
}

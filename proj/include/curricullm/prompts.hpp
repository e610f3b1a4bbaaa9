#pragma once

#include <string>
#include <vector>

#include "curricullm/backend.hpp"
#include "curricullm/env.hpp"
#include "curricullm/errors.hpp"

namespace curricullm {

// One curriculum subtask in natural language.
struct TaskSpec {
    int index = 0;  // 1-based position in the curriculum
    std::string name;
    std::string description;
    std::string reason;
};

struct Curriculum {
    std::vector<TaskSpec> tasks;
};

// Evaluation-LLM verdict; agent_index is 0-based.
struct Decision {
    int agent_index = 0;
    std::string reason;
};

enum class ParseErrorKind { NoTasksFound, MissingField, NoDecisionFound, IndexOutOfRange };

struct PromptParseError : Error {
    ParseErrorKind kind;
    PromptParseError(ParseErrorKind k, const std::string& message) : Error(message), kind(k) {}
};

struct MissingContextField : Error {
    using Error::Error;
};

// A previously completed subtask as injected into prompts.
struct HistoryItem {
    TaskSpec task;
    std::string code_source;  // selected task-code response text
};

inline constexpr int kCurriculumHardCap = 8;
inline constexpr int kCurriculumWarnAbove = 5;

struct PromptOptions {
    std::string model;
    double curriculum_temperature = 1.0;
    double task_code_temperature = 1.0;
    double evaluation_temperature = 0.0;
    int history_char_budget = 8000;
};

ChatRequest render_curriculum_prompt(const EnvironmentDefinition& env, const PromptOptions& opts);

ChatRequest render_task_code_prompt(const EnvironmentDefinition& env, const TaskSpec& task,
                                    const std::vector<HistoryItem>& history,
                                    const PromptOptions& opts);

ChatRequest render_evaluation_prompt(const TaskSpec& task, const std::vector<HistoryItem>& history,
                                     const std::string& summaries_block, int agent_count,
                                     const PromptOptions& opts);

// Scans for "Task <n>" headers followed by Name/Description/Reason fields;
// markdown emphasis around headers and values is tolerated and stripped.
Curriculum parse_curriculum(const std::string& text);

// First "Decision: Agent <n>" (optionally bracketed) plus the text following
// "Reason:". agent_count bounds the index.
Decision parse_decision(const std::string& text, int agent_count);

}  // namespace curricullm

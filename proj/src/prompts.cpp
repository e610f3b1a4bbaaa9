#include "curricullm/prompts.hpp"

#include <regex>
#include <sstream>

#include "curricullm/dsl.hpp"

namespace curricullm {

namespace {

std::string strip_emphasis(std::string s) {
    auto is_trim = [](char c) {
        return c == ' ' || c == '\t' || c == '\r' || c == '*' || c == '_' || c == '`';
    };
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_trim(s[b])) ++b;
    while (e > b && is_trim(s[e - 1])) --e;
    return s.substr(b, e - b);
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void require_task_fields(const TaskSpec& task) {
    if (task.name.empty()) throw MissingContextField("task name is empty");
    if (task.description.empty()) throw MissingContextField("task description is empty");
    if (task.reason.empty()) throw MissingContextField("task reason is empty");
}

std::string task_block(const TaskSpec& task) {
    std::ostringstream out;
    out << "Task Name: " << task.name << "\n";
    out << "Description: " << task.description << "\n";
    out << "Reason: " << task.reason << "\n";
    return out.str();
}

// History entries rendered most-recent-first and truncated oldest-first at
// the character budget.
std::string history_block(const std::vector<HistoryItem>& history, int char_budget,
                          bool include_code) {
    if (history.empty()) return {};
    std::vector<std::string> entries;
    std::size_t used = 0;
    for (auto it = history.rbegin(); it != history.rend(); ++it) {
        std::ostringstream entry;
        entry << task_block(it->task);
        if (include_code) {
            entry << "Code:\n" << it->code_source << "\n";
        }
        std::string text = entry.str();
        if (!entries.empty() && used + text.size() > static_cast<std::size_t>(char_budget)) break;
        used += text.size();
        entries.push_back(std::move(text));
    }
    std::ostringstream out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i) out << "\n";
        out << entries[i];
    }
    return out.str();
}

}  // namespace

ChatRequest render_curriculum_prompt(const EnvironmentDefinition& env, const PromptOptions& opts) {
    ChatRequest req;
    req.model = opts.model;
    req.temperature = opts.curriculum_temperature;

    std::string system =
        "You are a curriculum generator trying to generate a curriculum to solve reinforcement "
        "learning tasks as effectively as possible.\n"
        "Your goal is to write a list of tasks for the agent that will help the agent learn the "
        "main task in the environment described in the text.\n"
        "\n"
        "Some helpful tips for generating a curriculum:\n"
        "(1) Do not explore or learn dynamics by doing random actions. Each task should have a "
        "specific goal to achieve.\n"
        "(2) Curriculum should be made as short as possible. Be concise.\n"
        "(3) Never generate more than 5 tasks\n"
        "(4) The last task of your curriculum should align with the original task description\n"
        "(5) Each task should be described using the given state variables; do not introduce new "
        "variables.\n"
        "(6) Each task should state the goal distribution ranges to train on, within the allowed "
        "ranges.\n"
        "\n"
        "Your output should be\n"
        "Task 1\n"
        "Name: []\n"
        "Description: []\n"
        "Reason: []\n"
        "\n"
        "Task 2\n"
        "Name: []\n"
        "Description: []\n"
        "Reason: []\n"
        "\n"
        "Task n\n"
        "Name: Original task\n"
        "Description: []\n"
        "Reason: []\n"
        "\n"
        "Fill out the inside of brackets in the format.\n"
        "Remove the brackets after filling out them.\n";

    req.messages.push_back({Role::system, std::move(system)});
    req.messages.push_back({Role::user, env_description(env)});
    return req;
}

ChatRequest render_task_code_prompt(const EnvironmentDefinition& env, const TaskSpec& task,
                                    const std::vector<HistoryItem>& history,
                                    const PromptOptions& opts) {
    require_task_fields(task);
    ChatRequest req;
    req.model = opts.model;
    req.temperature = opts.task_code_temperature;

    std::ostringstream system;
    system
        << "You should write a reward program for the given task using the variables from the "
           "environment.\n"
           "Your reward program is part of curriculum learning consisting of a sequence of "
           "different tasks.\n"
           "You will be given descriptions of past tasks, reward programs for past tasks, and the "
           "current task description.\n"
           "\n"
        << dsl::grammar_card()
        << "\n"
           "The reward program must be formatted inside a ```reward fence.\n"
           "The goal distribution must be formatted inside a ```goal fence, one line per "
           "dimension: NAME: [lo, hi]\n"
           "\n"
           "Some helpful tips for writing the reward program:\n"
           "(1) Most importantly, you must only use the given variables.\n"
           "(2) You may normalize each reward argument.\n"
           "(3) You should use a weighting parameter outside of the transformation function.\n"
           "(4) You may put higher weight on the reward for the current task. However, you should "
           "also give reward for past tasks to avoid forgetting.\n"
           "(5) The goal ranges must stay within the allowed ranges from the environment "
           "description.\n";
    req.messages.push_back({Role::system, system.str()});

    std::ostringstream user;
    user << env_description(env) << "\n";
    user << "Generate a reward program and goal distribution for\n" << task_block(task);
    const std::string past = history_block(history, opts.history_char_budget, true);
    if (!past.empty()) {
        user << "\nPrevious learned tasks, most recent first:\n\n" << past;
    }
    req.messages.push_back({Role::user, user.str()});
    return req;
}

ChatRequest render_evaluation_prompt(const TaskSpec& task, const std::vector<HistoryItem>& history,
                                     const std::string& summaries_block, int agent_count,
                                     const PromptOptions& opts) {
    require_task_fields(task);
    if (agent_count < 1) throw MissingContextField("evaluation prompt needs at least one agent");
    if (summaries_block.empty()) throw MissingContextField("evaluation prompt needs summaries");
    ChatRequest req;
    req.model = opts.model;
    req.temperature = opts.evaluation_temperature;

    std::string system =
        "You are a robotics engineer trying to evaluate whether a robot trajectory is following "
        "the given task.\n"
        "You will be given a language description of a task, and trajectory statistics of "
        "robots.\n"
        "Based on the trajectory rollout information, choose the best agent for following the "
        "task description.\n"
        "\n"
        "Your task is part of curriculum learning consisting of a sequence of tasks.\n"
        "While you should focus on evaluating the agent based on the current task, also consider "
        "their performance on previous tasks.\n"
        "Episodes terminate when the goal is reached, so shorter episodes with a high success "
        "rate are good. Select the agent whose statistics best align with the task description "
        "and success.\n"
        "\n"
        "Follow the output format.\n"
        "\n"
        "Decision: Agent [number]\n"
        "Reason: \n";
    req.messages.push_back({Role::system, std::move(system)});

    std::ostringstream user;
    user << "Find the best agent for following task description in below\n\n" << task_block(task);
    const std::string past = history_block(history, opts.history_char_budget, false);
    if (!past.empty()) {
        user << "\nPrevious tasks in curriculum are\n\n" << past;
    }
    user << "\n" << summaries_block;
    req.messages.push_back({Role::user, user.str()});
    return req;
}

Curriculum parse_curriculum(const std::string& text) {
    static const std::regex header_re(R"(^\s*(?:#+\s*)?[*_`]*Task\s+(\d+)\b.*$)",
                                      std::regex::icase);
    static const std::regex field_re(
        R"(^\s*(?:[-*]\s+)?[*_`]*(Name|Description|Reason)[*_`]*\s*:\s*(.*)$)");

    Curriculum curriculum;
    std::istringstream lines(text);
    std::string line;
    TaskSpec current;
    bool in_task = false;
    std::string* active_field = nullptr;

    auto flush = [&]() {
        if (!in_task) return;
        if (current.name.empty()) {
            throw PromptParseError(ParseErrorKind::MissingField,
                                   "task " + std::to_string(current.index) + " is missing Name");
        }
        if (current.description.empty()) {
            throw PromptParseError(ParseErrorKind::MissingField, "task " +
                                       std::to_string(current.index) + " is missing Description");
        }
        if (current.reason.empty()) {
            throw PromptParseError(ParseErrorKind::MissingField,
                                   "task " + std::to_string(current.index) + " is missing Reason");
        }
        curriculum.tasks.push_back(current);
    };

    while (std::getline(lines, line)) {
        std::smatch m;
        if (std::regex_match(line, m, header_re)) {
            flush();
            current = TaskSpec{};
            current.index = std::stoi(m[1]);
            in_task = true;
            active_field = nullptr;
            continue;
        }
        if (!in_task) continue;
        if (std::regex_match(line, m, field_re)) {
            const std::string field = m[1];
            const std::string value = strip_emphasis(m[2]);
            if (field == "Name") active_field = &current.name;
            else if (field == "Description") active_field = &current.description;
            else active_field = &current.reason;
            *active_field = value;
            continue;
        }
        const std::string continuation = trim(line);
        if (active_field != nullptr && !continuation.empty()) {
            if (!active_field->empty()) *active_field += ' ';
            *active_field += strip_emphasis(continuation);
        }
    }
    flush();

    if (curriculum.tasks.empty()) {
        throw PromptParseError(ParseErrorKind::NoTasksFound, "no Task blocks found in response");
    }
    return curriculum;
}

Decision parse_decision(const std::string& text, int agent_count) {
    static const std::regex decision_re(
        R"(Decision\s*:?\s*[*_`]*\s*Agent\s*\[?\s*(\d+)\s*\]?)", std::regex::icase);
    std::smatch m;
    if (!std::regex_search(text, m, decision_re)) {
        throw PromptParseError(ParseErrorKind::NoDecisionFound, "no 'Decision: Agent n' in response");
    }
    Decision decision;
    decision.agent_index = std::stoi(m[1]);
    if (decision.agent_index < 0 || decision.agent_index >= agent_count) {
        throw PromptParseError(ParseErrorKind::IndexOutOfRange,
                               "agent index " + std::to_string(decision.agent_index) +
                                   " out of range for " + std::to_string(agent_count) +
                                   " agents");
    }
    static const std::regex reason_re(R"(Reason\s*:\s*([\s\S]*))");
    std::smatch rm;
    if (std::regex_search(text, rm, reason_re)) {
        decision.reason = trim(rm[1]);
    }
    return decision;
}

}  // namespace curricullm

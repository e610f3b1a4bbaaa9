#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "curricullm/env.hpp"
#include "curricullm/errors.hpp"

namespace curricullm::dsl {

enum class ErrorKind {
    MissingFence,
    SyntaxError,
    EmptyProgram,
    UnknownVariable,
    BadIndex,
    BadReduction,
    ScalarIndexed,
    VectorNotReduced,
    DuplicateBinding,
    UnknownDimension,
    RangeOutOfBounds,
    InvertedRange,
    DivisionByNearZero,
    NonFiniteResult,
};

const char* error_kind_name(ErrorKind kind);

struct DslError : Error {
    ErrorKind kind;
    int line = 0;    // 1-based; 0 when not location-bound
    int column = 0;
    DslError(ErrorKind k, const std::string& message, int line_ = 0, int column_ = 0);
};

enum class ExprKind { number, varref, negate, binary, call };
enum class BinOp { add, sub, mul, div };
enum class Fn { abs, sq, sqrt, exp, tanh, min, max, clip, norm, sum, sum_sq, mean };

struct Expr;
using ExprPtr = std::unique_ptr<Expr>;

struct Expr {
    ExprKind kind;
    double number = 0.0;            // ExprKind::number
    std::string name;               // ExprKind::varref
    std::optional<int> index;       // varref component index
    BinOp op = BinOp::add;          // ExprKind::binary
    Fn fn = Fn::abs;                // ExprKind::call
    std::vector<ExprPtr> args;      // negate: 1, binary: 2, call: arity
    int line = 0;
    int column = 0;
};

struct RewardProgram {
    std::vector<std::pair<std::string, ExprPtr>> bindings;
    ExprPtr result;
    std::string source;
};

// Parses a bare reward program (the contents of a ```reward fence).
RewardProgram parse_program(const std::string& source);

// Extracted fenced blocks of one LLM task-code response.
struct TaskCodeText {
    RewardProgram program;
    std::vector<std::string> goal_lines;  // raw lines of the ```goal fence
    std::string raw;                      // full response text
};

// Pulls the first ```reward and first ```goal fenced blocks out of free text
// and parses the reward program. Throws DslError (MissingFence, SyntaxError,
// EmptyProgram).
TaskCodeText parse_task_code(const std::string& text);

// Goal-spec block: one `NAME: [lo, hi]` line per dimension.
GoalDistributionSpec parse_goal_lines(const std::vector<std::string>& lines);

// Validates parsed goal lines against the environment's goal dimensions.
// Throws DslError (UnknownDimension, RangeOutOfBounds, InvertedRange).
GoalDistributionSpec validate_goal_spec(const std::vector<std::string>& lines,
                                        const EnvironmentDefinition& env);

// A reward program with every reference resolved against an environment
// registry and flattened to a small stack machine. Variables read from the
// transition's next observation; `action` reads from the applied action.
class TypedProgram {
public:
    // Features are the flattened normalized observation followed by the action.
    double evaluate(const std::vector<double>& features) const;
    double evaluate_reward(const EnvironmentDefinition& env, const Transition& t) const;

    const RewardProgram& program() const { return program_; }
    const std::string& env_id() const { return env_id_; }

private:
    friend TypedProgram typecheck(RewardProgram program, const EnvironmentDefinition& env);

    enum class OpCode {
        push_const,
        push_slot,
        push_local,
        store_local,
        add,
        sub,
        mul,
        div,
        negate,
        abs,
        sq,
        sqrt,
        exp,
        tanh,
        min,
        max,
        clip,
        reduce_norm,
        reduce_sum,
        reduce_sum_sq,
        reduce_mean,
    };
    struct Instr {
        OpCode op;
        double imm = 0.0;
        int a = 0;  // slot / local index / reduction offset
        int b = 0;  // reduction length
    };

    RewardProgram program_;
    std::string env_id_;
    std::vector<Instr> code_;
    int local_count_ = 0;
    int max_stack_ = 0;
};

// Resolves every reference in the program against the environment registry
// plus `action`. Throws DslError (UnknownVariable, BadIndex, BadReduction,
// ScalarIndexed, VectorNotReduced, DuplicateBinding).
TypedProgram typecheck(RewardProgram program, const EnvironmentDefinition& env);

// Canonical source form; parse(pretty_print(parse(s))) is structurally
// identical to parse(s).
std::string pretty_print(const RewardProgram& program);

bool structurally_equal(const Expr& a, const Expr& b);
bool structurally_equal(const RewardProgram& a, const RewardProgram& b);

// Fully validated task code for one environment: (reward, goal distribution).
struct TaskCode {
    TypedProgram program;
    GoalDistributionSpec goal_spec;
    std::string raw;
};

// parse + typecheck + goal-spec validation in one step.
TaskCode compile_task_code(const std::string& text, const EnvironmentDefinition& env);

// One-line grammar reference card injected into the task-code prompt.
std::string grammar_card();

}  // namespace curricullm::dsl

#include <doctest/doctest.h>

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "curricullm/dsl.hpp"
#include "curricullm/env.hpp"
#include "curricullm/rng.hpp"

using namespace curricullm;
using dsl::DslError;
using dsl::ErrorKind;
using dsl::Expr;
using dsl::ExprKind;

namespace {

// Direct tree-walking evaluator, written against the language definition and
// sharing no code with the compiled stack machine under test.
struct OracleEnv {
    std::map<std::string, std::vector<double>> vars;
    std::map<std::string, double> locals;
};

double oracle_eval(const Expr& e, const OracleEnv& env);

double oracle_scalar_var(const Expr& e, const OracleEnv& env) {
    auto local = env.locals.find(e.name);
    if (local != env.locals.end()) return local->second;
    const auto& values = env.vars.at(e.name);
    if (e.index) return values.at(static_cast<std::size_t>(*e.index));
    REQUIRE(values.size() == 1);
    return values[0];
}

double oracle_reduce(dsl::Fn fn, const std::vector<double>& v) {
    double sum = 0.0, sum_sq = 0.0;
    for (double x : v) {
        sum += x;
        sum_sq += x * x;
    }
    switch (fn) {
        case dsl::Fn::norm: return std::sqrt(sum_sq);
        case dsl::Fn::sum: return sum;
        case dsl::Fn::sum_sq: return sum_sq;
        case dsl::Fn::mean: return sum / static_cast<double>(v.size());
        default: REQUIRE(false);
    }
    return 0.0;
}

double oracle_eval(const Expr& e, const OracleEnv& env) {
    switch (e.kind) {
        case ExprKind::number:
            return e.number;
        case ExprKind::varref:
            return oracle_scalar_var(e, env);
        case ExprKind::negate:
            return -oracle_eval(*e.args[0], env);
        case ExprKind::binary: {
            const double a = oracle_eval(*e.args[0], env);
            const double b = oracle_eval(*e.args[1], env);
            switch (e.op) {
                case dsl::BinOp::add: return a + b;
                case dsl::BinOp::sub: return a - b;
                case dsl::BinOp::mul: return a * b;
                case dsl::BinOp::div:
                    if (std::fabs(b) < 1e-9) {
                        throw DslError(ErrorKind::DivisionByNearZero, "oracle division guard");
                    }
                    return a / b;
            }
            return 0.0;
        }
        case ExprKind::call: {
            switch (e.fn) {
                case dsl::Fn::abs: return std::fabs(oracle_eval(*e.args[0], env));
                case dsl::Fn::sq: {
                    const double x = oracle_eval(*e.args[0], env);
                    return x * x;
                }
                case dsl::Fn::sqrt:
                    // negative inputs clamp to zero instead of producing NaN
                    return std::sqrt(std::max(oracle_eval(*e.args[0], env), 0.0));
                case dsl::Fn::exp: return std::exp(oracle_eval(*e.args[0], env));
                case dsl::Fn::tanh: return std::tanh(oracle_eval(*e.args[0], env));
                case dsl::Fn::min:
                    return std::min(oracle_eval(*e.args[0], env), oracle_eval(*e.args[1], env));
                case dsl::Fn::max:
                    return std::max(oracle_eval(*e.args[0], env), oracle_eval(*e.args[1], env));
                case dsl::Fn::clip: {
                    const double x = oracle_eval(*e.args[0], env);
                    const double lo = oracle_eval(*e.args[1], env);
                    const double hi = oracle_eval(*e.args[2], env);
                    return std::min(std::max(x, lo), hi);
                }
                case dsl::Fn::norm:
                case dsl::Fn::sum:
                case dsl::Fn::sum_sq:
                case dsl::Fn::mean:
                    return oracle_reduce(e.fn, env.vars.at(e.args[0]->name));
            }
            return 0.0;
        }
    }
    return 0.0;
}

double oracle_run(const dsl::RewardProgram& program, OracleEnv env) {
    for (const auto& [name, expr] : program.bindings) {
        env.locals[name] = oracle_eval(*expr, env);
    }
    const double result = oracle_eval(*program.result, env);
    if (!std::isfinite(result)) {
        throw DslError(ErrorKind::NonFiniteResult, "oracle finiteness guard");
    }
    return result;
}

// Random but always-valid program source for point_maze.
struct ProgramGen {
    Rng rng;
    std::vector<std::string> locals;
    explicit ProgramGen(std::uint64_t seed) : rng(seed) {}

    std::string number() {
        // limited precision keeps printing exact
        const double v = std::round(rng.uniform(-40, 40)) / 8.0;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", v);
        return buf;
    }

    std::string vector_var() {
        static const char* names[] = {"agent_pos", "agent_vel", "goal_pos", "goal_direction",
                                      "action"};
        return names[rng.uniform_index(5)];
    }

    std::string leaf() {
        switch (rng.uniform_index(locals.empty() ? 4 : 5)) {
            case 0: return number();
            case 1: return rng.uniform() < 0.5 ? "dist_to_goal" : "is_alive";
            case 2: return vector_var() + "[" + std::to_string(rng.uniform_index(2)) + "]";
            case 3: {
                static const char* reductions[] = {"norm", "sum", "sum_sq", "mean"};
                return std::string(reductions[rng.uniform_index(4)]) + "(" + vector_var() + ")";
            }
            default: return locals[rng.uniform_index(locals.size())];
        }
    }

    std::string expr(int depth) {
        if (depth <= 0) return leaf();
        switch (rng.uniform_index(8)) {
            case 0: return leaf();
            case 1: return "-" + expr(depth - 1);
            case 2:
            case 3: {
                static const char* ops[] = {"+", "-", "*", "/"};
                return "(" + expr(depth - 1) + " " + ops[rng.uniform_index(4)] + " " +
                       expr(depth - 1) + ")";
            }
            case 4: {
                static const char* fns[] = {"abs", "sq", "sqrt", "exp", "tanh"};
                return std::string(fns[rng.uniform_index(5)]) + "(" + expr(depth - 1) + ")";
            }
            case 5:
                return std::string(rng.uniform() < 0.5 ? "min" : "max") + "(" + expr(depth - 1) +
                       ", " + expr(depth - 1) + ")";
            case 6:
                return "clip(" + expr(depth - 1) + ", " + number() + ", " + number() + ")";
            default:
                return leaf();
        }
    }

    std::string program() {
        locals.clear();
        std::string out;
        const int n_bindings = static_cast<int>(rng.uniform_index(3));
        for (int i = 0; i < n_bindings; ++i) {
            const std::string name = "v" + std::to_string(i);
            out += name + " = " + expr(2) + "\n";
            locals.push_back(name);
        }
        out += "return " + expr(3) + "\n";
        return out;
    }
};

OracleEnv maze_oracle_env(const std::vector<double>& features) {
    OracleEnv env;
    env.vars = {{"agent_pos", {features[0], features[1]}},
                {"agent_vel", {features[2], features[3]}},
                {"goal_pos", {features[4], features[5]}},
                {"dist_to_goal", {features[6]}},
                {"goal_direction", {features[7], features[8]}},
                {"is_alive", {features[9]}},
                {"action", {features[10], features[11]}}};
    return env;
}

ErrorKind typecheck_error(const std::string& source, const EnvironmentDefinition& env) {
    try {
        dsl::typecheck(dsl::parse_program(source), env);
    } catch (const DslError& e) {
        return e.kind;
    }
    REQUIRE(false);
    return ErrorKind::SyntaxError;
}

}  // namespace

TEST_CASE("parser basics and source locations") {
    const auto p = dsl::parse_program("w = 0.5\nreturn w * dist_to_goal + 1");
    CHECK(p.bindings.size() == 1);
    CHECK(p.bindings[0].first == "w");
    CHECK(p.result->kind == ExprKind::binary);

    try {
        dsl::parse_program("return 1 +\n  * 2");
        REQUIRE(false);
    } catch (const DslError& e) {
        CHECK(e.kind == ErrorKind::SyntaxError);
        CHECK(e.line == 2);
        CHECK(e.column == 3);
    }

    CHECK_THROWS_AS(dsl::parse_program(""), DslError);
    CHECK_THROWS_AS(dsl::parse_program("w = 1\n"), DslError);  // no return
    CHECK_THROWS_AS(dsl::parse_program("return min(1)"), DslError);
    CHECK_THROWS_AS(dsl::parse_program("return clip(1, 2)"), DslError);
    CHECK_THROWS_AS(dsl::parse_program("return agent_pos[x]"), DslError);
}

TEST_CASE("typecheck rejects each class of bad reference") {
    const auto env = Environment::definition("point_maze");
    CHECK(typecheck_error("return no_such_var", env) == ErrorKind::UnknownVariable);
    CHECK(typecheck_error("return agent_pos[2]", env) == ErrorKind::BadIndex);
    CHECK(typecheck_error("return dist_to_goal[0]", env) == ErrorKind::ScalarIndexed);
    CHECK(typecheck_error("return agent_pos", env) == ErrorKind::VectorNotReduced);
    CHECK(typecheck_error("return sum(dist_to_goal)", env) == ErrorKind::BadReduction);
    CHECK(typecheck_error("return sum(agent_pos + 1)", env) == ErrorKind::BadReduction);
    CHECK(typecheck_error("w = 1\nw = 2\nreturn w", env) == ErrorKind::DuplicateBinding);
    CHECK_NOTHROW(dsl::typecheck(
        dsl::parse_program("return norm(goal_direction) - sum_sq(action)"), env));
}

TEST_CASE("runtime guards: near-zero division and non-finite results") {
    const auto env = Environment::definition("point_maze");
    const std::vector<double> features(12, 0.25);

    auto prog = dsl::typecheck(dsl::parse_program("return 1 / (is_alive - is_alive)"), env);
    CHECK_THROWS_AS(prog.evaluate(features), DslError);
    try {
        prog.evaluate(features);
    } catch (const DslError& e) {
        CHECK(e.kind == ErrorKind::DivisionByNearZero);
    }

    auto inf = dsl::typecheck(dsl::parse_program("return exp(exp(exp(dist_to_goal + 2)))"), env);
    try {
        inf.evaluate(features);
        REQUIRE(false);
    } catch (const DslError& e) {
        CHECK(e.kind == ErrorKind::NonFiniteResult);
    }

    auto clamped = dsl::typecheck(dsl::parse_program("return sqrt(0 - 1 - is_alive)"), env);
    CHECK(clamped.evaluate(features) == doctest::Approx(0.0));
}

TEST_CASE("compiled evaluation matches the tree-walking oracle on random programs") {
    const auto env = Environment::definition("point_maze");
    ProgramGen gen(42);
    Rng rng(43);
    int compared = 0;
    int trials = 0;
    while (compared < 10000 && trials < 40000) {
        ++trials;
        const std::string source = gen.program();
        dsl::TypedProgram prog = dsl::typecheck(dsl::parse_program(source), env);
        std::vector<double> features(12);
        for (auto& f : features) f = rng.uniform(-1, 1);
        const OracleEnv oenv = maze_oracle_env(features);

        bool oracle_threw = false;
        ErrorKind oracle_kind = ErrorKind::SyntaxError;
        double expected = 0.0;
        try {
            expected = oracle_run(prog.program(), oenv);
        } catch (const DslError& e) {
            oracle_threw = true;
            oracle_kind = e.kind;
        }
        try {
            const double got = prog.evaluate(features);
            REQUIRE_FALSE(oracle_threw);
            const double tol = 1e-9 * std::max(1.0, std::fabs(expected));
            REQUIRE(std::fabs(got - expected) <= tol);
        } catch (const DslError& e) {
            REQUIRE(oracle_threw);
            REQUIRE(e.kind == oracle_kind);
        }
        ++compared;
    }
    CHECK(compared == 10000);
}

TEST_CASE("evaluate_reward reads the next observation plus the action") {
    const auto def = Environment::definition("point_maze");
    Environment env(def);
    GoalDistributionSpec spec;
    spec.ranges = {{"goal_distance", {6, 6}}};
    env.reset(spec, 9);
    const Transition t = env.step({0.5, -0.25});

    auto prog = dsl::typecheck(
        dsl::parse_program("return dist_to_goal + 2 * action[0] + agent_pos[1]"), def);
    const double got = prog.evaluate_reward(def, t);
    const double expected = t.next_observation.values.at("dist_to_goal")[0] +
                            2 * t.action[0] + t.next_observation.values.at("agent_pos")[1];
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("pretty-print round-trips structurally") {
    ProgramGen gen(77);
    for (int i = 0; i < 1000; ++i) {
        const auto p1 = dsl::parse_program(gen.program());
        const std::string printed = dsl::pretty_print(p1);
        const auto p2 = dsl::parse_program(printed);
        CHECK(dsl::structurally_equal(p1, p2));
        CHECK(dsl::pretty_print(p2) == printed);
    }
}

TEST_CASE("parser is total over random byte soup") {
    Rng rng(99);
    const std::string alphabet =
        "abcxyz_0123456789 +-*/()[],.=\nreturn clip min agent_pos";
    for (int i = 0; i < 10000; ++i) {
        std::string s;
        const int len = static_cast<int>(rng.uniform_index(60));
        for (int j = 0; j < len; ++j) s += alphabet[rng.uniform_index(alphabet.size())];
        try {
            dsl::parse_program(s);
        } catch (const DslError&) {
            // rejection with a typed error is the expected outcome
        }
    }
}

TEST_CASE("positive scaling of the returned expression scales the value") {
    const auto env = Environment::definition("point_maze");
    auto base = dsl::typecheck(
        dsl::parse_program("return dist_to_goal - sum_sq(action)"), env);
    auto scaled = dsl::typecheck(
        dsl::parse_program("return 2.5 * (dist_to_goal - sum_sq(action))"), env);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> features(12);
        for (auto& f : features) f = rng.uniform(-1, 1);
        CHECK(scaled.evaluate(features) ==
              doctest::Approx(2.5 * base.evaluate(features)).epsilon(1e-12));
    }
}

TEST_CASE("fenced task-code extraction and goal validation") {
    const auto env = Environment::definition("point_maze");
    const std::string good =
        "Here is a reward.\n\n```reward\nreturn 0 - dist_to_goal\n```\n\n"
        "```goal\ngoal_distance: [0, 3]\n```\n";
    const dsl::TaskCode code = dsl::compile_task_code(good, env);
    CHECK(code.goal_spec.ranges.at("goal_distance").second == doctest::Approx(3.0));
    CHECK(code.raw == good);

    try {
        dsl::compile_task_code("no fences here", env);
        REQUIRE(false);
    } catch (const DslError& e) {
        CHECK(e.kind == ErrorKind::MissingFence);
    }

    auto with_goal = [&](const std::string& goal_line) {
        return "```reward\nreturn 0 - dist_to_goal\n```\n```goal\n" + goal_line + "\n```\n";
    };
    try {
        dsl::compile_task_code(with_goal("goal_radius: [0, 1]"), env);
        REQUIRE(false);
    } catch (const DslError& e) {
        CHECK(e.kind == ErrorKind::UnknownDimension);
    }
    try {
        dsl::compile_task_code(with_goal("goal_distance: [0, 9]"), env);
        REQUIRE(false);
    } catch (const DslError& e) {
        CHECK(e.kind == ErrorKind::RangeOutOfBounds);
    }
    try {
        dsl::compile_task_code(with_goal("goal_distance: [4, 1]"), env);
        REQUIRE(false);
    } catch (const DslError& e) {
        CHECK(e.kind == ErrorKind::InvertedRange);
    }
}

TEST_CASE("grammar card names every function") {
    const std::string card = dsl::grammar_card();
    for (const char* fn : {"abs", "sq", "sqrt", "exp", "tanh", "min", "max", "clip", "norm",
                           "sum", "sum_sq", "mean"}) {
        CHECK(card.find(fn) != std::string::npos);
    }
    CHECK(card.find("return") != std::string::npos);
}

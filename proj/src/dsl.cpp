#include "curricullm/dsl.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

namespace curricullm::dsl {

namespace {

constexpr double kDivisionGuard = 1e-9;

struct FnInfo {
    Fn fn;
    int arity;
    bool reduction;
};

const std::map<std::string, FnInfo, std::less<>>& fn_table() {
    static const std::map<std::string, FnInfo, std::less<>> table = {
        {"abs", {Fn::abs, 1, false}},     {"sq", {Fn::sq, 1, false}},
        {"sqrt", {Fn::sqrt, 1, false}},   {"exp", {Fn::exp, 1, false}},
        {"tanh", {Fn::tanh, 1, false}},   {"min", {Fn::min, 2, false}},
        {"max", {Fn::max, 2, false}},     {"clip", {Fn::clip, 3, false}},
        {"norm", {Fn::norm, 1, true}},    {"sum", {Fn::sum, 1, true}},
        {"sum_sq", {Fn::sum_sq, 1, true}}, {"mean", {Fn::mean, 1, true}},
    };
    return table;
}

const char* fn_name(Fn fn) {
    switch (fn) {
        case Fn::abs: return "abs";
        case Fn::sq: return "sq";
        case Fn::sqrt: return "sqrt";
        case Fn::exp: return "exp";
        case Fn::tanh: return "tanh";
        case Fn::min: return "min";
        case Fn::max: return "max";
        case Fn::clip: return "clip";
        case Fn::norm: return "norm";
        case Fn::sum: return "sum";
        case Fn::sum_sq: return "sum_sq";
        case Fn::mean: return "mean";
    }
    return "?";
}

enum class TokKind { ident, number, kw_return, sym, end };

struct Token {
    TokKind kind;
    std::string text;
    double value = 0.0;
    char sym = 0;
    int line = 1;
    int column = 1;
};

class Lexer {
public:
    explicit Lexer(const std::string& src) : src_(src) { advance(); }

    const Token& peek() const { return current_; }

    Token take() {
        Token t = current_;
        advance();
        return t;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw DslError(ErrorKind::SyntaxError, msg, line_, col_);
    }

    void advance() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) {
            if (src_[pos_] == '\n') {
                ++line_;
                col_ = 1;
            } else {
                ++col_;
            }
            ++pos_;
        }
        current_.line = line_;
        current_.column = col_;
        if (pos_ >= src_.size()) {
            current_.kind = TokKind::end;
            return;
        }
        const char c = src_[pos_];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
                ++pos_;
                ++col_;
            }
            current_.text = src_.substr(start, pos_ - start);
            current_.kind = current_.text == "return" ? TokKind::kw_return : TokKind::ident;
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && pos_ + 1 < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
            std::size_t start = pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance_char();
            if (pos_ < src_.size() && src_[pos_] == '.') {
                advance_char();
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance_char();
            }
            if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
                std::size_t mark = pos_;
                advance_char();
                if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance_char();
                if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance_char();
                } else {
                    pos_ = mark;  // 'e' begins an identifier, not an exponent
                }
            }
            current_.text = src_.substr(start, pos_ - start);
            current_.kind = TokKind::number;
            current_.value = std::strtod(current_.text.c_str(), nullptr);
            return;
        }
        if (std::string("+-*/()[],=").find(c) != std::string::npos) {
            current_.kind = TokKind::sym;
            current_.sym = c;
            ++pos_;
            ++col_;
            return;
        }
        fail(std::string("unexpected character '") + c + "'");
    }

    void advance_char() {
        ++pos_;
        ++col_;
    }

    const std::string& src_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
    Token current_;
};

class Parser {
public:
    explicit Parser(const std::string& src) : lex_(src) {}

    RewardProgram parse() {
        RewardProgram prog;
        if (lex_.peek().kind == TokKind::end) {
            throw DslError(ErrorKind::EmptyProgram, "reward program is empty");
        }
        for (;;) {
            const Token& t = lex_.peek();
            if (t.kind == TokKind::kw_return) {
                lex_.take();
                prog.result = parse_expr();
                const Token& rest = lex_.peek();
                if (rest.kind != TokKind::end) {
                    fail(rest, "unexpected input after the return expression");
                }
                return prog;
            }
            if (t.kind != TokKind::ident) {
                fail(t, "expected a binding or 'return'");
            }
            Token name = lex_.take();
            expect_sym('=');
            prog.bindings.emplace_back(name.text, parse_expr());
        }
    }

private:
    [[noreturn]] void fail(const Token& t, const std::string& msg) {
        throw DslError(ErrorKind::SyntaxError, msg, t.line, t.column);
    }

    bool at_sym(char c) {
        const Token& t = lex_.peek();
        return t.kind == TokKind::sym && t.sym == c;
    }

    Token expect_sym(char c) {
        const Token& t = lex_.peek();
        if (t.kind != TokKind::sym || t.sym != c) {
            fail(t, std::string("expected '") + c + "'");
        }
        return lex_.take();
    }

    ExprPtr make(ExprKind kind, const Token& at) {
        auto e = std::make_unique<Expr>();
        e->kind = kind;
        e->line = at.line;
        e->column = at.column;
        return e;
    }

    ExprPtr parse_expr() {
        ExprPtr left = parse_term();
        while (at_sym('+') || at_sym('-')) {
            Token op = lex_.take();
            auto node = make(ExprKind::binary, op);
            node->op = op.sym == '+' ? BinOp::add : BinOp::sub;
            node->args.push_back(std::move(left));
            node->args.push_back(parse_term());
            left = std::move(node);
        }
        return left;
    }

    ExprPtr parse_term() {
        ExprPtr left = parse_unary();
        while (at_sym('*') || at_sym('/')) {
            Token op = lex_.take();
            auto node = make(ExprKind::binary, op);
            node->op = op.sym == '*' ? BinOp::mul : BinOp::div;
            node->args.push_back(std::move(left));
            node->args.push_back(parse_unary());
            left = std::move(node);
        }
        return left;
    }

    ExprPtr parse_unary() {
        if (at_sym('-')) {
            Token op = lex_.take();
            auto node = make(ExprKind::negate, op);
            node->args.push_back(parse_unary());
            return node;
        }
        return parse_atom();
    }

    ExprPtr parse_atom() {
        const Token& t = lex_.peek();
        if (t.kind == TokKind::number) {
            Token num = lex_.take();
            auto node = make(ExprKind::number, num);
            node->number = num.value;
            return node;
        }
        if (t.kind == TokKind::sym && t.sym == '(') {
            lex_.take();
            ExprPtr inner = parse_expr();
            expect_sym(')');
            return inner;
        }
        if (t.kind == TokKind::ident) {
            Token name = lex_.take();
            if (at_sym('(')) {
                auto it = fn_table().find(name.text);
                if (it == fn_table().end()) {
                    fail(name, "unknown function '" + name.text + "'");
                }
                lex_.take();
                auto node = make(ExprKind::call, name);
                node->fn = it->second.fn;
                node->args.push_back(parse_expr());
                while (at_sym(',')) {
                    lex_.take();
                    node->args.push_back(parse_expr());
                }
                expect_sym(')');
                if (static_cast<int>(node->args.size()) != it->second.arity) {
                    fail(name, "'" + name.text + "' expects " + std::to_string(it->second.arity) +
                                   " argument(s), got " + std::to_string(node->args.size()));
                }
                return node;
            }
            auto node = make(ExprKind::varref, name);
            node->name = name.text;
            if (at_sym('[')) {
                lex_.take();
                const Token& idx = lex_.peek();
                if (idx.kind != TokKind::number || idx.value != std::floor(idx.value) ||
                    idx.text.find('.') != std::string::npos) {
                    fail(idx, "expected an integer index");
                }
                node->index = static_cast<int>(lex_.take().value);
                expect_sym(']');
            }
            return node;
        }
        fail(t, "expected a number, variable, function call, or '('");
    }

    Lexer lex_;
};

std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

int precedence(const Expr& e) {
    switch (e.kind) {
        case ExprKind::binary:
            return (e.op == BinOp::add || e.op == BinOp::sub) ? 1 : 2;
        case ExprKind::negate:
            return 3;
        default:
            return 4;
    }
}

void print_expr(const Expr& e, std::ostringstream& out) {
    switch (e.kind) {
        case ExprKind::number:
            out << format_number(e.number);
            return;
        case ExprKind::varref:
            out << e.name;
            if (e.index) out << '[' << *e.index << ']';
            return;
        case ExprKind::negate: {
            out << '-';
            const bool parens = precedence(*e.args[0]) < 3;
            if (parens) out << '(';
            print_expr(*e.args[0], out);
            if (parens) out << ')';
            return;
        }
        case ExprKind::binary: {
            const int prec = precedence(e);
            const Expr& lhs = *e.args[0];
            const Expr& rhs = *e.args[1];
            const bool lp = precedence(lhs) < prec;
            // parenthesize the right side at equal precedence to preserve the
            // left-associative tree structure
            const bool rp = precedence(rhs) <= prec;
            if (lp) out << '(';
            print_expr(lhs, out);
            if (lp) out << ')';
            switch (e.op) {
                case BinOp::add: out << " + "; break;
                case BinOp::sub: out << " - "; break;
                case BinOp::mul: out << " * "; break;
                case BinOp::div: out << " / "; break;
            }
            if (rp) out << '(';
            print_expr(rhs, out);
            if (rp) out << ')';
            return;
        }
        case ExprKind::call: {
            out << fn_name(e.fn) << '(';
            for (std::size_t i = 0; i < e.args.size(); ++i) {
                if (i) out << ", ";
                print_expr(*e.args[i], out);
            }
            out << ')';
            return;
        }
    }
}

std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string extract_fence(const std::string& text, const std::string& tag) {
    const std::string open = "```" + tag;
    std::size_t pos = text.find(open);
    if (pos == std::string::npos) {
        throw DslError(ErrorKind::MissingFence, "missing ```" + tag + " fence");
    }
    std::size_t body = text.find('\n', pos + open.size());
    if (body == std::string::npos) {
        throw DslError(ErrorKind::MissingFence, "unterminated ```" + tag + " fence");
    }
    ++body;
    std::size_t close = text.find("```", body);
    if (close == std::string::npos) {
        throw DslError(ErrorKind::MissingFence, "unterminated ```" + tag + " fence");
    }
    return text.substr(body, close - body);
}

}  // namespace

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MissingFence: return "MissingFence";
        case ErrorKind::SyntaxError: return "SyntaxError";
        case ErrorKind::EmptyProgram: return "EmptyProgram";
        case ErrorKind::UnknownVariable: return "UnknownVariable";
        case ErrorKind::BadIndex: return "BadIndex";
        case ErrorKind::BadReduction: return "BadReduction";
        case ErrorKind::ScalarIndexed: return "ScalarIndexed";
        case ErrorKind::VectorNotReduced: return "VectorNotReduced";
        case ErrorKind::DuplicateBinding: return "DuplicateBinding";
        case ErrorKind::UnknownDimension: return "UnknownDimension";
        case ErrorKind::RangeOutOfBounds: return "RangeOutOfBounds";
        case ErrorKind::InvertedRange: return "InvertedRange";
        case ErrorKind::DivisionByNearZero: return "DivisionByNearZero";
        case ErrorKind::NonFiniteResult: return "NonFiniteResult";
    }
    return "?";
}

DslError::DslError(ErrorKind k, const std::string& message, int line_, int column_)
    : Error(line_ > 0 ? std::string(error_kind_name(k)) + " at line " + std::to_string(line_) +
                            ", column " + std::to_string(column_) + ": " + message
                      : std::string(error_kind_name(k)) + ": " + message),
      kind(k),
      line(line_),
      column(column_) {}

RewardProgram parse_program(const std::string& source) {
    Parser parser(source);
    RewardProgram prog = parser.parse();
    prog.source = source;
    return prog;
}

TaskCodeText parse_task_code(const std::string& text) {
    TaskCodeText out;
    out.raw = text;
    const std::string reward_src = extract_fence(text, "reward");
    const std::string goal_src = extract_fence(text, "goal");
    out.program = parse_program(reward_src);
    std::istringstream lines(goal_src);
    std::string line;
    while (std::getline(lines, line)) {
        line = strip(line);
        if (!line.empty()) out.goal_lines.push_back(line);
    }
    return out;
}

GoalDistributionSpec parse_goal_lines(const std::vector<std::string>& lines) {
    GoalDistributionSpec spec;
    for (const auto& raw_line : lines) {
        const std::string line = strip(raw_line);
        std::size_t colon = line.find(':');
        if (colon == std::string::npos) {
            throw DslError(ErrorKind::SyntaxError, "goal line '" + line + "' is not NAME: [lo, hi]");
        }
        const std::string name = strip(line.substr(0, colon));
        std::string rest = strip(line.substr(colon + 1));
        if (name.empty() || rest.size() < 2 || rest.front() != '[' || rest.back() != ']') {
            throw DslError(ErrorKind::SyntaxError, "goal line '" + line + "' is not NAME: [lo, hi]");
        }
        rest = rest.substr(1, rest.size() - 2);
        std::size_t comma = rest.find(',');
        if (comma == std::string::npos) {
            throw DslError(ErrorKind::SyntaxError, "goal line '" + line + "' is not NAME: [lo, hi]");
        }
        char* end = nullptr;
        const std::string lo_s = strip(rest.substr(0, comma));
        const std::string hi_s = strip(rest.substr(comma + 1));
        const double lo = std::strtod(lo_s.c_str(), &end);
        if (end == lo_s.c_str() || *end != '\0') {
            throw DslError(ErrorKind::SyntaxError, "bad number '" + lo_s + "' in goal line");
        }
        const double hi = std::strtod(hi_s.c_str(), &end);
        if (end == hi_s.c_str() || *end != '\0') {
            throw DslError(ErrorKind::SyntaxError, "bad number '" + hi_s + "' in goal line");
        }
        spec.ranges[name] = {lo, hi};
    }
    return spec;
}

GoalDistributionSpec validate_goal_spec(const std::vector<std::string>& lines,
                                        const EnvironmentDefinition& env) {
    GoalDistributionSpec spec = parse_goal_lines(lines);
    for (const auto& [name, range] : spec.ranges) {
        auto it = env.goal_dims.find(name);
        if (it == env.goal_dims.end()) {
            throw DslError(ErrorKind::UnknownDimension,
                           "'" + name + "' is not a goal dimension of " + env.id);
        }
        if (range.first > range.second) {
            throw DslError(ErrorKind::InvertedRange, "range for '" + name + "' has lo > hi");
        }
        if (range.first < it->second.first - 1e-12 || range.second > it->second.second + 1e-12) {
            throw DslError(ErrorKind::RangeOutOfBounds,
                           "range for '" + name + "' outside allowed [" +
                               format_number(it->second.first) + ", " +
                               format_number(it->second.second) + "]");
        }
    }
    for (const auto& [name, range] : env.goal_dims) {
        (void)range;
        if (!spec.ranges.count(name)) {
            throw DslError(ErrorKind::UnknownDimension,
                           "goal dimension '" + name + "' missing from the goal block");
        }
    }
    return spec;
}

namespace {

struct SlotInfo {
    int offset;
    int dims;
};

}  // namespace

TypedProgram typecheck(RewardProgram program, const EnvironmentDefinition& env) {
    TypedProgram typed;
    std::map<std::string, SlotInfo> slots;
    {
        int offset = 0;
        for (const auto& v : env.variables) {
            slots[v.name] = {offset, v.dims};
            offset += v.dims;
        }
        slots["action"] = {offset, env.action_dims};
    }
    std::map<std::string, int> locals;
    int depth = 0;

    auto emit = [&](TypedProgram::OpCode op, double imm = 0.0, int a = 0, int b = 0,
                    int stack_delta = 0) {
        typed.code_.push_back({op, imm, a, b});
        depth += stack_delta;
        typed.max_stack_ = std::max(typed.max_stack_, depth);
    };

    auto compile_expr = [&](auto&& self, const Expr& e) -> void {
        switch (e.kind) {
            case ExprKind::number:
                emit(TypedProgram::OpCode::push_const, e.number, 0, 0, 1);
                return;
            case ExprKind::varref: {
                auto local_it = locals.find(e.name);
                if (local_it != locals.end()) {
                    if (e.index) {
                        throw DslError(ErrorKind::ScalarIndexed,
                                       "binding '" + e.name + "' is a scalar and cannot be indexed",
                                       e.line, e.column);
                    }
                    emit(TypedProgram::OpCode::push_local, 0.0, local_it->second, 0, 1);
                    return;
                }
                auto it = slots.find(e.name);
                if (it == slots.end()) {
                    throw DslError(ErrorKind::UnknownVariable, "unknown variable '" + e.name + "'",
                                   e.line, e.column);
                }
                const SlotInfo& slot = it->second;
                if (e.index) {
                    if (slot.dims == 1) {
                        throw DslError(ErrorKind::ScalarIndexed,
                                       "'" + e.name + "' is a scalar and cannot be indexed", e.line,
                                       e.column);
                    }
                    if (*e.index < 0 || *e.index >= slot.dims) {
                        throw DslError(ErrorKind::BadIndex,
                                       "index " + std::to_string(*e.index) + " out of range for '" +
                                           e.name + "' (dims " + std::to_string(slot.dims) + ")",
                                       e.line, e.column);
                    }
                    emit(TypedProgram::OpCode::push_slot, 0.0, slot.offset + *e.index, 0, 1);
                    return;
                }
                if (slot.dims != 1) {
                    throw DslError(ErrorKind::VectorNotReduced,
                                   "vector variable '" + e.name +
                                       "' must be indexed or passed to a reduction",
                                   e.line, e.column);
                }
                emit(TypedProgram::OpCode::push_slot, 0.0, slot.offset, 0, 1);
                return;
            }
            case ExprKind::negate:
                self(self, *e.args[0]);
                emit(TypedProgram::OpCode::negate);
                return;
            case ExprKind::binary:
                self(self, *e.args[0]);
                self(self, *e.args[1]);
                switch (e.op) {
                    case BinOp::add: emit(TypedProgram::OpCode::add, 0.0, 0, 0, -1); break;
                    case BinOp::sub: emit(TypedProgram::OpCode::sub, 0.0, 0, 0, -1); break;
                    case BinOp::mul: emit(TypedProgram::OpCode::mul, 0.0, 0, 0, -1); break;
                    case BinOp::div: emit(TypedProgram::OpCode::div, 0.0, 0, 0, -1); break;
                }
                return;
            case ExprKind::call: {
                const bool reduction = e.fn == Fn::norm || e.fn == Fn::sum ||
                                       e.fn == Fn::sum_sq || e.fn == Fn::mean;
                if (reduction) {
                    const Expr& arg = *e.args[0];
                    if (arg.kind != ExprKind::varref || arg.index.has_value() ||
                        locals.count(arg.name)) {
                        throw DslError(ErrorKind::BadReduction,
                                       std::string(fn_name(e.fn)) +
                                           " takes a bare vector variable name",
                                       e.line, e.column);
                    }
                    auto it = slots.find(arg.name);
                    if (it == slots.end()) {
                        throw DslError(ErrorKind::UnknownVariable,
                                       "unknown variable '" + arg.name + "'", arg.line, arg.column);
                    }
                    if (it->second.dims == 1) {
                        throw DslError(ErrorKind::BadReduction,
                                       "'" + arg.name + "' is a scalar; " + fn_name(e.fn) +
                                           " needs a vector variable",
                                       e.line, e.column);
                    }
                    TypedProgram::OpCode op;
                    switch (e.fn) {
                        case Fn::norm: op = TypedProgram::OpCode::reduce_norm; break;
                        case Fn::sum: op = TypedProgram::OpCode::reduce_sum; break;
                        case Fn::sum_sq: op = TypedProgram::OpCode::reduce_sum_sq; break;
                        default: op = TypedProgram::OpCode::reduce_mean; break;
                    }
                    emit(op, 0.0, it->second.offset, it->second.dims, 1);
                    return;
                }
                for (const auto& arg : e.args) self(self, *arg);
                switch (e.fn) {
                    case Fn::abs: emit(TypedProgram::OpCode::abs); break;
                    case Fn::sq: emit(TypedProgram::OpCode::sq); break;
                    case Fn::sqrt: emit(TypedProgram::OpCode::sqrt); break;
                    case Fn::exp: emit(TypedProgram::OpCode::exp); break;
                    case Fn::tanh: emit(TypedProgram::OpCode::tanh); break;
                    case Fn::min: emit(TypedProgram::OpCode::min, 0.0, 0, 0, -1); break;
                    case Fn::max: emit(TypedProgram::OpCode::max, 0.0, 0, 0, -1); break;
                    case Fn::clip: emit(TypedProgram::OpCode::clip, 0.0, 0, 0, -2); break;
                    default: break;
                }
                return;
            }
        }
    };

    for (const auto& [name, expr] : program.bindings) {
        if (locals.count(name) || slots.count(name)) {
            throw DslError(ErrorKind::DuplicateBinding,
                           "binding '" + name + "' collides with an existing name", expr->line,
                           expr->column);
        }
        compile_expr(compile_expr, *expr);
        const int idx = static_cast<int>(locals.size());
        locals[name] = idx;
        emit(TypedProgram::OpCode::store_local, 0.0, idx, 0, -1);
    }
    compile_expr(compile_expr, *program.result);
    typed.local_count_ = static_cast<int>(locals.size());
    typed.program_ = std::move(program);
    typed.env_id_ = env.id;
    return typed;
}

double TypedProgram::evaluate(const std::vector<double>& features) const {
    thread_local std::vector<double> stack;
    thread_local std::vector<double> locals;
    stack.resize(max_stack_ + 1);
    locals.resize(local_count_);
    int sp = 0;
    for (const Instr& ins : code_) {
        switch (ins.op) {
            case OpCode::push_const: stack[sp++] = ins.imm; break;
            case OpCode::push_slot: stack[sp++] = features[ins.a]; break;
            case OpCode::push_local: stack[sp++] = locals[ins.a]; break;
            case OpCode::store_local: locals[ins.a] = stack[--sp]; break;
            case OpCode::add: --sp; stack[sp - 1] += stack[sp]; break;
            case OpCode::sub: --sp; stack[sp - 1] -= stack[sp]; break;
            case OpCode::mul: --sp; stack[sp - 1] *= stack[sp]; break;
            case OpCode::div: {
                --sp;
                if (std::fabs(stack[sp]) < kDivisionGuard) {
                    throw DslError(ErrorKind::DivisionByNearZero,
                                   "divisor magnitude below 1e-9");
                }
                stack[sp - 1] /= stack[sp];
                break;
            }
            case OpCode::negate: stack[sp - 1] = -stack[sp - 1]; break;
            case OpCode::abs: stack[sp - 1] = std::fabs(stack[sp - 1]); break;
            case OpCode::sq: stack[sp - 1] *= stack[sp - 1]; break;
            case OpCode::sqrt: stack[sp - 1] = std::sqrt(std::max(stack[sp - 1], 0.0)); break;
            case OpCode::exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
            case OpCode::tanh: stack[sp - 1] = std::tanh(stack[sp - 1]); break;
            case OpCode::min: --sp; stack[sp - 1] = std::min(stack[sp - 1], stack[sp]); break;
            case OpCode::max: --sp; stack[sp - 1] = std::max(stack[sp - 1], stack[sp]); break;
            case OpCode::clip: {
                sp -= 2;
                const double lo = stack[sp];
                const double hi = stack[sp + 1];
                stack[sp - 1] = std::min(std::max(stack[sp - 1], lo), hi);
                break;
            }
            case OpCode::reduce_norm: {
                double acc = 0.0;
                for (int i = 0; i < ins.b; ++i) acc += features[ins.a + i] * features[ins.a + i];
                stack[sp++] = std::sqrt(acc);
                break;
            }
            case OpCode::reduce_sum: {
                double acc = 0.0;
                for (int i = 0; i < ins.b; ++i) acc += features[ins.a + i];
                stack[sp++] = acc;
                break;
            }
            case OpCode::reduce_sum_sq: {
                double acc = 0.0;
                for (int i = 0; i < ins.b; ++i) acc += features[ins.a + i] * features[ins.a + i];
                stack[sp++] = acc;
                break;
            }
            case OpCode::reduce_mean: {
                double acc = 0.0;
                for (int i = 0; i < ins.b; ++i) acc += features[ins.a + i];
                stack[sp++] = acc / ins.b;
                break;
            }
        }
    }
    const double result = stack[0];
    if (!std::isfinite(result)) {
        throw DslError(ErrorKind::NonFiniteResult, "reward evaluated to a non-finite value");
    }
    return result;
}

double TypedProgram::evaluate_reward(const EnvironmentDefinition& env, const Transition& t) const {
    std::vector<double> features = flatten_observation(env, t.next_observation);
    features.insert(features.end(), t.action.begin(), t.action.end());
    return evaluate(features);
}

std::string pretty_print(const RewardProgram& program) {
    std::ostringstream out;
    for (const auto& [name, expr] : program.bindings) {
        out << name << " = ";
        print_expr(*expr, out);
        out << '\n';
    }
    out << "return ";
    print_expr(*program.result, out);
    out << '\n';
    return out.str();
}

bool structurally_equal(const Expr& a, const Expr& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case ExprKind::number:
            return a.number == b.number;
        case ExprKind::varref:
            return a.name == b.name && a.index == b.index;
        case ExprKind::negate:
            return structurally_equal(*a.args[0], *b.args[0]);
        case ExprKind::binary:
            return a.op == b.op && structurally_equal(*a.args[0], *b.args[0]) &&
                   structurally_equal(*a.args[1], *b.args[1]);
        case ExprKind::call: {
            if (a.fn != b.fn || a.args.size() != b.args.size()) return false;
            for (std::size_t i = 0; i < a.args.size(); ++i) {
                if (!structurally_equal(*a.args[i], *b.args[i])) return false;
            }
            return true;
        }
    }
    return false;
}

bool structurally_equal(const RewardProgram& a, const RewardProgram& b) {
    if (a.bindings.size() != b.bindings.size()) return false;
    for (std::size_t i = 0; i < a.bindings.size(); ++i) {
        if (a.bindings[i].first != b.bindings[i].first) return false;
        if (!structurally_equal(*a.bindings[i].second, *b.bindings[i].second)) return false;
    }
    return structurally_equal(*a.result, *b.result);
}

TaskCode compile_task_code(const std::string& text, const EnvironmentDefinition& env) {
    TaskCodeText parsed = parse_task_code(text);
    TaskCode code{typecheck(std::move(parsed.program), env),
                  validate_goal_spec(parsed.goal_lines, env), std::move(parsed.raw)};
    return code;
}

std::string grammar_card() {
    return
        "Reward programs use a small expression language, one statement per line:\n"
        "  binding:   name = expression\n"
        "  last line: return expression\n"
        "Expressions are built from decimal numbers, + - * /, unary -, parentheses, and\n"
        "the functions abs(x), sq(x), sqrt(x), exp(x), tanh(x), min(a, b), max(a, b),\n"
        "clip(x, lo, hi), norm(v), sum(v), sum_sq(v), mean(v).\n"
        "norm/sum/sum_sq/mean take a bare vector variable name as their only argument.\n"
        "Scalar state variables are used bare; vector variables must be indexed like\n"
        "agent_pos[0] or passed to a reduction. `action` is the action vector.\n"
        "All state variables are normalized to [-1, 1]. Avoid division by values that\n"
        "can reach zero.\n";
}

}  // namespace curricullm::dsl

#include "curricullm/env.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "curricullm/rng.hpp"

namespace curricullm {

namespace {

constexpr double kSpeedLimit = 1.0;
constexpr double kMazeExtent = 5.0;
constexpr double kBoxExtent = 4.0;
constexpr double kAgentHalfWidth = 0.1;   // maze agent collision box half-size
constexpr double kAgentRadius = 0.2;      // pusher agent disc
constexpr double kBlockRadius = 0.3;      // pusher block disc
constexpr double kMazeSuccessRadius = 0.5;
constexpr double kOpenSuccessRadius = 0.3;
constexpr double kPushSuccessRadius = 0.5;
constexpr std::array<double, 2> kPushAgentStart{1.0, 1.0};
constexpr std::array<double, 2> kPushBlockStart{2.0, 2.0};
constexpr std::array<double, 2> kOpenStart{2.0, 2.0};

double clamp(double v, double lo, double hi) {
    return std::min(std::max(v, lo), hi);
}

double distance(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

StateVariableDescriptor var(std::string name, int dims, double lo, double hi, std::string desc) {
    StateVariableDescriptor d;
    d.name = std::move(name);
    d.dims = dims;
    d.lower.assign(dims, lo);
    d.upper.assign(dims, hi);
    d.description = std::move(desc);
    return d;
}

EnvironmentDefinition make_point_maze() {
    EnvironmentDefinition env;
    env.id = "point_maze";
    const double diag = kMazeExtent * std::sqrt(2.0);
    env.variables = {
        var("agent_pos", 2, 0.0, kMazeExtent, "Position of the point agent in the maze (x, y)"),
        var("agent_vel", 2, -kSpeedLimit, kSpeedLimit, "Velocity of the point agent (x, y)"),
        var("goal_pos", 2, 0.0, kMazeExtent, "Position of the current goal (x, y)"),
        var("dist_to_goal", 1, 0.0, diag, "Euclidean distance between the agent and the goal"),
        var("goal_direction", 2, -1.0, 1.0, "Unit vector pointing from the agent toward the goal"),
        var("is_alive", 1, 0.0, 1.0, "1 if the environment is healthy, 0 if terminated due to failure"),
    };
    env.action_dims = 2;
    env.goal_dims = {{"goal_distance", {0.0, 6.0}}};
    env.horizon = 200;
    env.dt = 0.1;
    env.target_goal_spec.ranges = {{"goal_distance", {6.0, 6.0}}};
    env.env_description_text =
        "A point-mass agent moves in a U-shaped corridor maze of 5x5 unit cells. "
        "Actions are 2D accelerations in [-1, 1] per axis; walls block movement. "
        "The agent starts at the center of the lower-left free cell. An episode succeeds "
        "and terminates when the agent comes within 0.5 units of the goal position.";
    env.target_description =
        "Reach the goal at the far end of the U-shaped corridor (grid path distance 6 from the start). "
        "Goals are sampled by grid path distance from the start via the goal_distance dimension.";
    env.terminate_on = TerminateOn::success;
    return env;
}

EnvironmentDefinition make_point_push() {
    EnvironmentDefinition env;
    env.id = "point_push";
    const double diag = kBoxExtent * std::sqrt(2.0);
    env.variables = {
        var("agent_pos", 2, 0.0, kBoxExtent, "Position of the agent disc (x, y)"),
        var("agent_vel", 2, -kSpeedLimit, kSpeedLimit, "Velocity of the agent disc (x, y)"),
        var("block_pos", 2, 0.0, kBoxExtent, "Position of the pushable block disc (x, y)"),
        var("goal_pos", 2, 0.0, kBoxExtent, "Position of the current goal for the block (x, y)"),
        var("dist_agent_block", 1, 0.0, diag, "Euclidean distance between the agent and the block"),
        var("dist_block_goal", 1, 0.0, diag, "Euclidean distance between the block and the goal"),
        var("is_alive", 1, 0.0, 1.0, "1 if the environment is healthy, 0 if terminated due to failure"),
    };
    env.action_dims = 2;
    env.goal_dims = {{"goal_radius", {0.0, 1.5}}};
    env.horizon = 200;
    env.dt = 0.1;
    env.target_goal_spec.ranges = {{"goal_radius", {1.5, 1.5}}};
    env.env_description_text =
        "An agent disc (radius 0.2) pushes a block disc (radius 0.3) on a 4x4 planar workspace. "
        "Actions are 2D accelerations in [-1, 1] per axis. The block moves quasi-statically when "
        "pushed by the agent. The agent starts at (1, 1) and the block at (2, 2). An episode "
        "succeeds and terminates when the block comes within 0.5 units of the goal position.";
    env.target_description =
        "Push the block to a goal sampled uniformly over the disc of radius goal_radius "
        "around the block's start position.";
    env.terminate_on = TerminateOn::success;
    return env;
}

EnvironmentDefinition make_point_open() {
    EnvironmentDefinition env;
    env.id = "point_open";
    const double diag = kBoxExtent * std::sqrt(2.0);
    env.variables = {
        var("agent_pos", 2, 0.0, kBoxExtent, "Position of the point agent (x, y)"),
        var("agent_vel", 2, -kSpeedLimit, kSpeedLimit, "Velocity of the point agent (x, y)"),
        var("goal_pos", 2, 0.0, kBoxExtent, "Position of the current goal (x, y)"),
        var("dist_to_goal", 1, 0.0, diag, "Euclidean distance between the agent and the goal"),
        var("is_alive", 1, 0.0, 1.0, "1 if the environment is healthy, 0 if terminated due to failure"),
    };
    env.action_dims = 2;
    env.goal_dims = {{"goal_radius", {0.0, 2.0}}};
    env.horizon = 200;
    env.dt = 0.1;
    env.target_goal_spec.ranges = {{"goal_radius", {1.5, 1.5}}};
    env.env_description_text =
        "A point-mass agent moves on an open 4x4 planar workspace with no obstacles. "
        "Actions are 2D accelerations in [-1, 1] per axis. The agent starts at the center (2, 2). "
        "Episodes run to the horizon; there is no failure termination.";
    env.target_description =
        "Reach a goal sampled uniformly over the disc of radius goal_radius around the start position.";
    env.terminate_on = TerminateOn::failure;
    return env;
}

}  // namespace

namespace maze {

bool is_wall(int row, int col) {
    if (row < 0 || row > 4 || col < 0 || col > 4) return true;
    if (row == 0 || row == 4 || col == 0 || col == 4) return true;
    return row == 2 && (col == 1 || col == 2);
}

int path_distance(int row, int col) {
    static const auto dist = [] {
        std::array<std::array<int, 5>, 5> d{};
        for (auto& r : d) r.fill(-1);
        std::deque<std::pair<int, int>> queue{{kStartRow, kStartCol}};
        d[kStartRow][kStartCol] = 0;
        while (!queue.empty()) {
            auto [r, c] = queue.front();
            queue.pop_front();
            const int dr[] = {1, -1, 0, 0};
            const int dc[] = {0, 0, 1, -1};
            for (int i = 0; i < 4; ++i) {
                int nr = r + dr[i], nc = c + dc[i];
                if (!is_wall(nr, nc) && d[nr][nc] < 0) {
                    d[nr][nc] = d[r][c] + 1;
                    queue.push_back({nr, nc});
                }
            }
        }
        return d;
    }();
    if (is_wall(row, col)) return -1;
    return dist[row][col];
}

std::array<double, 2> cell_center(int row, int col) {
    return {static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5};
}

}  // namespace maze

const StateVariableDescriptor* EnvironmentDefinition::find_variable(const std::string& name) const {
    for (const auto& v : variables) {
        if (v.name == name) return &v;
    }
    return nullptr;
}

int EnvironmentDefinition::feature_dims() const {
    int n = 0;
    for (const auto& v : variables) n += v.dims;
    return n;
}

void check_goal_spec(const EnvironmentDefinition& env, const GoalDistributionSpec& spec) {
    for (const auto& [name, range] : spec.ranges) {
        auto it = env.goal_dims.find(name);
        if (it == env.goal_dims.end()) {
            throw InvalidGoalSpec("unknown goal dimension '" + name + "' for environment " + env.id);
        }
        const auto [lo, hi] = range;
        if (lo > hi) {
            throw InvalidGoalSpec("inverted range for goal dimension '" + name + "'");
        }
        if (lo < it->second.first - 1e-12 || hi > it->second.second + 1e-12) {
            throw InvalidGoalSpec("range for goal dimension '" + name + "' outside allowed bounds");
        }
    }
    for (const auto& [name, range] : env.goal_dims) {
        (void)range;
        if (!spec.ranges.count(name)) {
            throw InvalidGoalSpec("goal dimension '" + name + "' missing from spec");
        }
    }
}

std::string env_description(const EnvironmentDefinition& env) {
    std::ostringstream out;
    out << "Environment: " << env.id << "\n";
    out << env.env_description_text << "\n\n";
    out << "State variables (normalized to [-1, 1]):\n";
    for (const auto& v : env.variables) {
        out << "- " << v.name << " (" << v.dims << "): " << v.description << "\n";
    }
    out << "\nGoal dimensions and their allowed ranges:\n";
    for (const auto& [name, range] : env.goal_dims) {
        out << "- " << name << ": [" << range.first << ", " << range.second << "]\n";
    }
    out << "\nTarget task goal distribution:\n";
    for (const auto& [name, range] : env.target_goal_spec.ranges) {
        out << "- " << name << ": [" << range.first << ", " << range.second << "]\n";
    }
    out << "\nTarget task: " << env.target_description << "\n";
    return out.str();
}

std::vector<double> flatten_observation(const EnvironmentDefinition& env, const Observation& obs) {
    std::vector<double> features;
    features.reserve(env.feature_dims());
    for (const auto& v : env.variables) {
        const auto& vals = obs.values.at(v.name);
        features.insert(features.end(), vals.begin(), vals.end());
    }
    return features;
}

std::vector<std::string> Environment::builtin_ids() {
    return {"point_maze", "point_push", "point_open"};
}

EnvironmentDefinition Environment::definition(const std::string& id) {
    if (id == "point_maze") return make_point_maze();
    if (id == "point_push") return make_point_push();
    if (id == "point_open") return make_point_open();
    throw UnknownEnvironment("unknown environment '" + id + "'");
}

Environment::Environment(EnvironmentDefinition def) : def_(std::move(def)) {
    if (def_.id == "point_maze") {
        kind_ = Kind::maze;
    } else if (def_.id == "point_push") {
        kind_ = Kind::push;
    } else if (def_.id == "point_open") {
        kind_ = Kind::open_space;
    } else {
        throw UnknownEnvironment("unknown environment '" + def_.id + "'");
    }
}

void Environment::sample_goal(const GoalDistributionSpec& spec, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x676f616cULL));  // dedicated goal stream
    if (kind_ == Kind::maze) {
        const auto [lo, hi] = spec.ranges.at("goal_distance");
        std::vector<std::array<double, 2>> admissible;
        for (int row = 0; row < 5; ++row) {
            for (int col = 0; col < 5; ++col) {
                int d = maze::path_distance(row, col);
                if (d >= 0 && d >= lo - 1e-9 && d <= hi + 1e-9) {
                    admissible.push_back(maze::cell_center(row, col));
                }
            }
        }
        if (admissible.empty()) {
            throw InvalidGoalSpec("goal_distance range [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + "] admits no maze cell");
        }
        goal_ = admissible[rng.uniform_index(admissible.size())];
    } else {
        const auto [lo, hi] = spec.ranges.at("goal_radius");
        const std::array<double, 2> center = kind_ == Kind::push ? kPushBlockStart : kOpenStart;
        const double radius = rng.uniform(lo, hi);
        const double angle = rng.uniform(0.0, 6.283185307179586);
        const double r = radius * std::sqrt(rng.uniform());  // area-uniform over the disc
        goal_ = {center[0] + r * std::cos(angle), center[1] + r * std::sin(angle)};
        goal_[0] = clamp(goal_[0], 0.0, kBoxExtent);
        goal_[1] = clamp(goal_[1], 0.0, kBoxExtent);
    }
}

Observation Environment::reset(const GoalDistributionSpec& spec, std::uint64_t seed) {
    check_goal_spec(def_, spec);
    steps_ = 0;
    done_ = false;
    success_ = false;
    failure_terminated_ = false;
    agent_vel_ = {0.0, 0.0};
    switch (kind_) {
        case Kind::maze:
            agent_pos_ = maze::cell_center(maze::kStartRow, maze::kStartCol);
            break;
        case Kind::push:
            agent_pos_ = kPushAgentStart;
            block_pos_ = kPushBlockStart;
            break;
        case Kind::open_space:
            agent_pos_ = kOpenStart;
            break;
    }
    sample_goal(spec, seed);
    return observe();
}

void Environment::integrate(const std::vector<double>& action) {
    const double ax = clamp(action.empty() ? 0.0 : action[0], -1.0, 1.0);
    const double ay = clamp(action.size() < 2 ? 0.0 : action[1], -1.0, 1.0);
    agent_vel_[0] += ax * def_.dt;
    agent_vel_[1] += ay * def_.dt;
    const double speed = std::hypot(agent_vel_[0], agent_vel_[1]);
    if (speed > kSpeedLimit) {
        agent_vel_[0] *= kSpeedLimit / speed;
        agent_vel_[1] *= kSpeedLimit / speed;
    }

    if (kind_ == Kind::maze) {
        // Axis-separated movement against the wall grid; the agent is a small
        // axis-aligned box so it never clips a wall corner. dt * speed limit
        // is well below the cell size, so one boundary check per axis is enough.
        const double m = kAgentHalfWidth;
        double nx = agent_pos_[0] + agent_vel_[0] * def_.dt;
        const int row_lo = static_cast<int>(std::floor(agent_pos_[1] - m));
        const int row_hi = static_cast<int>(std::floor(agent_pos_[1] + m));
        if (agent_vel_[0] > 0) {
            const int c = static_cast<int>(std::floor(nx + m));
            if (maze::is_wall(row_lo, c) || maze::is_wall(row_hi, c)) {
                nx = static_cast<double>(c) - m - 1e-9;
                agent_vel_[0] = 0.0;
            }
        } else if (agent_vel_[0] < 0) {
            const int c = static_cast<int>(std::floor(nx - m));
            if (maze::is_wall(row_lo, c) || maze::is_wall(row_hi, c)) {
                nx = static_cast<double>(c + 1) + m + 1e-9;
                agent_vel_[0] = 0.0;
            }
        }
        agent_pos_[0] = nx;
        double ny = agent_pos_[1] + agent_vel_[1] * def_.dt;
        const int col_lo = static_cast<int>(std::floor(agent_pos_[0] - m));
        const int col_hi = static_cast<int>(std::floor(agent_pos_[0] + m));
        if (agent_vel_[1] > 0) {
            const int r = static_cast<int>(std::floor(ny + m));
            if (maze::is_wall(r, col_lo) || maze::is_wall(r, col_hi)) {
                ny = static_cast<double>(r) - m - 1e-9;
                agent_vel_[1] = 0.0;
            }
        } else if (agent_vel_[1] < 0) {
            const int r = static_cast<int>(std::floor(ny - m));
            if (maze::is_wall(r, col_lo) || maze::is_wall(r, col_hi)) {
                ny = static_cast<double>(r + 1) + m + 1e-9;
                agent_vel_[1] = 0.0;
            }
        }
        agent_pos_[1] = ny;
        return;
    }

    agent_pos_[0] += agent_vel_[0] * def_.dt;
    agent_pos_[1] += agent_vel_[1] * def_.dt;
    const double margin = kind_ == Kind::push ? kAgentRadius : 0.0;
    for (int i = 0; i < 2; ++i) {
        const double clamped = clamp(agent_pos_[i], margin, kBoxExtent - margin);
        if (clamped != agent_pos_[i]) agent_vel_[i] = 0.0;
        agent_pos_[i] = clamped;
    }

    if (kind_ == Kind::push) {
        // Quasi-static contact: displace the block along the contact normal to
        // tangency; if a workspace wall pins the block, the agent yields instead.
        const double contact = kAgentRadius + kBlockRadius;
        double dx = block_pos_[0] - agent_pos_[0];
        double dy = block_pos_[1] - agent_pos_[1];
        double d = std::hypot(dx, dy);
        if (d < contact) {
            double nx = d > 1e-12 ? dx / d : 1.0;
            double ny = d > 1e-12 ? dy / d : 0.0;
            block_pos_[0] = agent_pos_[0] + contact * nx;
            block_pos_[1] = agent_pos_[1] + contact * ny;
            block_pos_[0] = clamp(block_pos_[0], kBlockRadius, kBoxExtent - kBlockRadius);
            block_pos_[1] = clamp(block_pos_[1], kBlockRadius, kBoxExtent - kBlockRadius);
            dx = block_pos_[0] - agent_pos_[0];
            dy = block_pos_[1] - agent_pos_[1];
            d = std::hypot(dx, dy);
            if (d < contact) {
                nx = d > 1e-12 ? dx / d : 1.0;
                ny = d > 1e-12 ? dy / d : 0.0;
                agent_pos_[0] = block_pos_[0] - contact * nx;
                agent_pos_[1] = block_pos_[1] - contact * ny;
                agent_vel_[0] = 0.0;
                agent_vel_[1] = 0.0;
            }
        }
    }
}

bool Environment::success_predicate() const {
    switch (kind_) {
        case Kind::maze:
            return distance(agent_pos_, goal_) < kMazeSuccessRadius;
        case Kind::push:
            return distance(block_pos_, goal_) < kPushSuccessRadius;
        case Kind::open_space:
            return distance(agent_pos_, goal_) < kOpenSuccessRadius;
    }
    return false;
}

Transition Environment::step(const std::vector<double>& action) {
    Transition t;
    t.observation = observe();
    t.action.resize(def_.action_dims, 0.0);
    for (int i = 0; i < def_.action_dims && i < static_cast<int>(action.size()); ++i) {
        t.action[i] = clamp(action[i], -1.0, 1.0);
    }
    integrate(t.action);
    ++steps_;
    const bool success_now = success_predicate();
    success_ = success_ || success_now;
    if (def_.terminate_on == TerminateOn::success && success_now) done_ = true;
    if (def_.terminate_on == TerminateOn::failure && failure_terminated_) done_ = true;
    if (steps_ >= def_.horizon) done_ = true;
    t.next_observation = observe();
    t.terminated = done_;
    t.success = success_now;
    return t;
}

void Environment::write_raw(const std::string& name, std::initializer_list<double> v,
                            std::map<std::string, std::vector<double>>* out) const {
    (*out)[name] = std::vector<double>(v);
}

Observation Environment::observe() const {
    std::map<std::string, std::vector<double>> raw;
    write_raw("agent_pos", {agent_pos_[0], agent_pos_[1]}, &raw);
    write_raw("agent_vel", {agent_vel_[0], agent_vel_[1]}, &raw);
    write_raw("goal_pos", {goal_[0], goal_[1]}, &raw);
    write_raw("is_alive", {failure_terminated_ ? 0.0 : 1.0}, &raw);
    if (kind_ == Kind::maze || kind_ == Kind::open_space) {
        write_raw("dist_to_goal", {distance(agent_pos_, goal_)}, &raw);
    }
    if (kind_ == Kind::maze) {
        const double dx = goal_[0] - agent_pos_[0];
        const double dy = goal_[1] - agent_pos_[1];
        const double d = std::hypot(dx, dy);
        if (d > 1e-9) {
            write_raw("goal_direction", {dx / d, dy / d}, &raw);
        } else {
            write_raw("goal_direction", {0.0, 0.0}, &raw);
        }
    }
    if (kind_ == Kind::push) {
        write_raw("block_pos", {block_pos_[0], block_pos_[1]}, &raw);
        write_raw("dist_agent_block", {distance(agent_pos_, block_pos_)}, &raw);
        write_raw("dist_block_goal", {distance(block_pos_, goal_)}, &raw);
    }

    Observation obs;
    for (const auto& v : def_.variables) {
        const auto& values = raw.at(v.name);
        std::vector<double> normalized(v.dims);
        for (int i = 0; i < v.dims; ++i) {
            const double lo = v.lower[i];
            const double hi = v.upper[i];
            normalized[i] = clamp(2.0 * (values[i] - lo) / (hi - lo) - 1.0, -1.0, 1.0);
        }
        obs.values[v.name] = std::move(normalized);
    }
    return obs;
}

}  // namespace curricullm

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "curricullm/errors.hpp"

namespace curricullm {

struct StateVariableDescriptor {
    std::string name;
    int dims = 1;
    std::vector<double> lower;  // per component
    std::vector<double> upper;  // per component
    std::string description;    // injected into prompts
};

// Ranges for the goal dimensions sampled at episode reset.
struct GoalDistributionSpec {
    std::map<std::string, std::pair<double, double>> ranges;
};

enum class TerminateOn { failure, success };

struct EnvironmentDefinition {
    std::string id;
    std::vector<StateVariableDescriptor> variables;
    int action_dims = 2;
    std::map<std::string, std::pair<double, double>> goal_dims;  // name -> allowed range
    int horizon = 200;
    double dt = 0.1;
    GoalDistributionSpec target_goal_spec;
    std::string env_description_text;  // prose describing robot + workspace
    std::string target_description;    // prose describing the target task
    TerminateOn terminate_on = TerminateOn::success;

    const StateVariableDescriptor* find_variable(const std::string& name) const;
    int feature_dims() const;  // sum of dims over the registry
};

// Normalized, per-variable view of the state. Every component is in [-1, 1].
struct Observation {
    std::map<std::string, std::vector<double>> values;
};

struct Transition {
    Observation observation;
    std::vector<double> action;
    Observation next_observation;
    bool terminated = false;
    bool success = false;
};

// Checks a goal spec against the environment's declared goal dimensions.
// Throws InvalidGoalSpec on unknown dimension, inverted range, or a range
// outside the allowed bounds.
void check_goal_spec(const EnvironmentDefinition& env, const GoalDistributionSpec& spec);

// Deterministic concatenation of the environment prose, the variable
// registry, and the goal dimensions; this is the l_E block fed to prompts.
std::string env_description(const EnvironmentDefinition& env);

// Flattens an observation into the policy feature vector, registry order.
std::vector<double> flatten_observation(const EnvironmentDefinition& env, const Observation& obs);

// One simulated episode instance. Instances are isolated; run as many in
// parallel as you like, one rollout per instance.
class Environment {
public:
    static std::vector<std::string> builtin_ids();
    static EnvironmentDefinition definition(const std::string& id);

    explicit Environment(EnvironmentDefinition def);

    Observation reset(const GoalDistributionSpec& spec, std::uint64_t seed);
    Transition step(const std::vector<double>& action);
    Observation observe() const;

    bool done() const { return done_; }
    bool succeeded() const { return success_; }
    int steps() const { return steps_; }
    const EnvironmentDefinition& definition() const { return def_; }

    // Raw (unnormalized) state, used by tests and scripted controllers.
    std::array<double, 2> agent_position() const { return agent_pos_; }
    std::array<double, 2> agent_velocity() const { return agent_vel_; }
    std::array<double, 2> block_position() const { return block_pos_; }
    std::array<double, 2> goal_position() const { return goal_; }

private:
    enum class Kind { maze, push, open_space };

    void sample_goal(const GoalDistributionSpec& spec, std::uint64_t seed);
    void integrate(const std::vector<double>& action);
    void write_raw(const std::string& name, std::initializer_list<double> v,
                   std::map<std::string, std::vector<double>>* out) const;
    bool success_predicate() const;

    EnvironmentDefinition def_;
    Kind kind_;
    std::array<double, 2> agent_pos_{};
    std::array<double, 2> agent_vel_{};
    std::array<double, 2> block_pos_{};
    std::array<double, 2> goal_{};
    int steps_ = 0;
    bool done_ = false;
    bool success_ = false;
    bool failure_terminated_ = false;
};

namespace maze {
// Fixed 5x5 unit-cell layout of point_maze: boundary walls plus the interior
// wall cells (row 2, cols 1-2). Exposed for the test-side BFS oracle.
bool is_wall(int row, int col);
int path_distance(int row, int col);         // BFS distance from the start cell; -1 for walls
std::array<double, 2> cell_center(int row, int col);
inline constexpr int kStartRow = 3;
inline constexpr int kStartCol = 1;
inline constexpr int kGoalRow = 1;
inline constexpr int kGoalCol = 1;
}  // namespace maze

}  // namespace curricullm

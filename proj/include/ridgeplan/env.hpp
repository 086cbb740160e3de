#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string_view>

#include "ridgeplan/common.hpp"
#include "ridgeplan/terrain.hpp"

namespace ridgeplan {

// Compass actions. Columns grow east, rows grow south, so N is row - 1.
enum class Action : int { E = 0, NE = 1, N = 2, NW = 3, W = 4, SW = 5, S = 6, SE = 7 };

inline constexpr int kNumActions = 8;

inline constexpr std::array<Cell, kNumActions> kActionDelta{{
    {+1, 0}, {+1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, +1}, {0, +1}, {+1, +1},
}};

inline constexpr std::array<std::string_view, kNumActions> kActionName{
    "E", "NE", "N", "NW", "W", "SW", "S", "SE"};

inline Cell apply(Cell c, Action a) {
    const Cell d = kActionDelta[static_cast<int>(a)];
    return {c.col + d.col, c.row + d.row};
}

inline bool is_diagonal(Action a) { return static_cast<int>(a) % 2 == 1; }

// Cost model and reward constants.
struct EnvParams {
    double k1 = 1.0;        // u per meter travelled
    double k2_up = 15.0;    // u per meter climbed
    double k3_down = 5.0;   // u per meter descended
    double w_d = 0.002;     // reward weight per meter
    double w_e = 0.001;     // reward weight per u
    double r_goal = 10.0;
    double invalid_penalty = -1.0;
    int max_steps = 150;
};

struct StepMetrics {
    double distance_m = 0.0;
    double energy_u = 0.0;
};

inline bool adjacent8(Cell a, Cell b) {
    return !(a == b) && chebyshev(a, b) == 1;
}

inline StepMetrics step_metrics(const TerrainMap& map, Cell from, Cell to,
                                const EnvParams& p = {}) {
    map.check_bounds(from);
    map.check_bounds(to);
    if (!adjacent8(from, to))
        throw ParameterError("step_metrics: cells " + to_string(from) + " and " + to_string(to) +
                             " are not 8-adjacent");
    const bool diag = from.col != to.col && from.row != to.row;
    const double dxy = diag ? map.cell_size_m() * kSqrt2 : map.cell_size_m();
    const double dh = (map.at(to) - map.at(from)) * map.height_unit_m();
    const double dist = std::sqrt(dxy * dxy + dh * dh);
    const double energy =
        p.k1 * dist + p.k2_up * std::max(dh, 0.0) + p.k3_down * std::max(-dh, 0.0);
    return {dist, energy};
}

enum class Terminal { none, goal_reached, timeout };

struct EnvState {
    std::shared_ptr<const TerrainMap> map;
    Cell agent;
    Cell goal;
    int steps_taken = 0;
};

struct StepOutcome {
    EnvState next;
    double reward = 0.0;
    double distance_m = 0.0;
    double energy_u = 0.0;
    Terminal terminal = Terminal::none;
    bool valid_move = true;
};

inline EnvState reset(std::shared_ptr<const TerrainMap> map, Cell start, Cell goal) {
    if (!map) throw ParameterError("reset: null map");
    map->check_bounds(start);
    map->check_bounds(goal);
    if (start == goal) throw ParameterError("reset: start equals goal " + to_string(start));
    return EnvState{std::move(map), start, goal, 0};
}

inline bool is_terminal(const EnvState& s, const EnvParams& p) {
    return s.agent == s.goal || s.steps_taken >= p.max_steps;
}

inline StepOutcome step(const EnvState& state, Action action, const EnvParams& p = {}) {
    if (is_terminal(state, p)) throw StateError("step: episode already terminated");
    StepOutcome out;
    out.next = state;
    out.next.steps_taken = state.steps_taken + 1;
    const Cell target = apply(state.agent, action);
    if (!state.map->in_bounds(target)) {
        out.valid_move = false;
        out.reward = p.invalid_penalty;
    } else {
        const StepMetrics m = step_metrics(*state.map, state.agent, target, p);
        out.next.agent = target;
        out.distance_m = m.distance_m;
        out.energy_u = m.energy_u;
        out.reward = -(p.w_d * m.distance_m + p.w_e * m.energy_u);
    }
    if (out.next.agent == state.goal) {
        out.reward += p.r_goal;
        out.terminal = Terminal::goal_reached;
    } else if (out.next.steps_taken >= p.max_steps) {
        out.terminal = Terminal::timeout;
    }
    return out;
}

inline double episode_return(std::span<const StepOutcome> outcomes) {
    double total = 0.0;
    for (const auto& o : outcomes) total += o.reward;
    return total;
}

}  // namespace ridgeplan

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "ridgeplan/common.hpp"
#include "ridgeplan/env.hpp"
#include "ridgeplan/terrain.hpp"

namespace ridgeplan {

struct RrtParams {
    double goal_bias = 0.1;
    double accept_scale = 1.5;  // height units
    int max_step = 5;           // cells per extension
    int max_iterations = 20000;
};

struct Path {
    std::vector<Cell> cells;
    std::vector<StepMetrics> per_step;
};

struct PathMetrics {
    double energy_u = 0.0;
    double distance_m = 0.0;
    double sum = 0.0;   // energy_u + distance_m
    double cost = 0.0;  // w_d * distance + w_e * energy, summed smallest-first
    int steps = 0;
    std::vector<double> cumulative_energy;
    std::vector<double> cumulative_distance;
};

struct PlanResult {
    std::optional<Path> path;
    double energy_u = 0.0;
    double distance_m = 0.0;
    double sum = 0.0;
    double cost = 0.0;
    double time_s = 0.0;
    std::int64_t nodes_expanded = 0;
    bool success = false;
};

inline double step_cost(const TerrainMap& map, Cell from, Cell to, const EnvParams& p = {}) {
    const StepMetrics m = step_metrics(map, from, to, p);
    return p.w_d * m.distance_m + p.w_e * m.energy_u;
}

// Scalar step costs are summed in ascending order so that two paths using
// the same multiset of steps report bit-identical totals.
inline PathMetrics path_metrics(const TerrainMap& map, const std::vector<Cell>& cells,
                                const EnvParams& p = {}) {
    if (cells.size() < 2) throw PathError("path_metrics: path needs at least two cells");
    PathMetrics out;
    std::vector<double> costs;
    costs.reserve(cells.size() - 1);
    for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
        if (!map.in_bounds(cells[i]) || !map.in_bounds(cells[i + 1]))
            throw PathError("path_metrics: cell out of bounds at step " + std::to_string(i));
        if (!adjacent8(cells[i], cells[i + 1]))
            throw PathError("path_metrics: cells " + to_string(cells[i]) + " and " +
                            to_string(cells[i + 1]) + " are not adjacent");
        const StepMetrics m = step_metrics(map, cells[i], cells[i + 1], p);
        out.energy_u += m.energy_u;
        out.distance_m += m.distance_m;
        out.cumulative_energy.push_back(out.energy_u);
        out.cumulative_distance.push_back(out.distance_m);
        costs.push_back(p.w_d * m.distance_m + p.w_e * m.energy_u);
    }
    std::sort(costs.begin(), costs.end());
    for (double c : costs) out.cost += c;
    out.sum = out.energy_u + out.distance_m;
    out.steps = static_cast<int>(cells.size()) - 1;
    return out;
}

inline Path make_path(const TerrainMap& map, std::vector<Cell> cells, const EnvParams& p = {}) {
    Path path;
    for (std::size_t i = 0; i + 1 < cells.size(); ++i)
        path.per_step.push_back(step_metrics(map, cells[i], cells[i + 1], p));
    path.cells = std::move(cells);
    return path;
}

inline void fill_result(PlanResult& r, const TerrainMap& map, std::vector<Cell> cells,
                        const EnvParams& p) {
    const PathMetrics m = path_metrics(map, cells, p);
    r.energy_u = m.energy_u;
    r.distance_m = m.distance_m;
    r.sum = m.sum;
    r.cost = m.cost;
    r.path = make_path(map, std::move(cells), p);
    r.success = true;
}

// Greedy move toward the goal: smallest octile distance after the move,
// then lowest step energy, then lowest action index.
inline Action heuristic_action(const TerrainMap& map, Cell agent, Cell goal, const EnvParams& p = {}) {
    map.check_bounds(agent);
    map.check_bounds(goal);
    int best = -1;
    double best_d = 0.0, best_e = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
        const Cell next = apply(agent, static_cast<Action>(a));
        if (!map.in_bounds(next)) continue;
        const double d = octile_cells(next, goal);
        const double e = step_metrics(map, agent, next, p).energy_u;
        if (best < 0 || d < best_d || (d == best_d && e < best_e)) {
            best = a;
            best_d = d;
            best_e = e;
        }
    }
    return static_cast<Action>(best);
}

// Lower bound on the remaining scalar cost: the straight 3D line to the goal
// over the octile footprint, with its climb or descent charged once.
inline double astar_heuristic(const TerrainMap& map, Cell n, Cell goal, const EnvParams& p = {}) {
    const double oct = octile_cells(n, goal) * map.cell_size_m();
    const double dh = (map.at(goal) - map.at(n)) * map.height_unit_m();
    const double d3 = std::sqrt(oct * oct + dh * dh);
    const double energy = p.k1 * d3 + p.k2_up * std::max(dh, 0.0) + p.k3_down * std::max(-dh, 0.0);
    return p.w_d * d3 + p.w_e * energy;
}

namespace detail {

struct OpenEntry {
    double f;
    double h;
    std::uint64_t seq;
    int node;
};

// Min-heap order: f, then h, then insertion order.
struct OpenAfter {
    bool operator()(const OpenEntry& a, const OpenEntry& b) const {
        if (a.f != b.f) return a.f > b.f;
        if (a.h != b.h) return a.h > b.h;
        return a.seq > b.seq;
    }
};

template <typename Heuristic>
PlanResult best_first(const TerrainMap& map, Cell start, Cell goal, const EnvParams& p, Heuristic h) {
    map.check_bounds(start);
    map.check_bounds(goal);
    if (start == goal) throw ParameterError("planner: start equals goal");
    const auto t0 = std::chrono::steady_clock::now();
    const int w = map.width();
    const int n = w * map.height();
    auto id = [w](Cell c) { return c.row * w + c.col; };
    auto cell = [w](int i) { return Cell{i % w, i / w}; };

    std::vector<double> g(n, std::numeric_limits<double>::infinity());
    std::vector<int> parent(n, -1);
    std::vector<char> closed(n, 0);
    std::priority_queue<OpenEntry, std::vector<OpenEntry>, OpenAfter> open;
    std::uint64_t seq = 0;

    PlanResult r;
    g[id(start)] = 0.0;
    const double h0 = h(start);
    open.push({h0, h0, seq++, id(start)});
    const int goal_id = id(goal);
    while (!open.empty()) {
        const OpenEntry e = open.top();
        open.pop();
        if (closed[e.node]) continue;
        closed[e.node] = 1;
        ++r.nodes_expanded;
        if (e.node == goal_id) break;
        const Cell c = cell(e.node);
        for (int a = 0; a < kNumActions; ++a) {
            const Cell nb = apply(c, static_cast<Action>(a));
            if (!map.in_bounds(nb)) continue;
            const int k = id(nb);
            const double cand = g[e.node] + step_cost(map, c, nb, p);
            if (cand < g[k]) {
                g[k] = cand;
                parent[k] = e.node;
                closed[k] = 0;
                const double hk = h(nb);
                open.push({cand + hk, hk, seq++, k});
            }
        }
    }
    if (parent[goal_id] >= 0) {
        std::vector<Cell> cells;
        for (int v = goal_id; v >= 0; v = parent[v]) cells.push_back(cell(v));
        std::reverse(cells.begin(), cells.end());
        fill_result(r, map, std::move(cells), p);
    }
    r.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace detail

// Minimum scalar-cost path on the 8-connected grid.
inline PlanResult astar_plan(const TerrainMap& map, Cell start, Cell goal, const EnvParams& p = {}) {
    return detail::best_first(map, start, goal, p,
                              [&](Cell c) { return astar_heuristic(map, c, goal, p); });
}

inline PlanResult dijkstra_oracle(const TerrainMap& map, Cell start, Cell goal, const EnvParams& p = {}) {
    return detail::best_first(map, start, goal, p, [](Cell) { return 0.0; });
}

// Exact cost-to-goal for every cell (Dijkstra from the goal over reversed
// edges). Used as an admissibility oracle.
inline std::vector<double> cost_to_goal(const TerrainMap& map, Cell goal, const EnvParams& p = {}) {
    map.check_bounds(goal);
    const int w = map.width();
    const int n = w * map.height();
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[goal.row * w + goal.col] = 0.0;
    pq.push({0.0, goal.row * w + goal.col});
    while (!pq.empty()) {
        auto [d, v] = pq.top();
        pq.pop();
        if (d > dist[v]) continue;
        const Cell c{v % w, v / w};
        for (int a = 0; a < kNumActions; ++a) {
            const Cell from = apply(c, static_cast<Action>(a));
            if (!map.in_bounds(from)) continue;
            const int k = from.row * w + from.col;
            const double cand = d + step_cost(map, from, c, p);
            if (cand < dist[k]) {
                dist[k] = cand;
                pq.push({cand, k});
            }
        }
    }
    return dist;
}

// 8-connected Bresenham cells from `a` (exclusive) toward `b` (inclusive).
inline std::vector<Cell> grid_line(Cell a, Cell b) {
    std::vector<Cell> out;
    int x = a.col, y = a.row;
    const int dx = std::abs(b.col - a.col), dy = -std::abs(b.row - a.row);
    const int sx = a.col < b.col ? 1 : -1, sy = a.row < b.row ? 1 : -1;
    int err = dx + dy;
    while (!(x == b.col && y == b.row)) {
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y += sy;
        }
        out.push_back({x, y});
    }
    return out;
}

inline double median_elevation(const TerrainMap& map) {
    std::vector<double> v = map.elev();
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
        m = 0.5 * (m + lo);
    }
    return m;
}

// Probability that RRT keeps a sample at this cell; favours mid-height terrain.
inline double rrt_acceptance(const TerrainMap& map, Cell z, double median, const RrtParams& rp) {
    return std::exp(-std::abs(map.at(z) - median) / rp.accept_scale);
}

// Grid RRT with goal bias and an elevation-aware sample filter.
inline PlanResult rrt_plan(const TerrainMap& map, Cell start, Cell goal, std::uint64_t seed,
                           const EnvParams& p = {}, const RrtParams& rp = {}) {
    map.check_bounds(start);
    map.check_bounds(goal);
    if (start == goal) throw ParameterError("rrt_plan: start equals goal");
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(seed);
    const double median = median_elevation(map);
    const int w = map.width();

    struct Node {
        Cell cell;
        int parent;
        std::vector<Cell> edge;  // cells after parent up to and including `cell`
    };
    std::vector<Node> tree{{start, -1, {}}};
    std::vector<int> owner(static_cast<std::size_t>(w) * map.height(), -1);
    owner[start.row * w + start.col] = 0;

    PlanResult r;
    int reached = chebyshev(start, goal) <= 1 ? 0 : -1;
    for (int it = 0; reached < 0 && it < rp.max_iterations; ++it) {
        Cell z = goal;
        if (uniform01(rng) >= rp.goal_bias) {
            z = {uniform_int(rng, 0, map.width() - 1), uniform_int(rng, 0, map.height() - 1)};
            if (uniform01(rng) >= rrt_acceptance(map, z, median, rp)) continue;
        }
        int nearest = 0;
        long best = std::numeric_limits<long>::max();
        for (int i = 0; i < static_cast<int>(tree.size()); ++i) {
            const long dc = tree[i].cell.col - z.col, dr = tree[i].cell.row - z.row;
            const long d2 = dc * dc + dr * dr;
            if (d2 < best) {
                best = d2;
                nearest = i;
            }
        }
        if (best == 0) continue;
        std::vector<Cell> line = grid_line(tree[nearest].cell, z);
        if (static_cast<int>(line.size()) > rp.max_step) line.resize(rp.max_step);
        const Cell end = line.back();
        if (owner[end.row * w + end.col] >= 0) continue;
        owner[end.row * w + end.col] = static_cast<int>(tree.size());
        tree.push_back({end, nearest, std::move(line)});
        if (chebyshev(end, goal) <= 1) reached = static_cast<int>(tree.size()) - 1;
    }
    r.nodes_expanded = static_cast<std::int64_t>(tree.size());
    if (reached >= 0) {
        std::vector<Cell> cells;
        for (int v = reached; v >= 0; v = tree[v].parent) {
            const auto& e = tree[v].edge;
            for (auto it = e.rbegin(); it != e.rend(); ++it) cells.push_back(*it);
            if (tree[v].parent < 0) cells.push_back(tree[v].cell);
        }
        std::reverse(cells.begin(), cells.end());
        if (!(cells.back() == goal)) cells.push_back(goal);
        fill_result(r, map, std::move(cells), p);
    }
    r.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline nlohmann::json path_to_json(const std::string& map_file, Cell start, Cell goal, const Path& path) {
    nlohmann::json cells = nlohmann::json::array();
    for (Cell c : path.cells) cells.push_back({c.col, c.row});
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : path.per_step) steps.push_back({{"d_m", s.distance_m}, {"e_u", s.energy_u}});
    return {{"map", map_file},
            {"start", {start.col, start.row}},
            {"goal", {goal.col, goal.row}},
            {"cells", cells},
            {"per_step", steps}};
}

}  // namespace ridgeplan

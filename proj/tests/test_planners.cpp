#include <cmath>

#include <gtest/gtest.h>

#include "ridgeplan/planners.hpp"

using namespace ridgeplan;

namespace {

TerrainMap with_cells(int n, std::initializer_list<std::pair<Cell, double>> cells) {
    std::vector<double> e(static_cast<std::size_t>(n) * n, 0.0);
    for (const auto& [c, v] : cells) e[c.row * n + c.col] = v;
    return TerrainMap(n, n, 5.0, e);
}

Cell random_cell(const TerrainMap& m, Rng& rng) {
    return {uniform_int(rng, 0, m.width() - 1), uniform_int(rng, 0, m.height() - 1)};
}

void expect_valid(const TerrainMap& m, const PlanResult& r, Cell start, Cell goal) {
    ASSERT_TRUE(r.success);
    ASSERT_TRUE(r.path.has_value());
    const auto& cells = r.path->cells;
    EXPECT_EQ(cells.front(), start);
    EXPECT_EQ(cells.back(), goal);
    for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
        ASSERT_TRUE(m.in_bounds(cells[i + 1]));
        ASSERT_TRUE(adjacent8(cells[i], cells[i + 1])) << i;
    }
    EXPECT_EQ(r.path->per_step.size(), cells.size() - 1);
    EXPECT_EQ(r.sum, r.energy_u + r.distance_m);
    const auto pm = path_metrics(m, cells);
    EXPECT_EQ(pm.energy_u, r.energy_u);
    EXPECT_EQ(pm.distance_m, r.distance_m);
}

}  // namespace

TEST(HeuristicAction, FlatDiagonal) {
    const auto m = TerrainMap::flat(20, 20);
    EXPECT_EQ(heuristic_action(m, {5, 5}, {10, 0}), Action::NE);
    EXPECT_EQ(heuristic_action(m, {5, 5}, {10, 5}), Action::E);
}

TEST(HeuristicAction, OctileDominatesEnergy) {
    // A wall due east does not beat the octile rule: E leaves 4 cells,
    // NE and SE leave 4.414.
    const auto m = with_cells(20, {{{6, 5}, 5.0}});
    EXPECT_EQ(heuristic_action(m, {5, 5}, {10, 5}), Action::E);
}

TEST(HeuristicAction, OctileMinimumIsUnique) {
    // The energy and index tie-breaks never fire: from any cell the best
    // octile move toward an in-bounds goal is unique and in bounds.
    const auto m = TerrainMap::flat(12, 12);
    for (int a = 0; a < 144; ++a)
        for (int g = 0; g < 144; ++g) {
            if (a == g) continue;
            const Cell ac{a % 12, a / 12}, gc{g % 12, g / 12};
            double best = 1e9;
            int count = 0;
            for (int k = 0; k < kNumActions; ++k) {
                const double d = octile_cells(apply(ac, static_cast<Action>(k)), gc);
                if (d < best) {
                    best = d;
                    count = 1;
                } else if (d == best) {
                    ++count;
                }
            }
            ASSERT_EQ(count, 1);
            ASSERT_TRUE(m.in_bounds(apply(ac, heuristic_action(m, ac, gc))));
        }
}

TEST(HeuristicAction, CornerStaysInBounds) {
    const auto m = generate(3, 20, 20, 5);
    EXPECT_EQ(heuristic_action(m, {0, 0}, {0, 10}), Action::S);
    EXPECT_EQ(heuristic_action(m, {19, 19}, {0, 0}), Action::NW);
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
        const Cell a = random_cell(m, rng), g = random_cell(m, rng);
        if (a == g) continue;
        ASSERT_TRUE(m.in_bounds(apply(a, heuristic_action(m, a, g))));
    }
}

TEST(HeuristicAction, GreedyReachesGoal) {
    // no obstacles: greedy octile descent arrives within width + height steps
    Rng rng(4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = generate(seed, 30, 30, 5);
        for (int k = 0; k < 20; ++k) {
            Cell a = random_cell(m, rng);
            const Cell g = random_cell(m, rng);
            int steps = 0;
            while (!(a == g) && steps < 60) {
                a = apply(a, heuristic_action(m, a, g));
                ++steps;
            }
            ASSERT_EQ(a, g);
        }
    }
}

TEST(StepCost, Examples) {
    const auto flat = TerrainMap::flat(5, 5);
    EXPECT_NEAR(step_cost(flat, {1, 1}, {2, 1}), 0.3, 1e-12);
    const auto up = with_cells(5, {{{2, 1}, 1.0}});
    EXPECT_NEAR(step_cost(up, {1, 1}, {2, 1}), 0.9231, 1e-4);
    EnvParams p;
    p.w_e = 0;
    EXPECT_NEAR(step_cost(up, {1, 1}, {2, 1}, p), 0.002 * std::sqrt(100.0 * 100 + 40 * 40), 1e-12);
}

TEST(AstarHeuristic, Examples) {
    const auto m = generate(5, 10, 10, 5);
    EXPECT_EQ(astar_heuristic(m, {3, 3}, {3, 3}), 0.0);
    const auto flat = TerrainMap::flat(10, 10);
    EXPECT_NEAR(astar_heuristic(flat, {2, 5}, {5, 5}), 0.9, 1e-12);
}

TEST(AstarHeuristic, AdmissibleAndConsistent) {
    Rng rng(6);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = generate(100 + seed, 10, 10, 5);
        const Cell goal = random_cell(m, rng);
        const auto truth = cost_to_goal(m, goal);
        for (int r = 0; r < 10; ++r)
            for (int c = 0; c < 10; ++c) {
                const Cell n{c, r};
                const double h = astar_heuristic(m, n, goal);
                ASSERT_LE(h, truth[r * 10 + c] * (1 + 1e-12) + 1e-12);
                for (int a = 0; a < kNumActions; ++a) {
                    const Cell nb = apply(n, static_cast<Action>(a));
                    if (!m.in_bounds(nb)) continue;
                    ASSERT_LE(h, step_cost(m, n, nb) + astar_heuristic(m, nb, goal) + 1e-12);
                }
            }
    }
}

TEST(Astar, FlatStraight) {
    const auto m = TerrainMap::flat(10, 10);
    const auto r = astar_plan(m, {0, 0}, {0, 5});
    expect_valid(m, r, {0, 0}, {0, 5});
    EXPECT_EQ(r.path->cells.size(), 6u);
    EXPECT_NEAR(r.cost, 1.5, 1e-12);
    EXPECT_GT(r.nodes_expanded, 0);
}

TEST(Astar, AdjacentGoal) {
    const auto m = generate(9, 10, 10, 5);
    const auto r = astar_plan(m, {4, 4}, {5, 5});
    expect_valid(m, r, {4, 4}, {5, 5});
    EXPECT_EQ(r.path->cells.size(), 2u);
}

TEST(Astar, MatchesDijkstra) {
    Rng rng(7);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto m = generate(1000 + seed, 12, 12, 5);
        Cell s = random_cell(m, rng), g;
        do g = random_cell(m, rng);
        while (g == s);
        const auto a = astar_plan(m, s, g);
        const auto d = dijkstra_oracle(m, s, g);
        expect_valid(m, a, s, g);
        expect_valid(m, d, s, g);
        ASSERT_NEAR(a.cost, d.cost, 1e-9 * d.cost) << seed;
        ASSERT_LE(d.cost, a.cost + 1e-9 * d.cost);
        ASSERT_LE(a.nodes_expanded, d.nodes_expanded);
        ASSERT_NEAR(d.cost, cost_to_goal(m, g)[s.row * 12 + s.col], 1e-9 * d.cost);
    }
}

TEST(Astar, StartEqualsGoalRejected) {
    const auto m = TerrainMap::flat(5, 5);
    EXPECT_THROW(astar_plan(m, {1, 1}, {1, 1}), ParameterError);
    EXPECT_THROW(rrt_plan(m, {1, 1}, {1, 1}, 1), ParameterError);
}

TEST(Dijkstra, FlatIsOctile) {
    const auto m = TerrainMap::flat(15, 15);
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        Cell s = random_cell(m, rng), g;
        do g = random_cell(m, rng);
        while (g == s);
        EXPECT_NEAR(dijkstra_oracle(m, s, g).cost, 0.3 * octile_cells(s, g), 1e-9);
    }
}

TEST(Dijkstra, SymmetricWeights) {
    EnvParams p;
    p.k2_up = p.k3_down = 8.0;
    Rng rng(9);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = generate(seed, 12, 12, 5);
        Cell s = random_cell(m, rng), g;
        do g = random_cell(m, rng);
        while (g == s);
        EXPECT_NEAR(dijkstra_oracle(m, s, g, p).cost, dijkstra_oracle(m, g, s, p).cost, 1e-9);
    }
}

TEST(Rrt, FlatAcceptanceIsOne) {
    const auto m = TerrainMap::flat(10, 10);
    const double med = median_elevation(m);
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c) EXPECT_EQ(rrt_acceptance(m, {c, r}, med, {}), 1.0);
}

TEST(Rrt, Deterministic) {
    const auto m = generate(4, 50, 50, 5);
    const auto a = rrt_plan(m, {2, 3}, {45, 40}, 17);
    const auto b = rrt_plan(m, {2, 3}, {45, 40}, 17);
    ASSERT_TRUE(a.success);
    EXPECT_EQ(a.path->cells, b.path->cells);
    EXPECT_EQ(a.nodes_expanded, b.nodes_expanded);
    EXPECT_EQ(a.sum, b.sum);
}

TEST(Rrt, ValidPathsAndSuccessRate) {
    Rng rng(10);
    int ok = 0, runs = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = generate(500 + seed, 50, 50, 5);
        for (int k = 0; k < 50; ++k) {
            Cell s = random_cell(m, rng), g;
            do g = random_cell(m, rng);
            while (g == s);
            const auto r = rrt_plan(m, s, g, seed * 1000 + k);
            ++runs;
            if (!r.success) continue;
            ++ok;
            expect_valid(m, r, s, g);
            // never cheaper than the optimum
            ASSERT_GE(r.cost, astar_plan(m, s, g).cost * (1 - 1e-9));
        }
    }
    EXPECT_GE(static_cast<double>(ok) / runs, 0.9);
}

TEST(PathMetrics, FiveFlatSteps) {
    const auto m = TerrainMap::flat(10, 10);
    const auto pm = path_metrics(m, {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}});
    EXPECT_DOUBLE_EQ(pm.energy_u, 500.0);
    EXPECT_DOUBLE_EQ(pm.distance_m, 500.0);
    EXPECT_DOUBLE_EQ(pm.sum, 1000.0);
    EXPECT_EQ(pm.steps, 5);
    ASSERT_EQ(pm.cumulative_distance.size(), 5u);
    EXPECT_DOUBLE_EQ(pm.cumulative_distance[2], 300.0);
    EXPECT_DOUBLE_EQ(pm.cumulative_energy.back(), 500.0);
}

TEST(PathMetrics, Errors) {
    const auto m = TerrainMap::flat(10, 10);
    EXPECT_THROW(path_metrics(m, {{0, 0}, {2, 0}}), PathError);
    EXPECT_THROW(path_metrics(m, {{0, 0}, {0, 0}}), PathError);
    EXPECT_THROW(path_metrics(m, {{0, 0}, {-1, 0}}), PathError);
    EXPECT_THROW(path_metrics(m, {{0, 0}}), PathError);
}

TEST(GridLine, EightConnected) {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
        const Cell a{uniform_int(rng, -20, 20), uniform_int(rng, -20, 20)};
        const Cell b{uniform_int(rng, -20, 20), uniform_int(rng, -20, 20)};
        const auto line = grid_line(a, b);
        if (a == b) {
            EXPECT_TRUE(line.empty());
            continue;
        }
        ASSERT_EQ(static_cast<int>(line.size()), chebyshev(a, b));
        ASSERT_EQ(line.back(), b);
        Cell prev = a;
        for (Cell c : line) {
            ASSERT_TRUE(adjacent8(prev, c));
            prev = c;
        }
    }
}

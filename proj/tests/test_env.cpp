#include <vector>

#include <gtest/gtest.h>

#include "ridgeplan/env.hpp"

using namespace ridgeplan;

namespace {

std::shared_ptr<const TerrainMap> flat(int n = 50) {
    return std::make_shared<const TerrainMap>(TerrainMap::flat(n, n));
}

// column 1 is one unit higher than column 0
std::shared_ptr<const TerrainMap> ramp() {
    std::vector<double> e(4 * 4, 0.0);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) e[r * 4 + c] = c;
    return std::make_shared<const TerrainMap>(TerrainMap(4, 4, 5.0, e));
}

}  // namespace

TEST(Actions, Mapping) {
    EXPECT_EQ(apply({5, 5}, Action::E), (Cell{6, 5}));
    EXPECT_EQ(apply({5, 5}, Action::N), (Cell{5, 4}));
    EXPECT_EQ(apply({5, 5}, Action::SW), (Cell{4, 6}));
    for (int a = 0; a < kNumActions; ++a) EXPECT_EQ(is_diagonal(static_cast<Action>(a)), a % 2 == 1);
}

TEST(Reset, Examples) {
    const auto m = flat();
    const auto s = reset(m, {0, 0}, {49, 49});
    EXPECT_EQ(s.agent, (Cell{0, 0}));
    EXPECT_EQ(s.steps_taken, 0);
    EXPECT_THROW(reset(m, {5, 5}, {5, 5}), ParameterError);
    EXPECT_THROW(reset(m, {-1, 0}, {3, 3}), BoundsError);
    EXPECT_THROW(reset(nullptr, {0, 0}, {3, 3}), ParameterError);
}

TEST(StepMetrics, Examples) {
    const auto m = flat();
    auto s = step_metrics(*m, {3, 3}, {4, 3});
    EXPECT_DOUBLE_EQ(s.distance_m, 100.0);
    EXPECT_DOUBLE_EQ(s.energy_u, 100.0);
    s = step_metrics(*m, {3, 3}, {4, 4});
    EXPECT_NEAR(s.distance_m, 141.4214, 1e-4);
    EXPECT_NEAR(s.energy_u, 141.4214, 1e-4);
    s = step_metrics(*ramp(), {0, 0}, {1, 0});
    EXPECT_NEAR(s.distance_m, 107.7033, 1e-4);
    EXPECT_NEAR(s.energy_u, 707.7033, 1e-4);
    EXPECT_THROW(step_metrics(*m, {3, 3}, {5, 3}), ParameterError);
    EXPECT_THROW(step_metrics(*m, {3, 3}, {3, 3}), ParameterError);
}

TEST(StepMetrics, SymmetricDistanceAsymmetricEnergy) {
    const EnvParams p;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = generate(seed, 15, 15, 5);
        for (int r = 0; r < 15; ++r)
            for (int c = 0; c < 15; ++c)
                for (const Cell d : kActionDelta) {
                    const Cell a{c, r}, b{c + d.col, r + d.row};
                    if (!m.in_bounds(b)) continue;
                    const auto ab = step_metrics(m, a, b), ba = step_metrics(m, b, a);
                    ASSERT_EQ(ab.distance_m, ba.distance_m);
                    const double dh = (m.at(b) - m.at(a)) * m.height_unit_m();
                    if (dh > 0) {
                        ASSERT_NEAR(ab.energy_u - ba.energy_u, (p.k2_up - p.k3_down) * dh, 1e-9 * ab.energy_u);
                    }
                }
    }
}

TEST(Step, FlatMoveReward) {
    const auto s = reset(flat(), {3, 3}, {10, 10});
    const auto o = step(s, Action::E);
    EXPECT_NEAR(o.reward, -0.3, 1e-12);
    EXPECT_EQ(o.next.agent, (Cell{4, 3}));
    EXPECT_TRUE(o.valid_move);
    EXPECT_EQ(o.terminal, Terminal::none);
}

TEST(Step, InvalidMove) {
    const auto s = reset(flat(), {0, 0}, {10, 10});
    const auto o = step(s, Action::W);
    EXPECT_FALSE(o.valid_move);
    EXPECT_EQ(o.next.agent, (Cell{0, 0}));
    EXPECT_DOUBLE_EQ(o.reward, -1.0);
    EXPECT_EQ(o.next.steps_taken, 1);
    EXPECT_EQ(o.distance_m, 0.0);
}

TEST(Step, GoalReached) {
    const auto s = reset(flat(), {3, 3}, {4, 3});
    const auto o = step(s, Action::E);
    EXPECT_NEAR(o.reward, 9.7, 1e-12);
    EXPECT_EQ(o.terminal, Terminal::goal_reached);
    EXPECT_THROW(step(o.next, Action::E), StateError);
}

TEST(Step, CounterAndTimeout) {
    auto s = reset(flat(), {0, 25}, {49, 49});
    std::vector<StepOutcome> outs;
    for (int i = 0; i < 150; ++i) {
        // bounce between two cells, counting invalid moves too
        const Action a = i % 4 == 3 ? Action::N : (i % 2 ? Action::W : Action::E);
        const int before = s.steps_taken;
        outs.push_back(step(s, a));
        s = outs.back().next;
        ASSERT_EQ(s.steps_taken, before + 1);
    }
    EXPECT_EQ(outs.back().terminal, Terminal::timeout);
    EXPECT_THROW(step(s, Action::E), StateError);
}

TEST(EpisodeReturn, Examples) {
    EXPECT_EQ(episode_return({}), 0.0);
    std::vector<StepOutcome> o(3);
    o[0].reward = -0.3;
    o[1].reward = -0.3;
    o[2].reward = 9.7;
    EXPECT_NEAR(episode_return(o), 9.1, 1e-12);

    auto s = reset(flat(), {10, 25}, {49, 0});
    std::vector<StepOutcome> straight;
    for (int i = 0; i < 150; ++i) {
        straight.push_back(step(s, i % 2 ? Action::W : Action::E));
        s = straight.back().next;
    }
    EXPECT_EQ(straight.back().terminal, Terminal::timeout);
    EXPECT_NEAR(episode_return(straight), -45.0, 1e-9);
}

TEST(Step, ConfigurableConstants) {
    EnvParams p;
    p.w_e = 0.0;
    p.max_steps = 2;
    auto s = reset(flat(), {3, 3}, {10, 10});
    auto o = step(s, Action::E, p);
    EXPECT_NEAR(o.reward, -0.2, 1e-12);
    o = step(o.next, Action::E, p);
    EXPECT_EQ(o.terminal, Terminal::timeout);
}

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "ridgeplan/common.hpp"
#include "ridgeplan/env.hpp"
#include "ridgeplan/terrain.hpp"

namespace ridgeplan {

inline constexpr int kCanvas = 100;       // global view side
inline constexpr int kGlobalLayers = 3;   // terrain, agent, goal
inline constexpr int kLocal = 20;         // local view side
inline constexpr int kRectMargin = 10;
inline constexpr float kOffMap = -1.0f;   // local view sentinel

// Inclusive cell rectangle.
struct Rect {
    int col_min = 0;
    int row_min = 0;
    int col_max = 0;
    int row_max = 0;

    int width() const { return col_max - col_min + 1; }
    int height() const { return row_max - row_min + 1; }
    bool contains(Cell c) const {
        return c.col >= col_min && c.col <= col_max && c.row >= row_min && c.row <= row_max;
    }
    friend bool operator==(const Rect&, const Rect&) = default;
};

// Global view is stored layer-major: index = (layer * 100 + row) * 100 + col.
struct Observation {
    std::vector<float> global_view;
    std::vector<float> local_view;
    Cell agent;
    Cell goal;

    float global_at(int layer, int row, int col) const {
        return global_view[(static_cast<std::size_t>(layer) * kCanvas + row) * kCanvas + col];
    }
    float local_at(int row, int col) const {
        return local_view[static_cast<std::size_t>(row) * kLocal + col];
    }
    friend bool operator==(const Observation&, const Observation&) = default;
};

// Bounding box of agent and goal grown by the margin, clamped to the map.
inline Rect attention_rect(const TerrainMap& map, Cell agent, Cell goal) {
    map.check_bounds(agent);
    map.check_bounds(goal);
    return Rect{
        std::max(0, std::min(agent.col, goal.col) - kRectMargin),
        std::max(0, std::min(agent.row, goal.row) - kRectMargin),
        std::min(map.width() - 1, std::max(agent.col, goal.col) + kRectMargin),
        std::min(map.height() - 1, std::max(agent.row, goal.row) + kRectMargin),
    };
}

// Canvas position of rect's top-left corner when the rect is centred.
inline Cell canvas_offset(const Rect& r) {
    return {(kCanvas - r.width()) / 2, (kCanvas - r.height()) / 2};
}

namespace detail {

inline void check_canvas_fit(const TerrainMap& map) {
    if (map.width() > kCanvas || map.height() > kCanvas)
        throw UnsupportedSizeError("map " + std::to_string(map.width()) + "x" +
                                   std::to_string(map.height()) + " exceeds the 100x100 canvas");
}

inline float normalized(const TerrainMap& map, Cell c) {
    return map.max_h() > 0.0 ? static_cast<float>(map.at(c) / map.max_h()) : 0.0f;
}

// Copies `r` into a fresh canvas centred, with agent/goal markers.
inline std::vector<float> paint_canvas(const TerrainMap& map, const Rect& r, Cell agent,
                                       Cell goal) {
    std::vector<float> canvas(static_cast<std::size_t>(kGlobalLayers) * kCanvas * kCanvas, 0.0f);
    const Cell off = canvas_offset(r);
    auto idx = [](int layer, int row, int col) {
        return (static_cast<std::size_t>(layer) * kCanvas + row) * kCanvas + col;
    };
    for (int row = r.row_min; row <= r.row_max; ++row)
        for (int col = r.col_min; col <= r.col_max; ++col)
            canvas[idx(0, row - r.row_min + off.row, col - r.col_min + off.col)] =
                normalized(map, {col, row});
    canvas[idx(1, agent.row - r.row_min + off.row, agent.col - r.col_min + off.col)] = 1.0f;
    canvas[idx(2, goal.row - r.row_min + off.row, goal.col - r.col_min + off.col)] = 1.0f;
    return canvas;
}

}  // namespace detail

inline std::vector<float> build_global_view(const TerrainMap& map, Cell agent, Cell goal) {
    detail::check_canvas_fit(map);
    return detail::paint_canvas(map, attention_rect(map, agent, goal), agent, goal);
}

// 20x20 window at rows agent.row-10 .. agent.row+9 (same for columns).
inline std::vector<float> build_local_view(const TerrainMap& map, Cell agent) {
    map.check_bounds(agent);
    std::vector<float> view(static_cast<std::size_t>(kLocal) * kLocal);
    const int half = kLocal / 2;
    for (int i = 0; i < kLocal; ++i) {
        for (int j = 0; j < kLocal; ++j) {
            const Cell c{agent.col - half + j, agent.row - half + i};
            view[static_cast<std::size_t>(i) * kLocal + j] =
                map.in_bounds(c) ? detail::normalized(map, c) : kOffMap;
        }
    }
    return view;
}

inline Observation build_observation(const EnvState& state) {
    return Observation{build_global_view(*state.map, state.agent, state.goal),
                       build_local_view(*state.map, state.agent), state.agent, state.goal};
}

// Whole map centred on the canvas with markers; the input of the static
// full-map baseline.
inline std::vector<float> build_full_map_view(const TerrainMap& map, Cell agent, Cell goal) {
    detail::check_canvas_fit(map);
    map.check_bounds(agent);
    map.check_bounds(goal);
    return detail::paint_canvas(map, Rect{0, 0, map.width() - 1, map.height() - 1}, agent, goal);
}

// Euclidean cell distance and unit direction toward the goal.
struct GoalFeatures {
    double distance = 0.0;
    double dir_col = 0.0;
    double dir_row = 0.0;
};

inline GoalFeatures goal_features(Cell agent, Cell goal) {
    const double dc = goal.col - agent.col;
    const double dr = goal.row - agent.row;
    const double d = std::sqrt(dc * dc + dr * dr);
    if (d == 0.0) return {};
    return {d, dc / d, dr / d};
}

}  // namespace ridgeplan

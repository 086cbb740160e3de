#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ridgeplan/common.hpp"

namespace ridgeplan {

// 2.5D elevation grid. Elevations are fractional height units in [0, max_h],
// stored row-major. Physical scale defaults map a 100x100 grid onto 10 km and
// max height 5 onto 200 m.
class TerrainMap {
public:
    static constexpr double kDefaultCellSize = 100.0;
    static constexpr double kDefaultHeightUnit = 40.0;

    TerrainMap(int width, int height, double max_h, std::vector<double> elev,
               double cell_size_m = kDefaultCellSize,
               double height_unit_m = kDefaultHeightUnit)
        : width_(width), height_(height), max_h_(max_h), cell_size_m_(cell_size_m),
          height_unit_m_(height_unit_m), elev_(std::move(elev)) {
        if (width < 2 || height < 2)
            throw ParameterError("terrain: width and height must be >= 2");
        if (!(max_h >= 0.0)) throw ParameterError("terrain: max_h must be >= 0");
        if (!(cell_size_m > 0.0) || !(height_unit_m > 0.0))
            throw ParameterError("terrain: scale factors must be positive");
        if (elev_.size() != static_cast<std::size_t>(width) * height)
            throw ParameterError("terrain: elevation count " + std::to_string(elev_.size()) +
                                 " != width*height");
        for (std::size_t i = 0; i < elev_.size(); ++i) {
            if (!(elev_[i] >= 0.0 && elev_[i] <= max_h))
                throw ParameterError("terrain: elevation at index " + std::to_string(i) +
                                     " outside [0, max_h]");
        }
    }

    static TerrainMap flat(int width, int height, double max_h = 5.0) {
        return TerrainMap(width, height, max_h,
                          std::vector<double>(static_cast<std::size_t>(width) * height, 0.0));
    }

    int width() const { return width_; }
    int height() const { return height_; }
    double max_h() const { return max_h_; }
    double cell_size_m() const { return cell_size_m_; }
    double height_unit_m() const { return height_unit_m_; }
    const std::vector<double>& elev() const { return elev_; }

    bool in_bounds(Cell c) const {
        return c.col >= 0 && c.col < width_ && c.row >= 0 && c.row < height_;
    }

    void check_bounds(Cell c) const {
        if (!in_bounds(c))
            throw BoundsError("cell " + to_string(c) + " outside " + std::to_string(width_) +
                              "x" + std::to_string(height_) + " map");
    }

    // Unchecked; callers validate bounds first.
    double at(Cell c) const {
        return elev_[static_cast<std::size_t>(c.row) * width_ + c.col];
    }

    double elevation(Cell c) const {
        check_bounds(c);
        return at(c);
    }

    friend bool operator==(const TerrainMap&, const TerrainMap&) = default;

private:
    int width_;
    int height_;
    double max_h_;
    double cell_size_m_;
    double height_unit_m_;
    std::vector<double> elev_;
};

inline double elevation_m(const TerrainMap& map, Cell cell) {
    return map.elevation(cell) * map.height_unit_m();
}

// Sum of Gaussian hills, clamped to [0, max_h]. Hill count is uniform in
// [8, 16], centers uniform over the map, radius uniform in [5, 20] cells and
// amplitude uniform in [1, 5] height units scaled by max_h / 5.
inline TerrainMap generate(std::uint64_t seed, int width, int height, double max_h) {
    if (width < 2 || height < 2) throw ParameterError("generate: width and height must be >= 2");
    if (!(max_h >= 0.0)) throw ParameterError("generate: max_h must be >= 0");

    struct Hill {
        double cx, cy, amp, inv_two_sigma2;
    };
    Rng rng(seed);
    const int count = uniform_int(rng, 8, 16);
    std::vector<Hill> hills;
    hills.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double amp = uniform(rng, 1.0, 5.0) * (max_h / 5.0);
        const double cx = uniform(rng, 0.0, width);
        const double cy = uniform(rng, 0.0, height);
        const double sigma = uniform(rng, 5.0, 20.0);
        hills.push_back({cx, cy, amp, 1.0 / (2.0 * sigma * sigma)});
    }

    std::vector<double> elev(static_cast<std::size_t>(width) * height, 0.0);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            double z = 0.0;
            for (const Hill& h : hills) {
                const double dx = c - h.cx;
                const double dy = r - h.cy;
                z += h.amp * std::exp(-(dx * dx + dy * dy) * h.inv_two_sigma2);
            }
            elev[static_cast<std::size_t>(r) * width + c] = std::clamp(z, 0.0, max_h);
        }
    }
    return TerrainMap(width, height, max_h, std::move(elev));
}

inline nlohmann::json map_to_json(const TerrainMap& map) {
    return nlohmann::json{{"version", 1},
                          {"width", map.width()},
                          {"height", map.height()},
                          {"max_h", map.max_h()},
                          {"cell_size_m", map.cell_size_m()},
                          {"height_unit_m", map.height_unit_m()},
                          {"elev", map.elev()}};
}

namespace detail {

template <typename T>
T require_field(const nlohmann::json& j, const char* key, const std::string& origin) {
    if (!j.contains(key)) throw FormatError(origin + ": missing field '" + key + "'");
    const auto& v = j.at(key);
    if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer())
            throw FormatError(origin + ": field '" + key + "' must be an integer");
    } else {
        if (!v.is_number()) throw FormatError(origin + ": field '" + key + "' must be a number");
    }
    return v.get<T>();
}

}  // namespace detail

inline TerrainMap map_from_json(const nlohmann::json& j, const std::string& origin = "map") {
    if (!j.is_object()) throw FormatError(origin + ": top level must be an object");
    if (detail::require_field<int>(j, "version", origin) != 1)
        throw FormatError(origin + ": unsupported version");
    const int w = detail::require_field<int>(j, "width", origin);
    const int h = detail::require_field<int>(j, "height", origin);
    const double max_h = detail::require_field<double>(j, "max_h", origin);
    const double cell = detail::require_field<double>(j, "cell_size_m", origin);
    const double unit = detail::require_field<double>(j, "height_unit_m", origin);
    if (!j.contains("elev") || !j.at("elev").is_array())
        throw FormatError(origin + ": field 'elev' must be an array");
    const auto& arr = j.at("elev");
    if (w < 2 || h < 2) throw FormatError(origin + ": width and height must be >= 2");
    if (arr.size() != static_cast<std::size_t>(w) * h)
        throw FormatError(origin + ": field 'elev' has " + std::to_string(arr.size()) +
                          " entries, expected " + std::to_string(static_cast<std::size_t>(w) * h));
    std::vector<double> elev;
    elev.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number())
            throw FormatError(origin + ": elev[" + std::to_string(i) + "] is not a number");
        const double v = arr[i].get<double>();
        if (!(v >= 0.0 && v <= max_h))
            throw FormatError(origin + ": elev[" + std::to_string(i) + "] = " + arr[i].dump() +
                              " outside [0, max_h]");
        elev.push_back(v);
    }
    try {
        return TerrainMap(w, h, max_h, std::move(elev), cell, unit);
    } catch (const ParameterError& e) {
        throw FormatError(origin + ": " + e.what());
    }
}

inline void save_map(const TerrainMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("save_map: cannot open " + path);
    out << map_to_json(map).dump() << '\n';
    if (!out) throw Error("save_map: write failed for " + path);
}

inline TerrainMap load_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_map: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
    return map_from_json(j, path);
}

}  // namespace ridgeplan

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ridgeplan {

// Error taxonomy. Every failure the library reports is one of these.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParameterError : Error { using Error::Error; };
struct BoundsError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct ArchitectureError : Error { using Error::Error; };
struct CompatibilityError : Error { using Error::Error; };
struct UnsupportedSizeError : Error { using Error::Error; };
struct PathError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

struct Cell {
    int col = 0;
    int row = 0;

    friend bool operator==(const Cell&, const Cell&) = default;
};

inline std::string to_string(Cell c) {
    return "(" + std::to_string(c.col) + "," + std::to_string(c.row) + ")";
}

// mt19937_64 is fully specified by the standard; the standard distributions
// are not, so the helpers below draw from raw bits to stay bit-identical
// across standard libraries.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

inline constexpr double kSqrt2 = 1.41421356237309504880;

// Shortest 8-connected distance in cells.
inline double octile_cells(Cell a, Cell b) {
    const int dx = std::abs(a.col - b.col);
    const int dy = std::abs(a.row - b.row);
    const int lo = dx < dy ? dx : dy;
    const int hi = dx < dy ? dy : dx;
    return hi + (kSqrt2 - 1.0) * lo;
}

inline int chebyshev(Cell a, Cell b) {
    const int dx = std::abs(a.col - b.col);
    const int dy = std::abs(a.row - b.row);
    return dx > dy ? dx : dy;
}

}  // namespace ridgeplan

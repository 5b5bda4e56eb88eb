#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace respbin {

/// Raised when an input violates a documented precondition or invariant.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised on file and parsing failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major 2D image. Pixels are double in memory so averaging and
/// model fits keep full precision; files store them as 32-bit floats.
struct Image2D {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Image2D() = default;
    Image2D(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Image2D& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Image2D&) const = default;
};

inline bool is_finite(double v) { return std::isfinite(v); }

} // namespace respbin

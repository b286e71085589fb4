#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace scalp {

/// Half-open pixel rectangle [x1, x2) x [y1, y2).
struct BoundingBox {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }
    long area() const { return static_cast<long>(width()) * height(); }
    bool valid_in(std::size_t cols, std::size_t rows) const {
        return 0 <= x1 && x1 < x2 && x2 <= static_cast<int>(cols) && 0 <= y1 && y1 < y2 &&
               y2 <= static_cast<int>(rows);
    }
    bool contains(const BoundingBox& o) const {
        return x1 <= o.x1 && y1 <= o.y1 && o.x2 <= x2 && o.y2 <= y2;
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

std::string to_string(const BoundingBox& box);

/// 8-bit intensity grid, row-major (the scaled heatmap fed to box generation).
struct ScaledMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> values;

    std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    std::uint8_t& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

}  // namespace scalp

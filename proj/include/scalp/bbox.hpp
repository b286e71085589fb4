#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "scalp/box.hpp"

namespace scalp {

struct Mask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> cells;  ///< 0 or 1, row-major

    std::uint8_t at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
};

struct BoxParams {
    int threshold = 180;         ///< pixels strictly above become 1
    std::size_t candidates = 5;  ///< k
    double suppress_iou = 0.5;   ///< candidates overlapping a larger one this much are dropped

    void validate() const;
};

/// |a n b| / |a u b| over half-open pixel areas.
double iou(const BoundingBox& a, const BoundingBox& b);

Mask binarize(const ScaledMap& heatmap, int threshold = 180);

/// All-ones rectangles that cannot grow in any direction, found with one
/// histogram + monotonic-stack sweep per row. Order: area descending, then
/// (y1, x1, y2, x2) ascending.
std::vector<BoundingBox> maximal_rects(const Mask& mask);

/// Largest maximal rectangles after greedy overlap suppression, at most `k`.
std::vector<BoundingBox> candidate_rects(const Mask& mask, std::size_t k = 5, double suppress_iou = 0.5);

/// Grows all four edges by one pixel per step while the newly added ring
/// holds no more zeros than ones; the step that breaks this is undone.
BoundingBox expand_rect(const BoundingBox& rect, const Mask& mask);

double mean_intensity(const BoundingBox& box, const ScaledMap& heatmap);

/// Highest mean intensity; ties go to the larger area, then the smaller
/// (y1, x1). Empty input gives no box.
std::optional<BoundingBox> select_bbox(std::span<const BoundingBox> candidates, const ScaledMap& heatmap);

struct Detection {
    BoundingBox box;
    double score = 0.0;  ///< mean scaled intensity inside the box
};

/// binarize -> candidate_rects -> expand_rect -> select_bbox.
std::optional<Detection> generate(const ScaledMap& heatmap, const BoxParams& params = {});

}  // namespace scalp

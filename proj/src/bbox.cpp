#include "scalp/bbox.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <tuple>

namespace scalp {

void BoxParams::validate() const {
    if (threshold < 0 || threshold > 255) {
        throw std::invalid_argument("bbox: threshold must lie in [0, 255], got " + std::to_string(threshold));
    }
    if (candidates == 0) throw std::invalid_argument("bbox: candidate count must be positive");
    if (!(suppress_iou > 0.0 && suppress_iou <= 1.0)) {
        throw std::invalid_argument("bbox: suppression IoU must lie in (0, 1]");
    }
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const long iw = std::max(0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const long ih = std::max(0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const long inter = iw * ih;
    const long uni = a.area() + b.area() - inter;
    return uni <= 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask binarize(const ScaledMap& heatmap, int threshold) {
    Mask mask{heatmap.rows, heatmap.cols, std::vector<std::uint8_t>(heatmap.values.size(), 0)};
    for (std::size_t i = 0; i < heatmap.values.size(); ++i) mask.cells[i] = heatmap.values[i] > threshold ? 1 : 0;
    return mask;
}

std::vector<BoundingBox> maximal_rects(const Mask& mask) {
    const std::size_t rows = mask.rows, cols = mask.cols;
    std::vector<BoundingBox> rects;
    std::vector<int> height(cols + 1, 0);  // trailing sentinel stays 0
    // next_prefix[c] = ones in row r + 1 before column c, for the downward check
    std::vector<int> next_prefix(cols + 1, 0);
    struct Bar {
        int start;
        int height;
    };
    std::vector<Bar> stack;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) height[c] = mask.at(r, c) ? height[c] + 1 : 0;
        const bool has_next = r + 1 < rows;
        if (has_next) {
            for (std::size_t c = 0; c < cols; ++c) next_prefix[c + 1] = next_prefix[c] + mask.at(r + 1, c);
        }
        stack.clear();
        for (std::size_t c = 0; c <= cols; ++c) {
            const int h = height[c];
            int start = static_cast<int>(c);
            while (!stack.empty() && stack.back().height >= h) {
                const Bar bar = stack.back();
                stack.pop_back();
                start = bar.start;
                if (bar.height == h) continue;  // same bar extends to the right
                const int x1 = bar.start, x2 = static_cast<int>(c);
                const bool grows_down = has_next && next_prefix[x2] - next_prefix[x1] == x2 - x1;
                if (!grows_down) {
                    const int y2 = static_cast<int>(r) + 1;
                    rects.push_back({x1, y2 - bar.height, x2, y2});
                }
            }
            if (h > 0) stack.push_back({start, h});
        }
    }
    std::sort(rects.begin(), rects.end(), [](const BoundingBox& a, const BoundingBox& b) {
        if (a.area() != b.area()) return a.area() > b.area();
        return std::tie(a.y1, a.x1, a.y2, a.x2) < std::tie(b.y1, b.x1, b.y2, b.x2);
    });
    return rects;
}

std::vector<BoundingBox> candidate_rects(const Mask& mask, std::size_t k, double suppress_iou) {
    std::vector<BoundingBox> kept;
    for (const BoundingBox& r : maximal_rects(mask)) {
        if (kept.size() == k) break;
        const bool overlaps = std::any_of(kept.begin(), kept.end(),
                                          [&](const BoundingBox& o) { return iou(r, o) >= suppress_iou; });
        if (!overlaps) kept.push_back(r);
    }
    return kept;
}

BoundingBox expand_rect(const BoundingBox& rect, const Mask& mask) {
    if (!rect.valid_in(mask.cols, mask.rows)) {
        throw std::invalid_argument("expand_rect: rectangle " + to_string(rect) + " is outside the mask");
    }
    const int cols = static_cast<int>(mask.cols), rows = static_cast<int>(mask.rows);
    BoundingBox cur = rect;
    while (true) {
        const BoundingBox next{std::max(cur.x1 - 1, 0), std::max(cur.y1 - 1, 0), std::min(cur.x2 + 1, cols),
                               std::min(cur.y2 + 1, rows)};
        if (next == cur) break;
        long ones = 0, zeros = 0;
        for (int y = next.y1; y < next.y2; ++y) {
            for (int x = next.x1; x < next.x2; ++x) {
                if (y >= cur.y1 && y < cur.y2 && x >= cur.x1 && x < cur.x2) continue;
                if (mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) ++ones;
                else ++zeros;
            }
        }
        if (ones == 0 || zeros > ones) break;
        cur = next;
    }
    return cur;
}

namespace {

long intensity_sum(const BoundingBox& box, const ScaledMap& heatmap) {
    long sum = 0;
    for (int y = box.y1; y < box.y2; ++y) {
        for (int x = box.x1; x < box.x2; ++x) sum += heatmap.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    }
    return sum;
}

}  // namespace

double mean_intensity(const BoundingBox& box, const ScaledMap& heatmap) {
    if (!box.valid_in(heatmap.cols, heatmap.rows)) {
        throw std::invalid_argument("mean_intensity: box " + to_string(box) + " is outside the heatmap");
    }
    return static_cast<double>(intensity_sum(box, heatmap)) / static_cast<double>(box.area());
}

std::optional<BoundingBox> select_bbox(std::span<const BoundingBox> candidates, const ScaledMap& heatmap) {
    std::optional<BoundingBox> best;
    long best_sum = 0;
    for (const BoundingBox& c : candidates) {
        if (!c.valid_in(heatmap.cols, heatmap.rows)) {
            throw std::invalid_argument("select_bbox: box " + to_string(c) + " is outside the heatmap");
        }
        const long sum = intensity_sum(c, heatmap);
        if (!best) {
            best = c;
            best_sum = sum;
            continue;
        }
        // Compare means exactly: sum / area against best_sum / best_area.
        const long lhs = sum * best->area(), rhs = best_sum * c.area();
        bool better = lhs > rhs;
        if (lhs == rhs) {
            if (c.area() != best->area()) better = c.area() > best->area();
            else better = std::tie(c.y1, c.x1) < std::tie(best->y1, best->x1);
        }
        if (better) {
            best = c;
            best_sum = sum;
        }
    }
    return best;
}

std::optional<Detection> generate(const ScaledMap& heatmap, const BoxParams& params) {
    const Mask mask = binarize(heatmap, params.threshold);
    std::vector<BoundingBox> rects = candidate_rects(mask, params.candidates, params.suppress_iou);
    for (BoundingBox& r : rects) r = expand_rect(r, mask);
    const std::optional<BoundingBox> box = select_bbox(rects, heatmap);
    if (!box) return std::nullopt;
    return Detection{*box, mean_intensity(*box, heatmap)};
}

}  // namespace scalp

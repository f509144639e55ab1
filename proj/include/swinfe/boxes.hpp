#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "swinfe/errors.hpp"

namespace swinfe {

/// Axis-aligned rectangle in pixel coordinates, continuous extent (x2 - x1 is the width).
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
    bool valid() const {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 < x2 && y1 < y2;
    }
    bool operator==(const Box&) const = default;
};

struct Detection {
    Box box;
    double score = 0;
};

inline double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Upper bound on the log-size deltas before exponentiation (log(1000/16)).
inline constexpr double kMaxLogDelta = 4.135166556742356;

/// (tx, ty, tw, th) of `gt` relative to `anchor`.
inline std::array<double, 4> encode_box(const Box& gt, const Box& anchor) {
    const double wa = anchor.width(), ha = anchor.height();
    return {(gt.cx() - anchor.cx()) / wa, (gt.cy() - anchor.cy()) / ha, std::log(gt.width() / wa),
            std::log(gt.height() / ha)};
}

/// Inverse of encode_box, without clipping.
inline Box decode_box(const Box& anchor, const std::array<double, 4>& d) {
    for (double v : d) {
        if (!std::isfinite(v)) throw NumericError("decode_box: non-finite delta");
    }
    const double wa = anchor.width(), ha = anchor.height();
    const double cx = anchor.cx() + d[0] * wa;
    const double cy = anchor.cy() + d[1] * ha;
    const double w = wa * std::exp(std::min(d[2], kMaxLogDelta));
    const double h = ha * std::exp(std::min(d[3], kMaxLogDelta));
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline Box clip_box(const Box& b, double width, double height) {
    return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
            std::clamp(b.y2, 0.0, height)};
}

/// Greedy non-maximum suppression. Candidates are visited by descending score
/// (ties: earlier index first); a candidate is dropped when its IoU with an
/// already kept box reaches `iou_thresh`.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<Detection> kept;
    for (std::size_t i : order) {
        bool keep = true;
        for (const auto& k : kept) {
            if (iou(k.box, dets[i].box) >= iou_thresh) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(dets[i]);
    }
    return kept;
}

}  // namespace swinfe

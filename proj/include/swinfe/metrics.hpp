#pragma once

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "swinfe/boxes.hpp"

// Single-class detection evaluation: greedy IoU matching, precision/recall
// along the score ranking, and AP as the exact area under the monotone
// precision envelope (all-points interpolation).

namespace swinfe {

struct RankedFlag {
    double score = 0;
    std::size_t image = 0;
    bool true_positive = false;
};

/// Ranks all detections by descending score (ties: earlier image, then
/// earlier position) and flags each as TP when its best-overlapping
/// still-unmatched ground truth in the same image has IoU >= iou_thresh.
inline std::vector<RankedFlag> match_detections(const std::vector<std::vector<Detection>>& dets,
                                                const std::vector<std::vector<Box>>& gts, double iou_thresh = 0.5) {
    if (dets.size() != gts.size()) throw ShapeError("match_detections: detection and ground-truth image counts differ");
    struct Ref {
        double score;
        std::size_t image, index;
    };
    std::vector<Ref> order;
    for (std::size_t im = 0; im < dets.size(); ++im) {
        for (std::size_t k = 0; k < dets[im].size(); ++k) order.push_back({dets[im][k].score, im, k});
    }
    std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });
    std::vector<std::vector<bool>> used(gts.size());
    for (std::size_t im = 0; im < gts.size(); ++im) used[im].assign(gts[im].size(), false);
    std::vector<RankedFlag> flags;
    flags.reserve(order.size());
    for (const auto& r : order) {
        const Box& b = dets[r.image][r.index].box;
        double best = -1;
        std::size_t arg = 0;
        for (std::size_t g = 0; g < gts[r.image].size(); ++g) {
            if (used[r.image][g]) continue;
            const double v = iou(b, gts[r.image][g]);
            if (v > best) {
                best = v;
                arg = g;
            }
        }
        const bool tp = best >= iou_thresh;
        if (tp) used[r.image][arg] = true;
        flags.push_back({r.score, r.image, tp});
    }
    return flags;
}

struct PrCurve {
    std::vector<double> precision;
    std::vector<double> recall;
};

/// precision_k = TP_k / k, recall_k = TP_k / n_gt at each rank k (1-based).
inline PrCurve pr_curve(const std::vector<bool>& tp_flags, std::size_t n_gt) {
    PrCurve c;
    if (tp_flags.empty()) return c;
    if (n_gt == 0) throw ContractError("pr_curve: detections without ground truth, AP is undefined");
    std::size_t tp = 0;
    for (std::size_t k = 0; k < tp_flags.size(); ++k) {
        if (tp_flags[k]) ++tp;
        c.precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
        c.recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    }
    return c;
}

/// Exact area under the right-to-left running-max precision envelope.
inline double average_precision(const std::vector<double>& precision, const std::vector<double>& recall) {
    if (precision.size() != recall.size()) throw ShapeError("average_precision: arrays differ in length");
    if (precision.empty()) return 0.0;
    std::vector<double> env(precision);
    for (std::size_t k = env.size() - 1; k-- > 0;) env[k] = std::max(env[k], env[k + 1]);
    double ap = 0.0;
    double prev_r = 0.0;
    for (std::size_t k = 0; k < env.size(); ++k) {
        if (recall[k] < prev_r) throw ContractError("average_precision: recall must be non-decreasing");
        ap += (recall[k] - prev_r) * env[k];
        prev_r = recall[k];
    }
    return ap;
}

struct EvalResult {
    double ap = 0;
    std::vector<double> precision, recall;
    std::size_t true_positives = 0, false_positives = 0, ground_truths = 0;
};

inline EvalResult evaluate(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Box>>& gts,
                           double iou_thresh = 0.5) {
    EvalResult r;
    for (const auto& g : gts) r.ground_truths += g.size();
    const auto flags = match_detections(dets, gts, iou_thresh);
    std::vector<bool> tp;
    tp.reserve(flags.size());
    for (const auto& f : flags) {
        tp.push_back(f.true_positive);
        (f.true_positive ? r.true_positives : r.false_positives) += 1;
    }
    if (r.ground_truths == 0) {
        if (!tp.empty()) throw ContractError("evaluate: detections present but no ground truth; AP undefined");
        return r;
    }
    auto c = pr_curve(tp, r.ground_truths);
    r.ap = average_precision(c.precision, c.recall);
    r.precision = std::move(c.precision);
    r.recall = std::move(c.recall);
    return r;
}

struct ReportRow {
    std::string backbone;
    std::string neck;
    double ap = 0;  // fraction in [0,1]
};

/// Backbone | Neck | AP(%) table.
inline std::string format_table(const std::vector<ReportRow>& rows) {
    std::size_t wb = 8, wn = 4;
    for (const auto& r : rows) {
        wb = std::max(wb, r.backbone.size());
        wn = std::max(wn, r.neck.size());
    }
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(wb)) << "Backbone" << " | " << std::setw(static_cast<int>(wn))
       << "Neck" << " | AP(%)\n";
    os << std::string(wb, '-') << "-+-" << std::string(wn, '-') << "-+-------\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(wb)) << r.backbone << " | " << std::setw(static_cast<int>(wn))
           << r.neck << " | " << std::fixed << std::setprecision(2) << 100.0 * r.ap << '\n';
        os.unsetf(std::ios::fixed);
    }
    return os.str();
}

}  // namespace swinfe

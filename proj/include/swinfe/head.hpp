#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "swinfe/boxes.hpp"
#include "swinfe/neck.hpp"
#include "swinfe/ops.hpp"
#include "swinfe/params.hpp"
#include "swinfe/random.hpp"

// Anchor-based region proposal head used directly as a single-class detector.

namespace swinfe {

struct HeadConfig {
    std::vector<double> scales{1.0};
    std::vector<double> ratios{0.5, 1.0, 2.0};
    double nms_iou = 0.5;
    double score_thresh = 0.05;
    std::size_t pre_nms_top = 300;
    std::size_t samples_per_image = 256;
    double positive_fraction = 0.5;
    double positive_iou = 0.7;
    double negative_iou = 0.3;
    double smooth_l1_beta = 1.0 / 9.0;

    std::size_t anchors_per_cell() const { return scales.size() * ratios.size(); }

    void validate() const {
        if (scales.empty() || ratios.empty()) throw ConfigError("head: scales and ratios must be non-empty");
        for (double v : scales) {
            if (!(v > 0)) throw ConfigError("head.scales entries must be positive");
        }
        for (double v : ratios) {
            if (!(v > 0)) throw ConfigError("head.ratios entries must be positive");
        }
        if (!(nms_iou > 0 && nms_iou < 1)) throw ConfigError("head.nms_iou must be in (0,1)");
        if (!(negative_iou <= positive_iou)) throw ConfigError("head: negative_iou must not exceed positive_iou");
        if (samples_per_image == 0) throw ConfigError("head.samples_per_image must be positive");
        if (!(positive_fraction > 0 && positive_fraction <= 1)) {
            throw ConfigError("head.positive_fraction must be in (0,1]");
        }
    }
};

struct Anchor {
    double cx = 0, cy = 0, width = 0, height = 0;
    std::size_t level = 0;

    Box box() const { return {cx - 0.5 * width, cy - 0.5 * height, cx + 0.5 * width, cy + 0.5 * height}; }
};

struct LevelShape {
    std::size_t height = 0, width = 0;
};

/// Anchors per level, ordered row-major over cells, then scale, then ratio.
/// Stride of a level is image_size / level side; each anchor has area
/// (scale * stride)^2 and height / width == ratio.
inline std::vector<std::vector<Anchor>> generate_anchors(const std::vector<LevelShape>& levels, std::size_t image_size,
                                                         const std::vector<double>& scales,
                                                         const std::vector<double>& ratios) {
    if (scales.empty() || ratios.empty()) throw ConfigError("generate_anchors: empty scales or ratios");
    std::vector<std::vector<Anchor>> out;
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const auto [H, W] = levels[l];
        if (H == 0 || W == 0 || image_size % H != 0) {
            throw ShapeError("generate_anchors: level " + std::to_string(l) + " side " + std::to_string(H) +
                             " does not divide image size " + std::to_string(image_size));
        }
        const double stride = static_cast<double>(image_size) / static_cast<double>(H);
        std::vector<Anchor> level;
        level.reserve(H * W * scales.size() * ratios.size());
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                for (double s : scales) {
                    for (double r : ratios) {
                        const double base = s * stride;
                        level.push_back({(static_cast<double>(x) + 0.5) * stride, (static_cast<double>(y) + 0.5) * stride,
                                         base / std::sqrt(r), base * std::sqrt(r), l});
                    }
                }
            }
        }
        out.push_back(std::move(level));
    }
    return out;
}

inline std::vector<Anchor> flatten_anchors(const std::vector<std::vector<Anchor>>& per_level) {
    std::vector<Anchor> all;
    for (const auto& l : per_level) all.insert(all.end(), l.begin(), l.end());
    return all;
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
struct HeadParams {
    ConvParams<T> conv;  // shared 3x3
    ConvParams<T> cls;   // 1x1, A outputs
    ConvParams<T> reg;   // 1x1, 4A outputs
    std::size_t anchors_per_cell = 0;
};

/// The objectness and regression 1x1 convs start at zero so every anchor
/// begins with score 0.5 and identity deltas.
template <typename T>
HeadParams<T> make_head(ParamSet<T>& ps, std::size_t channels, std::size_t anchors_per_cell, Rng& rng,
                        const std::string& prefix = "head") {
    HeadParams<T> p;
    p.anchors_per_cell = anchors_per_cell;
    p.conv = make_conv(ps, prefix + ".conv", channels, channels, 3, rng);
    p.cls.weight = ps.add(prefix + ".cls.weight", {anchors_per_cell, channels, 1, 1});
    p.cls.bias = ps.add(prefix + ".cls.bias", {anchors_per_cell});
    p.reg.weight = ps.add(prefix + ".reg.weight", {4 * anchors_per_cell, channels, 1, 1});
    p.reg.bias = ps.add(prefix + ".reg.bias", {4 * anchors_per_cell});
    return p;
}

template <typename T>
struct HeadOutput {
    std::array<Tensor<T>, 4> logits;  // [B, A, H, W]
    std::array<Tensor<T>, 4> deltas;  // [B, 4A, H, W]
};

template <typename T>
HeadOutput<T> head_forward(Tape<T>& tape, const Pyramid<T>& pyr, const HeadParams<T>& p) {
    HeadOutput<T> out;
    for (std::size_t l = 0; l < 4; ++l) {
        auto h = relu(tape, conv2d(tape, pyr[l], p.conv.weight, p.conv.bias, 1, 1, "head"));
        out.logits[l] = conv2d(tape, h, p.cls.weight, p.cls.bias, 1, 0, "head");
        out.deltas[l] = conv2d(tape, h, p.reg.weight, p.reg.bias, 1, 0, "head");
    }
    return out;
}

/// Per-image flattening in anchor order: logits [B, total], deltas [B, total*4].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> flatten_head(Tape<T>& tape, const HeadOutput<T>& h, std::size_t anchors_per_cell) {
    std::vector<Tensor<T>> ls, ds;
    const std::size_t A = anchors_per_cell;
    for (std::size_t l = 0; l < 4; ++l) {
        const auto& lg = h.logits[l];
        const std::size_t B = lg.dim(0), H = lg.dim(2), W = lg.dim(3);
        ls.push_back(reshape(tape, permute(tape, lg, {0, 2, 3, 1}), {B, H * W * A}));
        // [B, A*4, H, W] -> [B, H, W, A*4]: anchor-major, then the 4 coordinates
        ds.push_back(reshape(tape, permute(tape, h.deltas[l], {0, 2, 3, 1}), {B, H * W * A * 4}));
    }
    return {concat(tape, ls, 1), concat(tape, ds, 1)};
}

// ---------------------------------------------------------------------------
// Targets and loss

enum class AnchorLabel : std::int8_t { negative = 0, positive = 1, ignore = -1 };

struct Assignment {
    std::vector<AnchorLabel> labels;
    std::vector<int> matched_gt;  // -1 when none
};

/// Positive: IoU >= positive_iou with some gt, or the (lowest-index) best
/// anchor of some gt with positive overlap. Negative: max IoU < negative_iou.
inline Assignment assign_targets(const std::vector<Anchor>& anchors, const std::vector<Box>& gts,
                                 double positive_iou = 0.7, double negative_iou = 0.3) {
    Assignment a;
    a.labels.assign(anchors.size(), AnchorLabel::negative);
    a.matched_gt.assign(anchors.size(), -1);
    if (gts.empty()) return a;
    std::vector<double> best_gt_iou(gts.size(), 0.0);
    std::vector<std::size_t> best_anchor(gts.size(), anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const Box ab = anchors[i].box();
        double best = 0.0;
        int arg = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(ab, gts[g]);
            if (v > best) {
                best = v;
                arg = static_cast<int>(g);
            }
            if (v > best_gt_iou[g]) {
                best_gt_iou[g] = v;
                best_anchor[g] = i;
            }
        }
        if (best >= positive_iou) {
            a.labels[i] = AnchorLabel::positive;
            a.matched_gt[i] = arg;
        } else if (best >= negative_iou) {
            a.labels[i] = AnchorLabel::ignore;
            a.matched_gt[i] = arg;
        }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
        if (best_anchor[g] == anchors.size()) continue;
        const std::size_t i = best_anchor[g];
        if (a.labels[i] != AnchorLabel::positive) a.matched_gt[i] = static_cast<int>(g);
        a.labels[i] = AnchorLabel::positive;
    }
    return a;
}

/// Random subset of at most `per_image` anchors with at most
/// positive_fraction positives; returns per-anchor membership.
inline std::vector<bool> sample_anchors(const Assignment& a, std::size_t per_image, double positive_fraction,
                                        Rng& rng) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        if (a.labels[i] == AnchorLabel::positive) pos.push_back(i);
        if (a.labels[i] == AnchorLabel::negative) neg.push_back(i);
    }
    auto take = [&rng](std::vector<std::size_t>& v, std::size_t n) {
        n = std::min(n, v.size());
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<long>(i), static_cast<long>(v.size() - 1)));
            std::swap(v[i], v[j]);
        }
        v.resize(n);
    };
    const auto max_pos = static_cast<std::size_t>(std::floor(static_cast<double>(per_image) * positive_fraction));
    take(pos, max_pos);
    take(neg, per_image - pos.size());
    std::vector<bool> chosen(a.labels.size(), false);
    for (auto i : pos) chosen[i] = true;
    for (auto i : neg) chosen[i] = true;
    return chosen;
}

/// Per-image training targets for the loss.
struct ImageTargets {
    Assignment assignment;
    std::vector<bool> sampled;
    std::vector<std::array<double, 4>> regression;  // encoded gt per anchor (positives only meaningful)
};

inline ImageTargets build_targets(const std::vector<Anchor>& anchors, const std::vector<Box>& gts,
                                  const HeadConfig& cfg, Rng& rng) {
    ImageTargets t;
    t.assignment = assign_targets(anchors, gts, cfg.positive_iou, cfg.negative_iou);
    t.sampled = sample_anchors(t.assignment, cfg.samples_per_image, cfg.positive_fraction, rng);
    t.regression.assign(anchors.size(), {0, 0, 0, 0});
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (t.assignment.labels[i] == AnchorLabel::positive) {
            t.regression[i] = encode_box(gts[static_cast<std::size_t>(t.assignment.matched_gt[i])], anchors[i].box());
        }
    }
    return t;
}

template <typename T>
struct RpnLoss {
    Tensor<T> total;
    double cls = 0;
    double reg = 0;
    std::size_t sampled = 0;
    std::size_t positives = 0;
};

/// Binary cross-entropy over the sampled anchors (mean over the sample count)
/// plus smooth-L1 over positive anchors (summed over coordinates, mean over
/// the positive count). logits [B, A_total], deltas [B, A_total*4].
template <typename T>
RpnLoss<T> rpn_loss(Tape<T>& tape, const Tensor<T>& logits, const Tensor<T>& deltas,
                    const std::vector<ImageTargets>& targets, double beta = 1.0 / 9.0) {
    const std::size_t B = targets.size();
    if (logits.rank() != 2 || logits.dim(0) != B) {
        throw ShapeError("rpn_loss: logits " + shape_str(logits.shape()) + " for " + std::to_string(B) + " images");
    }
    const std::size_t N = logits.dim(1);
    if (deltas.shape() != Shape{B, N * 4}) throw ShapeError("rpn_loss: deltas " + shape_str(deltas.shape()));
    std::vector<T> y(B * N, T(0)), wc(B * N, T(0)), ty(B * N * 4, T(0)), wr(B * N * 4, T(0));
    RpnLoss<T> out;
    for (std::size_t b = 0; b < B; ++b) {
        const auto& t = targets[b];
        if (t.sampled.size() != N) throw ShapeError("rpn_loss: targets built for a different anchor set");
        for (std::size_t i = 0; i < N; ++i) {
            const bool pos = t.assignment.labels[i] == AnchorLabel::positive;
            if (t.sampled[i]) {
                wc[b * N + i] = T(1);
                y[b * N + i] = pos ? T(1) : T(0);
                ++out.sampled;
            }
            if (pos && t.sampled[i]) {
                ++out.positives;
                for (std::size_t c = 0; c < 4; ++c) {
                    ty[(b * N + i) * 4 + c] = static_cast<T>(t.regression[i][c]);
                    wr[(b * N + i) * 4 + c] = T(1);
                }
            }
        }
    }
    auto cls = bce_with_logits_sum(tape, logits, std::move(y), std::move(wc));
    if (out.sampled > 0) cls = scale(tape, cls, T(1) / static_cast<T>(out.sampled));
    auto reg = smooth_l1_sum(tape, deltas, std::move(ty), std::move(wr), static_cast<T>(beta));
    if (out.positives > 0) reg = scale(tape, reg, T(1) / static_cast<T>(out.positives));
    out.cls = static_cast<double>(cls.item());
    out.reg = static_cast<double>(reg.item());
    out.total = add(tape, cls, reg);
    return out;
}

// ---------------------------------------------------------------------------
// Inference

/// Sigmoid scores, score threshold, top-k by score, decode + clip, drop
/// degenerate boxes, NMS. `logits` holds one image's N anchors, `deltas` 4N.
inline std::vector<Detection> postprocess(std::span<const double> logits, std::span<const double> deltas,
                                          const std::vector<Anchor>& anchors, std::size_t image_size,
                                          const HeadConfig& cfg) {
    if (logits.size() != anchors.size() || deltas.size() != 4 * anchors.size()) {
        throw ShapeError("postprocess: prediction count does not match anchors");
    }
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-logits[i]));
        if (s >= cfg.score_thresh) cand.emplace_back(s, i);
    }
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (cand.size() > cfg.pre_nms_top) cand.resize(cfg.pre_nms_top);
    const double side = static_cast<double>(image_size);
    std::vector<Detection> dets;
    for (const auto& [s, i] : cand) {
        const std::array<double, 4> d{deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2], deltas[4 * i + 3]};
        const Box b = clip_box(decode_box(anchors[i].box(), d), side, side);
        if (b.width() < 1e-3 || b.height() < 1e-3) continue;
        dets.push_back({b, s});
    }
    return nms(dets, cfg.nms_iou);
}

}  // namespace swinfe

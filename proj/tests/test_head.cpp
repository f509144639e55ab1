#include <gtest/gtest.h>

#include <cmath>

#include "swinfe/head.hpp"

using namespace swinfe;

namespace {

double ref_iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

// Repeatedly take the best remaining box and discard everything it suppresses.
std::vector<Detection> ref_nms(std::vector<Detection> pool, double thresh) {
    std::vector<Detection> kept;
    while (!pool.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pool.size(); ++i) {
            if (pool[i].score > pool[best].score) best = i;
        }
        const Detection top = pool[best];
        kept.push_back(top);
        std::vector<Detection> rest;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (i != best && ref_iou(top.box, pool[i].box) < thresh) rest.push_back(pool[i]);
        }
        pool = std::move(rest);
    }
    return kept;
}

double uniform_real(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

Box random_box(Rng& rng, double side) {
    const double x = uniform_real(rng, 0, side * 0.8), y = uniform_real(rng, 0, side * 0.8);
    return {x, y, x + uniform_real(rng, 2, side * 0.3), y + uniform_real(rng, 2, side * 0.3)};
}

}  // namespace

TEST(Anchors, CountsCentresAndShapes) {
    auto one = flatten_anchors(generate_anchors({{2, 2}}, 8, {1.0}, {1.0}));
    ASSERT_EQ(one.size(), 4u);
    EXPECT_EQ(one[1].cx, 6.0);
    EXPECT_EQ(one[1].cy, 2.0);
    auto grid = flatten_anchors(generate_anchors({{4, 4}}, 16, {1.0}, {1.0}));
    ASSERT_EQ(grid.size(), 16u);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_EQ(grid[i].cx, 2.0 + 4.0 * static_cast<double>(i % 4));
        EXPECT_EQ(grid[i].cy, 2.0 + 4.0 * static_cast<double>(i / 4));
        EXPECT_EQ(grid[i].width, 4.0);
        EXPECT_EQ(grid[i].height, 4.0);
    }
    auto r = flatten_anchors(generate_anchors({{1, 1}}, 8, {1.0}, {1.0, 2.0}));
    EXPECT_NEAR(r[1].height / r[1].width, 2.0, 1e-6);
    EXPECT_NEAR(r[1].height * r[1].width, r[0].height * r[0].width, 1e-9);
    auto pyr = generate_anchors({{16, 16}, {8, 8}, {4, 4}, {2, 2}}, 64, {1.5, 2.5}, {0.5, 1.0, 2.0});
    EXPECT_EQ(flatten_anchors(pyr).size(), (256u + 64 + 16 + 4) * 6);
    EXPECT_EQ(pyr[3][0].level, 3u);
    EXPECT_THROW(generate_anchors({{3, 3}}, 8, {1.0}, {1.0}), ShapeError);
}

TEST(BoxCoding, IdentityDoublingAndRoundTrip) {
    const Box a{10, 20, 30, 60};
    EXPECT_EQ(decode_box(a, {0, 0, 0, 0}), a);
    const Box d = decode_box(a, {0, 0, std::log(2.0), std::log(2.0)});
    EXPECT_NEAR(d.width(), 40, 1e-12);
    EXPECT_NEAR(d.height(), 80, 1e-12);
    EXPECT_NEAR(d.cx(), a.cx(), 1e-12);
    EXPECT_NEAR(d.cy(), a.cy(), 1e-12);
    auto rng = make_rng({31});
    for (int i = 0; i < 200; ++i) {
        const Box gt = random_box(rng, 64), anchor = random_box(rng, 64);
        const Box back = decode_box(anchor, encode_box(gt, anchor));
        EXPECT_NEAR(back.x1, gt.x1, 1e-4);
        EXPECT_NEAR(back.y1, gt.y1, 1e-4);
        EXPECT_NEAR(back.x2, gt.x2, 1e-4);
        EXPECT_NEAR(back.y2, gt.y2, 1e-4);
    }
    EXPECT_THROW(decode_box(a, {0, NAN, 0, 0}), NumericError);
    EXPECT_THROW(decode_box(a, {0, 0, INFINITY, 0}), NumericError);
    EXPECT_TRUE(std::isfinite(decode_box(a, {0, 0, 50, 50}).x2));  // clamped log size
}

TEST(Assignment, IdentityEmptyAndThresholds) {
    auto anchors = flatten_anchors(generate_anchors({{4, 4}}, 16, {1.0}, {1.0}));
    auto a = assign_targets(anchors, {anchors[5].box()});
    EXPECT_EQ(a.labels[5], AnchorLabel::positive);
    EXPECT_EQ(a.matched_gt[5], 0);
    auto e = assign_targets(anchors, {});
    for (auto l : e.labels) EXPECT_EQ(l, AnchorLabel::negative);
    // half-overlapping gt: IoU 1/3 -> ignore unless argmax
    const Box b = anchors[5].box();
    auto h = assign_targets(anchors, {{b.x1 + 2, b.y1, b.x2 + 2, b.y2}});
    std::size_t pos = 0;
    for (auto l : h.labels) pos += l == AnchorLabel::positive;
    EXPECT_EQ(pos, 1u);
    EXPECT_EQ(h.labels[5], AnchorLabel::positive);  // lowest index among the tied best
    EXPECT_EQ(h.labels[6], AnchorLabel::ignore);
}

TEST(Assignment, EveryOverlappedGtGetsAPositiveOnCraftedGrid) {
    // 8x8 grid of 4px anchors; sweep gts whose best IoU is well below 0.7
    auto anchors = flatten_anchors(generate_anchors({{8, 8}}, 32, {1.0}, {1.0}));
    std::size_t cases = 0;
    for (double x = 0; x + 6 <= 32; x += 0.5) {
        for (double y = 0; y + 3 <= 32; y += 1.5) {
            const Box gt{x, y, x + 6, y + 3};
            double best = 0;
            for (const auto& an : anchors) best = std::max(best, ref_iou(an.box(), gt));
            ASSERT_LT(best, 0.7);
            auto a = assign_targets(anchors, {gt});
            std::size_t pos = 0;
            for (std::size_t i = 0; i < anchors.size(); ++i) {
                if (a.labels[i] == AnchorLabel::positive) {
                    ++pos;
                    EXPECT_DOUBLE_EQ(ref_iou(anchors[i].box(), gt), best);
                }
            }
            EXPECT_EQ(pos, 1u);
            ++cases;
        }
    }
    EXPECT_GT(cases, 500u);
    // best IoU exactly 0.5
    const Box b = anchors[9].box();
    auto a = assign_targets(anchors, {{b.x1, b.y1, b.x2, b.y1 + 2}});
    EXPECT_EQ(a.labels[9], AnchorLabel::positive);
}

TEST(Sampling, PositiveFractionCapAndBudget) {
    Assignment a;
    for (int i = 0; i < 300; ++i) a.labels.push_back(AnchorLabel::positive);
    for (int i = 0; i < 500; ++i) a.labels.push_back(AnchorLabel::negative);
    for (int i = 0; i < 50; ++i) a.labels.push_back(AnchorLabel::ignore);
    auto rng = make_rng({32});
    auto s = sample_anchors(a, 256, 0.5, rng);
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s[i]) continue;
        ASSERT_NE(a.labels[i], AnchorLabel::ignore);
        (a.labels[i] == AnchorLabel::positive ? pos : neg)++;
    }
    EXPECT_EQ(pos, 128u);
    EXPECT_EQ(neg, 128u);
    Assignment few;
    few.labels.assign(3, AnchorLabel::positive);
    few.labels.resize(400, AnchorLabel::negative);
    auto s2 = sample_anchors(few, 256, 0.5, rng);
    EXPECT_EQ(std::count(s2.begin(), s2.end(), true), 256);
    EXPECT_TRUE(s2[0] && s2[1] && s2[2]);
}

TEST(RpnLoss, IndifferentLogitsAndPerfectPredictions) {
    auto anchors = flatten_anchors(generate_anchors({{4, 4}}, 16, {1.0}, {1.0}));
    const Box gt{3, 3, 8, 9};
    HeadConfig cfg;
    cfg.samples_per_image = 16;
    auto rng = make_rng({33});
    std::vector<ImageTargets> t{build_targets(anchors, {gt}, cfg, rng)};
    const std::size_t N = anchors.size();
    Tape<double> tape;
    Tensor<double> logits(Shape{1, N}, 0.0, true), deltas(Shape{1, 4 * N}, 0.0, true);
    auto l0 = rpn_loss(tape, logits, deltas, t);
    EXPECT_NEAR(l0.cls, std::log(2.0), 1e-12);
    EXPECT_GT(l0.reg, 0.0);

    Tensor<double> good_l(Shape{1, N}), good_d(Shape{1, 4 * N});
    for (std::size_t i = 0; i < N; ++i) {
        const bool pos = t[0].assignment.labels[i] == AnchorLabel::positive;
        good_l.mutable_data()[i] = pos ? 40.0 : -40.0;
        for (std::size_t c = 0; c < 4; ++c) good_d.mutable_data()[4 * i + c] = t[0].regression[i][c];
    }
    auto l1 = rpn_loss(tape, good_l, good_d, t);
    EXPECT_LT(l1.cls, 1e-15);
    EXPECT_EQ(l1.reg, 0.0);
    EXPECT_THROW(rpn_loss(tape, Tensor<double>(Shape{1, N + 1}), good_d, t), ShapeError);
}

TEST(RpnLoss, SmoothL1ContinuityAtBeta) {
    const double beta = 1.0 / 9.0;
    Tape<double> tape;
    Tensor<double> x(Shape{1, 4}, std::vector<double>{beta, -beta, 0, 0});
    auto at = smooth_l1_sum(tape, x, {0, 0, 0, 0}, {1, 0, 0, 0}, beta);
    EXPECT_NEAR(at.item(), beta / 2, 1e-15);
    auto below = smooth_l1_sum(tape, x, {1e-9, 0, 0, 0}, {1, 0, 0, 0}, beta);
    EXPECT_NEAR(below.item(), beta / 2, 1e-9);
}

TEST(HeadNetwork, ChannelsAndZeroInitScores) {
    ParamSet<double> ps;
    auto rng = make_rng({34});
    auto p = make_head(ps, 6, 3, rng);
    Pyramid<double> pyr;
    for (std::size_t l = 0; l < 4; ++l) {
        pyr[l] = Tensor<double>(Shape{2, 6, std::size_t{8} >> l, std::size_t{8} >> l});
        fill_uniform(pyr[l].mutable_data(), -1, 1, rng);
    }
    Tape<double> tape(false);
    auto out = head_forward(tape, pyr, p);
    EXPECT_EQ(out.logits[0].shape(), (Shape{2, 3, 8, 8}));
    EXPECT_EQ(out.deltas[2].shape(), (Shape{2, 12, 2, 2}));
    auto [logits, deltas] = flatten_head(tape, out, 3);
    EXPECT_EQ(logits.shape(), (Shape{2, 3 * (64 + 16 + 4 + 1)}));
    EXPECT_EQ(deltas.shape(), (Shape{2, 12 * (64 + 16 + 4 + 1)}));
    for (double v : logits.data()) EXPECT_EQ(v, 0.0);
    for (double v : deltas.data()) EXPECT_EQ(v, 0.0);
}

TEST(HeadNetwork, FlattenOrderMatchesAnchorOrder) {
    // a logit placed at level 1, cell (y=1, x=0), anchor slot 2 lands at the matching anchor index
    HeadOutput<double> h;
    for (std::size_t l = 0; l < 4; ++l) {
        const std::size_t s = std::size_t{8} >> l;
        h.logits[l] = Tensor<double>(Shape{1, 3, s, s});
        h.deltas[l] = Tensor<double>(Shape{1, 12, s, s});
    }
    h.logits[1].mutable_data()[(2 * 4 + 1) * 4 + 0] = 7.0;
    h.deltas[1].mutable_data()[((4 * 2 + 3) * 4 + 1) * 4 + 0] = 5.0;  // th of slot 2
    Tape<double> tape(false);
    auto [logits, deltas] = flatten_head(tape, h, 3);
    const auto anchors = generate_anchors({{8, 8}, {4, 4}, {2, 2}, {1, 1}}, 32, {1.0}, {0.5, 1.0, 2.0});
    const std::size_t idx = anchors[0].size() + (1 * 4 + 0) * 3 + 2;
    EXPECT_EQ(logits[idx], 7.0);
    EXPECT_EQ(deltas[4 * idx + 3], 5.0);
    const auto all = flatten_anchors(anchors);
    EXPECT_EQ(all[idx].level, 1u);
    EXPECT_EQ(all[idx].cx, 4.0);
    EXPECT_EQ(all[idx].cy, 12.0);
}

TEST(Nms, HandCases) {
    auto kept = nms({{{0, 0, 10, 10}, 0.9}, {{20, 20, 30, 30}, 0.8}}, 0.5);
    EXPECT_EQ(kept.size(), 2u);
    auto dup = nms({{{0, 0, 10, 10}, 0.8}, {{0, 0, 10, 10}, 0.9}}, 0.5);
    ASSERT_EQ(dup.size(), 1u);
    EXPECT_EQ(dup[0].score, 0.9);
}

TEST(Nms, MatchesRepeatedArgmaxOracle) {
    auto rng = make_rng({35});
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Detection> dets;
        for (int i = 0; i < 20; ++i) dets.push_back({random_box(rng, 40), uniform_real(rng, 0, 1)});
        for (double t : {0.3, 0.5, 0.7}) {
            auto got = nms(dets, t), ref = ref_nms(dets, t);
            ASSERT_EQ(got.size(), ref.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                EXPECT_EQ(got[i].box, ref[i].box);
                EXPECT_EQ(got[i].score, ref[i].score);
                if (i) {
                    EXPECT_LE(got[i].score, got[i - 1].score);
                }
                for (std::size_t j = 0; j < i; ++j) EXPECT_LT(ref_iou(got[i].box, got[j].box), t);
            }
        }
    }
}

TEST(Postprocess, ThresholdClipAndNms) {
    auto anchors = flatten_anchors(generate_anchors({{2, 2}}, 16, {1.0}, {1.0}));
    std::vector<double> logits{3.0, -10.0, 2.0, 0.0}, deltas(16, 0.0);
    deltas[0] = -0.25;  // shift the first 8px anchor 2px left, past the border
    HeadConfig cfg;
    auto dets = postprocess(logits, deltas, anchors, 16, cfg);
    ASSERT_EQ(dets.size(), 3u);
    EXPECT_NEAR(dets[0].score, 1 / (1 + std::exp(-3.0)), 1e-12);
    EXPECT_EQ(dets[0].box.x1, 0.0);
    EXPECT_EQ(dets[0].box.x2, 6.0);
    EXPECT_EQ(dets[2].score, 0.5);
    cfg.pre_nms_top = 1;
    EXPECT_EQ(postprocess(logits, deltas, anchors, 16, cfg).size(), 1u);
    EXPECT_THROW(postprocess(std::span<const double>(logits).first(3), deltas, anchors, 16, cfg), ShapeError);
}

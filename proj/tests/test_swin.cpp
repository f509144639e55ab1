#include <gtest/gtest.h>

#include <cmath>

#include "swinfe/swin.hpp"

#include "oracles.hpp"

using namespace swinfe;
using namespace swinfe_oracle;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
    auto rng = make_rng({seed});
    Tensor<double> t(std::move(s));
    fill_uniform(t.mutable_data(), lo, hi, rng);
    return t;
}

std::vector<double> vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

AttentionParams<double> random_attention(ParamSet<double>& ps, std::size_t C, std::size_t heads, std::size_t w,
                                         std::uint64_t seed) {
    auto rng = make_rng({seed});
    auto p = make_attention(ps, "a", C, heads, w, false, rng);
    for (const auto& [name, t] : ps) {
        Tensor<double> x = t;
        fill_uniform(x.mutable_data(), -0.5, 0.5, rng);
    }
    return p;
}

}  // namespace

TEST(WindowPartition, CountsAndRoundTrip) {
    Tape<double> tape;
    auto x4 = random_tensor({2, 3, 4, 4}, 1);
    auto w4 = window_partition(tape, x4, 2);
    EXPECT_EQ(w4.shape(), (Shape{2 * 4, 4, 3}));
    EXPECT_EQ(vec(window_reverse(tape, w4, 4, 4, 2)), vec(x4));
    auto x8 = random_tensor({1, 5, 8, 8}, 2);
    auto w8 = window_partition(tape, x8, 4);
    EXPECT_EQ(w8.shape(), (Shape{4, 16, 5}));
    EXPECT_EQ(vec(window_reverse(tape, w8, 8, 8, 4)), vec(x8));
    auto x6 = random_tensor({1, 2, 6, 12}, 3);
    EXPECT_EQ(vec(window_reverse(tape, window_partition(tape, x6, 3), 6, 12, 3)), vec(x6));
    auto single = random_tensor({1, 2, 4, 4}, 4);
    EXPECT_EQ(vec(window_reverse(tape, window_partition(tape, single, 4), 4, 4, 4)), vec(single));
}

TEST(WindowPartition, RowMajorOrdering) {
    Tape<double> tape;
    Tensor<double> x(Shape{1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x.mutable_data()[i] = static_cast<double>(i);
    auto w = window_partition(tape, x, 2);
    // window 1 is the top-right 2x2 block
    EXPECT_EQ(w[4 + 0], 2.0);
    EXPECT_EQ(w[4 + 1], 3.0);
    EXPECT_EQ(w[4 + 2], 6.0);
    EXPECT_EQ(w[4 + 3], 7.0);
}

TEST(WindowPartition, IndivisibleIsShapeError) {
    Tape<double> tape;
    EXPECT_THROW(window_partition(tape, random_tensor({1, 1, 2, 6}, 5), 3), ShapeError);
    EXPECT_THROW(window_reverse(tape, Tensor<double>(Shape{3, 4, 1}), 4, 4, 2), ShapeError);
}

TEST(CyclicShift, HandRollAndInverse) {
    Tape<double> tape;
    Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    EXPECT_EQ(vec(cyclic_shift(tape, x, 1)), (std::vector<double>{4, 3, 2, 1}));
    EXPECT_EQ(vec(cyclic_shift(tape, x, 0)), vec(x));
    auto r = random_tensor({2, 3, 8, 8}, 6);
    EXPECT_EQ(vec(cyclic_shift(tape, cyclic_shift(tape, r, 3), -3)), vec(r));
    // roll by (-s,-s): output (0,0) is input (s,s)
    EXPECT_EQ(cyclic_shift(tape, r, 3)[0], r[3 * 8 + 3]);
}

TEST(ShiftMask, TrivialCases) {
    EXPECT_TRUE(build_shift_mask(8, 8, 4, 0).all_zero());
    EXPECT_TRUE(build_shift_mask(4, 4, 4, 2).all_zero());
}

TEST(ShiftMask, MatchesPaddedShiftedWindowGroups) {
    for (auto [H, W, w, s] : {std::array<std::size_t, 4>{8, 8, 4, 2}, {12, 8, 4, 2}, {14, 14, 7, 3}, {8, 16, 4, 1}}) {
        const auto m = build_shift_mask(H, W, w, s);
        ASSERT_EQ(m.windows, (H / w) * (W / w));
        for (std::size_t win = 0; win < m.windows; ++win) {
            const std::size_t wy = win / (W / w), wx = win % (W / w);
            for (std::size_t i = 0; i < w * w; ++i) {
                for (std::size_t j = 0; j < w * w; ++j) {
                    // rolled coordinate -> original coordinate
                    auto orig = [&](std::size_t p, std::size_t& r, std::size_t& c) {
                        r = (wy * w + p / w + s) % H;
                        c = (wx * w + p % w + s) % W;
                    };
                    std::size_t ri, ci, rj, cj;
                    orig(i, ri, ci);
                    orig(j, rj, cj);
                    const bool same = shifted_group(ri, H, w, s) == shifted_group(rj, H, w, s) &&
                                      shifted_group(ci, W, w, s) == shifted_group(cj, W, w, s);
                    EXPECT_EQ(m.at(win, i, j), same ? 0.0 : -kMaskValue);
                    EXPECT_EQ(m.at(win, i, j), m.at(win, j, i));
                }
            }
        }
    }
}

TEST(WindowMsa, SingletonAndSymmetricCases) {
    ParamSet<double> ps;
    auto p = random_attention(ps, 4, 2, 1, 7);
    Tape<double> tape;
    auto x = random_tensor({3, 1, 4}, 8);
    auto y = window_msa(tape, x, p);
    for (std::size_t b = 0; b < 3; ++b) {
        auto v = affine(&x.data()[b * 4], p.v, 4);
        auto o = affine(v.data(), p.proj, 4);
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y[b * 4 + c], o[c], 1e-12);
    }
    Tensor<double> twin(Shape{1, 2, 4}, std::vector<double>{0.3, -0.2, 0.5, 0.1, 0.3, -0.2, 0.5, 0.1});
    auto z = window_msa(tape, twin, p);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(z[c], z[4 + c], 1e-12);
    ParamSet<double> bad;
    auto rng = make_rng({1});
    auto p3 = make_attention(bad, "b", 4, 3, 2, false, rng);
    EXPECT_THROW(window_msa(tape, x, p3), ConfigError);
}

TEST(WindowMsa, RegularWindowsEqualBlockMaskedDenseAttention) {
    const std::size_t H = 8, W = 8, w = 4, C = 8;
    ParamSet<double> ps;
    auto p = random_attention(ps, C, 2, w, 9);
    auto x = random_tensor({1, H, W, C}, 10);
    Tape<double> tape;
    auto out = reverse_nhwc(tape, window_msa(tape, partition_nhwc(tape, x, w), p), H, W, w);
    std::vector<std::vector<double>> tokens(H * W);
    for (std::size_t i = 0; i < H * W; ++i) tokens[i].assign(&x.data()[i * C], &x.data()[i * C] + C);
    auto ref = dense_attention(tokens, p, [&](std::size_t i, std::size_t j) {
        return (i / W) / w == (j / W) / w && (i % W) / w == (j % W) / w;
    });
    double worst = 0;
    for (std::size_t i = 0; i < H * W; ++i)
        for (std::size_t c = 0; c < C; ++c) worst = std::max(worst, std::abs(out[i * C + c] - ref[i][c]));
    EXPECT_LT(worst, 1e-5);
}

TEST(WindowMsa, MaskedShiftedWindowsEqualGroupRestrictedOracle) {
    const std::size_t H = 8, W = 8, w = 4, s = 2, C = 8;
    ParamSet<double> ps;
    auto p = random_attention(ps, C, 2, w, 11);
    auto x = random_tensor({1, H, W, C}, 12);
    const auto mask = build_shift_mask(H, W, w, s);
    Tape<double> tape;
    auto rolled = roll2d(tape, x, 1, 2, static_cast<long>(s));
    auto win = window_msa(tape, partition_nhwc(tape, rolled, w), p, &mask);
    auto out = roll2d(tape, reverse_nhwc(tape, win, H, W, w), 1, 2, -static_cast<long>(s));

    std::vector<std::vector<double>> tokens(H * W);
    for (std::size_t i = 0; i < H * W; ++i) tokens[i].assign(&x.data()[i * C], &x.data()[i * C] + C);
    auto ref = dense_attention(tokens, p, [&](std::size_t i, std::size_t j) {
        return shifted_group(i / W, H, w, s) == shifted_group(j / W, H, w, s) &&
               shifted_group(i % W, W, w, s) == shifted_group(j % W, W, w, s);
    });
    double worst = 0;
    for (std::size_t i = 0; i < H * W; ++i)
        for (std::size_t c = 0; c < C; ++c) worst = std::max(worst, std::abs(out[i * C + c] - ref[i][c]));
    EXPECT_LT(worst, 1e-5);
}

TEST(SwinBlockPair, ZeroSublayersAreIdentity) {
    SwinConfig cfg = SwinConfig::toy();
    ParamSet<double> ps;
    auto rng = make_rng({13});
    auto a = make_block(ps, "a", 8, 2, 4, cfg, rng);
    auto b = make_block(ps, "b", 8, 2, 4, cfg, rng);
    for (const auto& [name, t] : ps) {
        if (name.find("norm") != std::string::npos) continue;
        Tensor<double> z = t;
        std::fill(z.mutable_data().begin(), z.mutable_data().end(), 0.0);
    }
    auto x = random_tensor({2, 8, 8, 8}, 14);
    Tape<double> tape;
    auto y = swin_block_pair(tape, x, a, b, cfg);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_EQ(vec(y), vec(x));
}

TEST(SwinBlockPair, ShapePreservedAndGradientsFinite) {
    SwinConfig cfg = SwinConfig::toy();
    cfg.rel_pos_bias = true;
    ParamSet<double> ps;
    auto rng = make_rng({15});
    auto a = make_block(ps, "a", 16, 2, 4, cfg, rng);
    auto b = make_block(ps, "b", 16, 2, 4, cfg, rng);
    auto x = random_tensor({1, 16, 8, 8}, 16);
    Tape<double> tape;
    auto y = swin_block_pair(tape, x, a, b, cfg);
    EXPECT_EQ(y.shape(), x.shape());
    ps.zero_grad();
    tape.backward(sum(tape, mul(tape, y, y)));
    for (const auto& [name, t] : ps) {
        double mag = 0;
        for (double g : t.grad()) {
            ASSERT_TRUE(std::isfinite(g)) << name;
            mag += std::abs(g);
        }
        EXPECT_GT(mag, 0.0) << name;
    }
}

TEST(PatchMerging, ShapesAndOddError) {
    ParamSet<double> ps;
    auto rng = make_rng({17});
    auto m = make_merge(ps, "m", 8, rng);
    Tape<double> tape;
    EXPECT_EQ(patch_merging(tape, random_tensor({2, 8, 8, 8}, 18), m).shape(), (Shape{2, 16, 4, 4}));
    EXPECT_THROW(patch_merging(tape, random_tensor({1, 8, 5, 4}, 19), m), ShapeError);
    ParamSet<float> big;
    auto mb = make_merge(big, "m", 96, rng);
    Tape<float> tf(false);
    EXPECT_EQ(patch_merging(tf, Tensor<float>(Shape{1, 96, 64, 64}), mb).shape(), (Shape{1, 192, 32, 32}));
}

TEST(PatchMerging, NeighbourhoodOrderBeforeProjection) {
    // identity-like reduction picks x0 (top-left) and x1 (bottom-left) channels
    ParamSet<double> ps;
    auto rng = make_rng({20});
    auto m = make_merge(ps, "m", 1, rng);  // 4 -> 2
    Tensor<double> red = m.reduction.weight;
    auto d = red.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
    d[0 * 2 + 0] = 1;  // concat slot 0 -> out 0
    d[1 * 2 + 1] = 1;  // concat slot 1 -> out 1
    Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    Tape<double> tape;
    auto y = patch_merging(tape, x, m);
    // layer norm of [1,3,2,4]: mean 2.5, the slots hold (1,3) -> normalized values
    const double sd = std::sqrt(1.25 + 1e-5);
    EXPECT_NEAR(y[0], (1 - 2.5) / sd, 1e-9);
    EXPECT_NEAR(y[1], (3 - 2.5) / sd, 1e-9);
}

TEST(PatchEmbed, ShapesAndStridedSubsample) {
    SwinConfig cfg = SwinConfig::toy();
    ParamSet<double> ps;
    ConvParams<double> p;
    p.weight = ps.add("w", {8, 1, 4, 4});
    p.bias = ps.add("b", {8});
    Tape<double> tape;
    auto img = random_tensor({1, 1, 32, 32}, 21);
    EXPECT_EQ(patch_embed(tape, img, p, cfg).shape(), (Shape{1, 8, 8, 8}));
    p.weight.mutable_data()[0] = 1;  // out channel 0 copies pixel (0,0) of each patch
    auto y = patch_embed(tape, img, p, cfg);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y[r * 8 + c], img[(4 * r) * 32 + 4 * c]);
    EXPECT_THROW(patch_embed(tape, random_tensor({1, 1, 30, 32}, 22), p, cfg), ShapeError);
}

TEST(Backbone, ToyGeometry) {
    const SwinConfig cfg = SwinConfig::toy();
    ParamSet<float> ps;
    auto rng = make_rng({23});
    auto p = make_swin(ps, cfg, 64, rng);
    Tape<float> tape(false);
    auto out = backbone_forward(tape, Tensor<float>(Shape{2, 1, 64, 64}, 0.5f), p);
    EXPECT_EQ(out[0].shape(), (Shape{2, 8, 16, 16}));
    EXPECT_EQ(out[1].shape(), (Shape{2, 16, 8, 8}));
    EXPECT_EQ(out[2].shape(), (Shape{2, 32, 4, 4}));
    EXPECT_EQ(out[3].shape(), (Shape{2, 64, 2, 2}));
}

TEST(Backbone, SwinTinyOn224WithWindow7) {
    const SwinConfig cfg = SwinConfig::tiny();
    ParamSet<float> ps;
    auto rng = make_rng({24});
    auto p = make_swin(ps, cfg, 224, rng);
    Tape<float> tape(false);
    auto out = backbone_forward(tape, Tensor<float>(Shape{1, 1, 224, 224}, 0.1f), p);
    EXPECT_EQ(out[0].shape(), (Shape{1, 96, 56, 56}));
    EXPECT_EQ(out[3].shape(), (Shape{1, 768, 7, 7}));
}

TEST(Backbone, InputValidation) {
    SwinConfig cfg = SwinConfig::tiny();
    EXPECT_THROW(cfg.validate_input(256, 256), ShapeError);  // 64 is not a multiple of 7
    EXPECT_THROW(cfg.validate_input(100, 100), ShapeError);
    cfg.depths[1] = 3;
    EXPECT_THROW(cfg.validate(), ConfigError);
    SwinConfig h = SwinConfig::toy();
    h.heads[2] = 5;
    EXPECT_THROW(h.validate(), ConfigError);
}

TEST(Backbone, AttentionFlopsScaleLinearlyWithTokens) {
    // prefix "attention." covers every attention matmul; an exact tag picks one
    auto attention_macs = [](std::size_t side, bool global, const std::string& tag) {
        SwinConfig cfg = SwinConfig::toy();
        cfg.global_attention = global;
        ParamSet<float> ps;
        auto rng = make_rng({25});
        auto p = make_swin(ps, cfg, side, rng);
        FlopCounter f;
        Tape<float> tape(false, &f);
        backbone_forward(tape, Tensor<float>(Shape{1, 1, side, side}, 0.1f), p);
        return static_cast<double>(tag.back() == '.' ? f.with_prefix(tag) : f.of(tag));
    };
    const double windowed = attention_macs(128, false, "attention.") / attention_macs(64, false, "attention.");
    EXPECT_NEAR(windowed, 4.0, 0.2);
    const double qk = attention_macs(128, true, "attention.qk") / attention_macs(64, true, "attention.qk");
    EXPECT_EQ(qk, 16.0);
}

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "swinfe/head.hpp"
#include "swinfe/model.hpp"
#include "swinfe/neck.hpp"
#include "swinfe/ops.hpp"
#include "swinfe/swin.hpp"
#include "swinfe/synth.hpp"

// Central finite-difference checks of the reverse-mode gradients, always in
// double precision.

namespace swinfe {

struct GradcheckOptions {
    double h = 1e-5;
    /// Denominator floor of the relative error, for entries whose true
    /// gradient is ~0.
    double floor = 1e-5;
    /// Entries checked per tensor (0 = all), chosen at random.
    std::size_t max_entries = 0;
    std::uint64_t seed = 7;
    /// Test hook: corrupt the backward of this op (see Tape).
    std::string fault_op;
    double fault_factor = 1.5;
};

struct GradcheckResult {
    std::string group;
    double tolerance = 0;
    double worst = 0;
    std::string worst_at;
    std::size_t checked = 0;
    bool pass() const { return std::isfinite(worst) && worst < tolerance; }
};

using GradTensors = std::vector<std::pair<std::string, Tensor<double>>>;
using LossFn = std::function<Tensor<double>(Tape<double>&)>;

inline double relative_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline GradcheckResult check_gradients(const std::string& group, const LossFn& f, const GradTensors& wrt,
                                       double tolerance, const GradcheckOptions& opt) {
    GradcheckResult r;
    r.group = group;
    r.tolerance = tolerance;
    for (const auto& [name, t] : wrt) {
        Tensor<double> x = t;
        x.set_requires_grad(true);
        x.drop_grad();
    }
    Tape<double> tape;
    if (!opt.fault_op.empty()) tape.inject_backward_fault(opt.fault_op, opt.fault_factor);
    const auto loss = f(tape);
    tape.backward(loss);
    auto rng = make_rng({opt.seed, std::hash<std::string>{}(group)});
    for (const auto& [name, t] : wrt) {
        Tensor<double> x = t;
        const std::vector<double> analytic = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                                          : std::vector<double>(x.numel(), 0.0);
        std::vector<std::size_t> entries;
        if (opt.max_entries == 0 || x.numel() <= opt.max_entries) {
            for (std::size_t i = 0; i < x.numel(); ++i) entries.push_back(i);
        } else {
            std::set<std::size_t> pick;
            while (pick.size() < opt.max_entries) {
                pick.insert(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(x.numel() - 1))));
            }
            entries.assign(pick.begin(), pick.end());
        }
        for (auto i : entries) {
            auto d = x.mutable_data();
            const double v = d[i];
            Tape<double> off(false);
            d[i] = v + opt.h;
            const double fp = f(off).item();
            d[i] = v - opt.h;
            const double fm = f(off).item();
            d[i] = v;
            const double numeric = (fp - fm) / (2 * opt.h);
            const double e = relative_error(analytic[i], numeric, opt.floor);
            ++r.checked;
            if (!(e <= r.worst)) {
                r.worst = e;
                r.worst_at = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return r;
}

namespace detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool grad = true) {
    Tensor<double> t(std::move(shape), 0.0, grad);
    for (auto& v : t.mutable_data()) v = uniform(rng, lo, hi);
    return t;
}

/// Away from a kink at zero: |v| in [0.1, 1].
inline Tensor<double> kink_free_tensor(Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape), 0.0, true);
    for (auto& v : t.mutable_data()) v = (uniform01(rng) < 0.5 ? -1 : 1) * uniform(rng, 0.1, 1.0);
    return t;
}

/// sum(out * R) for a fixed random R, so every output entry matters.
inline Tensor<double> project(Tape<double>& tape, const Tensor<double>& out, std::uint64_t salt) {
    auto rng = make_rng({salt, out.numel()});
    Tensor<double> w = random_tensor(out.shape(), rng, -1, 1, false);
    return sum(tape, mul(tape, out, w));
}

inline void randomize(ParamSet<double>& ps, Rng& rng, double amplitude) {
    for (const auto& [name, t] : ps) {
        Tensor<double> x = t;
        for (auto& v : x.mutable_data()) v += uniform(rng, -amplitude, amplitude);
    }
}

}  // namespace detail

inline std::vector<GradcheckResult> gradcheck_ops(const GradcheckOptions& opt = {}) {
    using detail::kink_free_tensor;
    using detail::project;
    using detail::random_tensor;
    constexpr double tol = 1e-4;
    auto rng = make_rng({opt.seed, 1});
    std::vector<GradcheckResult> out;
    auto run = [&](const std::string& name, const LossFn& f, const GradTensors& wrt) {
        out.push_back(check_gradients(name, f, wrt, tol, opt));
    };

    {
        auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
        run("add", [=](Tape<double>& t) { return project(t, add(t, a, b), 1); }, {{"a", a}, {"b", b}});
        run("add_scaled", [=](Tape<double>& t) { return project(t, add_scaled(t, a, b, -0.7), 2); },
            {{"a", a}, {"b", b}});
        run("mul", [=](Tape<double>& t) { return project(t, mul(t, a, b), 3); }, {{"a", a}, {"b", b}});
        run("scale", [=](Tape<double>& t) { return project(t, scale(t, a, 1.3), 4); }, {{"a", a}});
        run("sum", [=](Tape<double>& t) { return sum(t, mul(t, a, a)); }, {{"a", a}});
        run("mean", [=](Tape<double>& t) { return mean(t, mul(t, a, b)); }, {{"a", a}, {"b", b}});
    }
    {
        auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({4}, rng);
        run("add_broadcast", [=](Tape<double>& t) { return project(t, add_broadcast(t, a, b), 5); },
            {{"a", a}, {"b", b}});
    }
    {
        auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
        run("matmul", [=](Tape<double>& t) { return sum(t, matmul(t, a, b)); }, {{"a", a}, {"b", b}});
        auto ba = random_tensor({2, 3, 4}, rng), bb = random_tensor({2, 4, 5}, rng), bt = random_tensor({2, 5, 4}, rng);
        run("matmul_batched", [=](Tape<double>& t) { return project(t, matmul(t, ba, bb), 6); },
            {{"a", ba}, {"b", bb}});
        run("matmul_shared_rhs", [=](Tape<double>& t) { return project(t, matmul(t, ba, b), 7); },
            {{"a", ba}, {"b", b}});
        run("matmul_transposed", [=](Tape<double>& t) { return project(t, matmul(t, ba, bt, true), 8); },
            {{"a", ba}, {"b", bt}});
        auto w = random_tensor({4, 6}, rng), bias = random_tensor({6}, rng);
        run("linear", [=](Tape<double>& t) { return project(t, linear(t, ba, w, bias), 9); },
            {{"x", ba}, {"weight", w}, {"bias", bias}});
    }
    {
        auto x = random_tensor({2, 5}, rng, -2, 2);
        run("softmax", [=](Tape<double>& t) { return project(t, softmax_lastdim(t, x), 10); }, {{"x", x}});
        auto y = random_tensor({3, 6}, rng, -2, 2), g = random_tensor({6}, rng, 0.5, 1.5), b = random_tensor({6}, rng);
        run("layer_norm", [=](Tape<double>& t) { return project(t, layer_norm(t, y, g, b), 11); },
            {{"x", y}, {"gamma", g}, {"beta", b}});
        auto z = random_tensor({2, 7}, rng, -3, 3);
        run("gelu", [=](Tape<double>& t) { return project(t, gelu(t, z), 12); }, {{"x", z}});
        auto k = kink_free_tensor({2, 7}, rng);
        run("relu", [=](Tape<double>& t) { return project(t, relu(t, k), 13); }, {{"x", k}});
    }
    {
        auto x = random_tensor({2, 3, 4}, rng);
        run("reshape", [=](Tape<double>& t) { return project(t, reshape(t, x, {6, 4}), 14); }, {{"x", x}});
        run("permute", [=](Tape<double>& t) { return project(t, permute(t, x, {2, 0, 1}), 15); }, {{"x", x}});
        auto m = random_tensor({1, 4, 6, 2}, rng);
        run("roll2d", [=](Tape<double>& t) { return project(t, roll2d(t, m, 1, 2, -3), 16); }, {{"x", m}});
        auto y = random_tensor({2, 2, 4}, rng);
        run("concat", [=](Tape<double>& t) { return project(t, concat(t, {x, y}, 1), 17); }, {{"a", x}, {"b", y}});
        auto s = random_tensor({5}, rng);
        run("gather", [=](Tape<double>& t) { return project(t, gather(t, s, {4, 0, 0, 2, 4, 4}, {2, 3}), 18); },
            {{"src", s}});
    }
    {
        auto x = random_tensor({2, 3, 7, 7}, rng);
        auto k3 = random_tensor({4, 3, 3, 3}, rng), b3 = random_tensor({4}, rng);
        run("conv2d_3x3", [=](Tape<double>& t) { return project(t, conv2d(t, x, k3, b3, 1, 1), 19); },
            {{"x", x}, {"kernel", k3}, {"bias", b3}});
        run("conv2d_3x3_stride2", [=](Tape<double>& t) { return project(t, conv2d(t, x, k3, b3, 2, 1), 20); },
            {{"x", x}, {"kernel", k3}, {"bias", b3}});
        auto xe = random_tensor({1, 3, 6, 6}, rng);
        run("conv2d_3x3_stride2_asym", [=](Tape<double>& t) { return project(t, conv2d(t, xe, k3, b3, 2, 1, 0, "conv2d"), 23); },
            {{"x", xe}, {"kernel", k3}, {"bias", b3}});
        auto k1 = random_tensor({5, 3, 1, 1}, rng);
        run("conv2d_1x1", [=](Tape<double>& t) { return sum(t, conv2d(t, x, k1, Tensor<double>{}, 1, 0)); },
            {{"x", x}, {"kernel", k1}});
        auto img = random_tensor({1, 1, 8, 8}, rng), kp = random_tensor({4, 1, 4, 4}, rng);
        run("conv2d_patch", [=](Tape<double>& t) { return project(t, conv2d(t, img, kp, Tensor<double>{}, 4, 0), 21); },
            {{"x", img}, {"kernel", kp}});
        auto u = random_tensor({1, 2, 3, 3}, rng);
        run("upsample2x", [=](Tape<double>& t) { return project(t, upsample_nearest_2x(t, u), 22); }, {{"x", u}});
    }
    {
        auto logits = random_tensor({2, 6}, rng, -3, 3);
        std::vector<double> y(12), w(12);
        for (std::size_t i = 0; i < 12; ++i) {
            y[i] = static_cast<double>(i % 2);
            w[i] = i % 5 == 0 ? 0.0 : 1.0;
        }
        run("bce_with_logits", [=](Tape<double>& t) { return bce_with_logits_sum(t, logits, y, w); },
            {{"logits", logits}});
        // |pred - target| kept clear of the beta kink
        auto pred = random_tensor({3, 4}, rng);
        std::vector<double> tg(12), wr(12, 1.0);
        auto pd = pred.data();
        for (std::size_t i = 0; i < 12; ++i) tg[i] = pd[i] + (i % 3 == 0 ? 0.05 : (i % 3 == 1 ? -0.5 : 0.9));
        run("smooth_l1", [=](Tape<double>& t) { return smooth_l1_sum(t, pred, tg, wr, 1.0 / 9.0); },
            {{"pred", pred}});
    }
    return out;
}

inline GradTensors all_params(const ParamSet<double>& ps) {
    GradTensors v;
    for (const auto& [name, t] : ps) v.emplace_back(name, t);
    return v;
}

/// Swin block pair, patch merging, masked window attention, each neck and
/// the head with its loss, on small random inputs.
inline std::vector<GradcheckResult> gradcheck_block(const GradcheckOptions& opt = {}) {
    using detail::project;
    using detail::random_tensor;
    auto rng = make_rng({opt.seed, 2});
    std::vector<GradcheckResult> out;

    SwinConfig cfg = SwinConfig::toy();
    cfg.rel_pos_bias = true;
    {
        // one regular + shifted pair on an 8x8 map, window 4, shift 2
        ParamSet<double> ps;
        auto regular = make_block(ps, "pair.regular", 8, 2, 4, cfg, rng);
        auto shifted = make_block(ps, "pair.shifted", 8, 2, 4, cfg, rng);
        detail::randomize(ps, rng, 0.1);
        auto x = random_tensor({1, 8, 8, 8}, rng);
        auto wrt = all_params(ps);
        wrt.emplace_back("input", x);
        out.push_back(check_gradients(
            "swin_block_pair",
            [=](Tape<double>& t) { return project(t, swin_block_pair(t, x, regular, shifted, cfg), 30); }, wrt, 1e-3,
            opt));
    }
    {
        ParamSet<double> ps;
        auto attn = make_attention(ps, "attn", 8, 2, 4, true, rng);
        detail::randomize(ps, rng, 0.1);
        const auto mask = build_shift_mask(8, 8, 4, 2);
        auto win = random_tensor({4, 16, 8}, rng);
        auto wrt = all_params(ps);
        wrt.emplace_back("windows", win);
        out.push_back(check_gradients(
            "window_attention_masked",
            [=](Tape<double>& t) { return project(t, window_msa(t, win, attn, &mask), 31); }, wrt, 1e-4, opt));
    }
    {
        ParamSet<double> ps;
        auto merge = make_merge(ps, "merge", 4, rng);
        detail::randomize(ps, rng, 0.1);
        auto x = random_tensor({1, 4, 4, 4}, rng);
        auto wrt = all_params(ps);
        wrt.emplace_back("input", x);
        out.push_back(check_gradients(
            "patch_merging", [=](Tape<double>& t) { return project(t, patch_merging(t, x, merge), 32); }, wrt, 1e-4,
            opt));
    }
    const std::array<std::size_t, 4> ch{4, 8, 16, 32};
    StagePyramid<double> stages;
    for (std::size_t l = 0; l < 4; ++l) stages[l] = random_tensor({1, ch[l], 16u >> l, 16u >> l}, rng);
    for (NeckKind kind : {NeckKind::fpn, NeckKind::pafpn, NeckKind::fefpn}) {
        ParamSet<double> ps;
        NeckConfig nc;
        nc.kind = kind;
        nc.channels = 6;
        auto neck = make_neck(ps, nc, ch, rng);
        detail::randomize(ps, rng, 0.05);
        auto wrt = all_params(ps);
        for (std::size_t l = 0; l < 4; ++l) wrt.emplace_back("stage" + std::to_string(l), stages[l]);
        out.push_back(check_gradients(
            std::string("neck_") + neck_name(kind),
            [=](Tape<double>& t) {
                const auto pyr = neck_forward(t, stages, neck);
                Tensor<double> acc = project(t, pyr[0], 40);
                for (std::size_t l = 1; l < 4; ++l) acc = add(t, acc, project(t, pyr[l], 40 + l));
                return acc;
            },
            wrt, 1e-3, opt));
    }
    {
        ParamSet<double> ps;
        HeadConfig hc;
        auto head = make_head(ps, 6, hc.anchors_per_cell(), rng);
        detail::randomize(ps, rng, 0.2);
        Pyramid<double> pyr;
        std::vector<LevelShape> levels;
        for (std::size_t l = 0; l < 4; ++l) {
            pyr[l] = random_tensor({1, 6, 16u >> l, 16u >> l}, rng);
            levels.push_back({16u >> l, 16u >> l});
        }
        const auto anchors = flatten_anchors(generate_anchors(levels, 64, hc.scales, hc.ratios));
        const std::vector<Box> gts{{10, 12, 24, 18}, {40, 30, 47, 50}};
        auto trng = make_rng({opt.seed, 3});
        const std::vector<ImageTargets> targets{build_targets(anchors, gts, hc, trng)};
        auto wrt = all_params(ps);
        for (std::size_t l = 0; l < 4; ++l) wrt.emplace_back("level" + std::to_string(l), pyr[l]);
        out.push_back(check_gradients(
            "head_rpn_loss",
            [=](Tape<double>& t) {
                const auto [logits, deltas] = flatten_head(t, head_forward(t, pyr, head), head.anchors_per_cell);
                return rpn_loss(t, logits, deltas, targets, hc.smooth_l1_beta).total;
            },
            wrt, 1e-3, opt));
    }
    return out;
}

/// End to end: backbone, neck, head and loss on one synthetic image, with
/// every parameter perturbed away from its initial value.
inline std::vector<GradcheckResult> gradcheck_model(const ModelConfig& mc, const GradcheckOptions& opt = {}) {
    Detector<double> det(mc, opt.seed);
    auto rng = make_rng({opt.seed, 4});
    detail::randomize(det.params, rng, 0.05);
    SynthConfig sc;
    sc.image_size = mc.image_size;
    sc.seed = opt.seed;
    const Sample s = synth_sample(sc, 0);
    const Tensor<double> image(Shape{1, 1, mc.image_size, mc.image_size}, normalized_pixels<double>(s.image));
    auto trng = make_rng({opt.seed, 5});
    const std::vector<ImageTargets> targets{build_targets(det.anchors, s.gt, mc.head, trng)};
    const double beta = mc.head.smooth_l1_beta;
    const Detector<double>* d = &det;
    LossFn f = [=](Tape<double>& t) {
        const auto [logits, deltas] = d->forward(t, image);
        return rpn_loss(t, logits, deltas, targets, beta).total;
    };
    std::vector<GradcheckResult> out;
    // one group per module so a failure points somewhere useful
    for (const char* prefix : {"backbone", "neck", "head"}) {
        GradTensors wrt;
        for (const auto& [name, t] : det.params) {
            if (name.rfind(prefix, 0) == 0) wrt.emplace_back(name, t);
        }
        out.push_back(check_gradients(std::string("model_") + prefix, f, wrt, 1e-3, opt));
    }
    return out;
}

}  // namespace swinfe

#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "swinfe/ops.hpp"
#include "swinfe/params.hpp"
#include "swinfe/swin.hpp"

namespace swinfe {

enum class NeckKind { fpn, pafpn, fefpn };

/// Config spelling, accepted by parse_neck_kind.
inline const char* neck_name(NeckKind k) {
    switch (k) {
        case NeckKind::fpn: return "fpn";
        case NeckKind::pafpn: return "pafpn";
        case NeckKind::fefpn: return "fefpn";
    }
    return "?";
}

inline NeckKind parse_neck_kind(const std::string& s) {
    if (s == "fpn") return NeckKind::fpn;
    if (s == "pafpn") return NeckKind::pafpn;
    if (s == "fefpn") return NeckKind::fefpn;
    throw ConfigError("neck.kind must be one of fpn, pafpn, fefpn (got '" + s + "')");
}

struct NeckConfig {
    NeckKind kind = NeckKind::fefpn;
    std::size_t channels = 256;
    std::array<double, 3> fusion_factors{1.0, 0.5, 0.25};
    std::set<std::size_t> residual_levels{0, 1, 2};

    void validate() const {
        if (channels == 0) throw ConfigError("neck.channels must be positive");
        for (auto l : residual_levels) {
            if (l > 3) throw ConfigError("neck.residual_levels entries must be in 0..3");
        }
    }
};

/// Four maps, finest first, with equal channel counts.
template <typename T>
using Pyramid = std::array<Tensor<T>, 4>;

/// One top-down path: optional 1x1 laterals (channel matching) and a 3x3
/// output conv per level.
template <typename T>
struct TopDownParams {
    std::array<ConvParams<T>, 4> lateral;  // undefined when the path has no channel matching
    std::array<ConvParams<T>, 4> smooth;
    bool channel_match() const { return lateral[0].weight.defined(); }
};

template <typename T>
struct BottomUpParams {
    std::array<ConvParams<T>, 3> down;    // stride-2 3x3
    std::array<ConvParams<T>, 3> smooth;  // 3x3 after the addition
};

template <typename T>
struct NeckParams {
    NeckConfig cfg;
    std::array<TopDownParams<T>, 3> paths;  // only paths[0] for fpn/pafpn
    BottomUpParams<T> bottom_up;            // pafpn only
};

template <typename T>
TopDownParams<T> make_topdown(ParamSet<T>& ps, const std::string& name, const std::array<std::size_t, 4>& in_channels,
                              std::size_t out_channels, bool channel_match, Rng& rng) {
    TopDownParams<T> p;
    for (std::size_t l = 0; l < 4; ++l) {
        if (channel_match) {
            p.lateral[l] = make_conv(ps, name + ".lateral." + std::to_string(l), in_channels[l], out_channels, 1, rng);
        }
        p.smooth[l] = make_conv(ps, name + ".smooth." + std::to_string(l), out_channels, out_channels, 3, rng);
    }
    return p;
}

template <typename T>
NeckParams<T> make_neck(ParamSet<T>& ps, const NeckConfig& cfg, const std::array<std::size_t, 4>& stage_channels,
                        Rng& rng, const std::string& prefix = "neck") {
    cfg.validate();
    NeckParams<T> p;
    p.cfg = cfg;
    p.paths[0] = make_topdown(ps, prefix + ".path1", stage_channels, cfg.channels, true, rng);
    if (cfg.kind == NeckKind::fefpn) {
        const std::array<std::size_t, 4> uniform{cfg.channels, cfg.channels, cfg.channels, cfg.channels};
        p.paths[1] = make_topdown(ps, prefix + ".path2", uniform, cfg.channels, false, rng);
        p.paths[2] = make_topdown(ps, prefix + ".path3", uniform, cfg.channels, false, rng);
    }
    if (cfg.kind == NeckKind::pafpn) {
        for (std::size_t l = 0; l < 3; ++l) {
            p.bottom_up.down[l] =
                make_conv(ps, prefix + ".bottom_up.down." + std::to_string(l), cfg.channels, cfg.channels, 3, rng);
            p.bottom_up.smooth[l] =
                make_conv(ps, prefix + ".bottom_up.smooth." + std::to_string(l), cfg.channels, cfg.channels, 3, rng);
        }
    }
    return p;
}

namespace detail {

template <typename T>
void check_pyramid(const char* who, const std::array<Tensor<T>, 4>& maps) {
    for (std::size_t l = 0; l < 4; ++l) {
        if (!maps[l].defined() || maps[l].rank() != 4) throw ShapeError(std::string(who) + ": level " + std::to_string(l) + " is not [B,C,H,W]");
        if (l > 0 && (maps[l].dim(2) * 2 != maps[l - 1].dim(2) || maps[l].dim(3) * 2 != maps[l - 1].dim(3))) {
            throw ShapeError(std::string(who) + ": level " + std::to_string(l) + " " + shape_str(maps[l].shape()) +
                             " is not half of " + shape_str(maps[l - 1].shape()));
        }
    }
}

}  // namespace detail

/// Coarse-to-fine: out_3 = smooth(in_3); out_i = smooth(in_i + factor * up2x(out_{i+1})).
/// With channel matching, in_i is the 1x1 lateral of the raw input.
template <typename T>
Pyramid<T> topdown_path(Tape<T>& tape, const std::array<Tensor<T>, 4>& prev, const TopDownParams<T>& p, T factor) {
    detail::check_pyramid("topdown_path", prev);
    std::array<Tensor<T>, 4> in;
    for (std::size_t l = 0; l < 4; ++l) {
        if (p.channel_match()) {
            if (prev[l].dim(1) != p.lateral[l].weight.dim(1)) {
                throw ConfigError("topdown_path: level " + std::to_string(l) + " has " +
                                  std::to_string(prev[l].dim(1)) + " channels, lateral expects " +
                                  std::to_string(p.lateral[l].weight.dim(1)));
            }
            in[l] = conv2d(tape, prev[l], p.lateral[l].weight, p.lateral[l].bias, 1, 0, "neck");
        } else {
            in[l] = prev[l];
        }
    }
    Pyramid<T> out;
    out[3] = conv2d(tape, in[3], p.smooth[3].weight, p.smooth[3].bias, 1, 1, "neck");
    for (std::size_t l = 3; l-- > 0;) {
        auto up = upsample_nearest_2x(tape, out[l + 1]);
        if (up.shape() != in[l].shape()) {
            throw ShapeError("topdown_path: level " + std::to_string(l) + " " + shape_str(in[l].shape()) +
                             " vs upsampled " + shape_str(up.shape()));
        }
        auto fused = add_scaled(tape, in[l], up, factor);
        out[l] = conv2d(tape, fused, p.smooth[l].weight, p.smooth[l].bias, 1, 1, "neck");
    }
    return out;
}

template <typename T>
Pyramid<T> fpn_forward(Tape<T>& tape, const StagePyramid<T>& stages, const NeckParams<T>& p) {
    return topdown_path(tape, stages, p.paths[0], static_cast<T>(p.cfg.fusion_factors[0]));
}

/// FPN followed by one bottom-up path: N_0 = P_0, N_{i+1} = smooth(P_{i+1} + down(N_i)).
template <typename T>
Pyramid<T> pafpn_forward(Tape<T>& tape, const StagePyramid<T>& stages, const NeckParams<T>& p) {
    auto P = fpn_forward(tape, stages, p);
    Pyramid<T> N;
    N[0] = P[0];
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& bu = p.bottom_up;
        // pad 1 before, 0 after: exact halving of even maps
        auto down = conv2d(tape, N[l], bu.down[l].weight, bu.down[l].bias, 2, 1, 0, "neck");
        N[l + 1] = conv2d(tape, add(tape, P[l + 1], down), bu.smooth[l].weight, bu.smooth[l].bias, 1, 1, "neck");
    }
    return N;
}

/// Three top-down paths with decaying fusion factors, plus identity residuals
/// from path 1 into path 3 at `residual_levels`.
template <typename T>
Pyramid<T> fefpn_forward(Tape<T>& tape, const StagePyramid<T>& stages, const NeckParams<T>& p) {
    const auto& f = p.cfg.fusion_factors;
    auto p1 = topdown_path(tape, stages, p.paths[0], static_cast<T>(f[0]));
    auto p2 = topdown_path(tape, p1, p.paths[1], static_cast<T>(f[1]));
    auto p3 = topdown_path(tape, p2, p.paths[2], static_cast<T>(f[2]));
    Pyramid<T> out;
    for (std::size_t l = 0; l < 4; ++l) {
        out[l] = p.cfg.residual_levels.count(l) ? add(tape, p3[l], p1[l]) : p3[l];
    }
    return out;
}

template <typename T>
Pyramid<T> neck_forward(Tape<T>& tape, const StagePyramid<T>& stages, const NeckParams<T>& p) {
    Pyramid<T> out;
    switch (p.cfg.kind) {
        case NeckKind::fpn: out = fpn_forward(tape, stages, p); break;
        case NeckKind::pafpn: out = pafpn_forward(tape, stages, p); break;
        case NeckKind::fefpn: out = fefpn_forward(tape, stages, p); break;
    }
    for (std::size_t l = 0; l < 4; ++l) {
        if (out[l].dim(1) != p.cfg.channels || out[l].dim(2) != stages[l].dim(2) || out[l].dim(3) != stages[l].dim(3)) {
            throw ShapeError("neck: level " + std::to_string(l) + " produced " + shape_str(out[l].shape()));
        }
    }
    return out;
}

}  // namespace swinfe

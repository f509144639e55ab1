#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "swinfe/ops.hpp"
#include "swinfe/params.hpp"

// Hierarchical shifted-window transformer backbone.
//
// Feature maps cross module boundaries as [B,C,H,W]. Inside a stage the
// tokens are kept channel-last ([B,H,W,C]) so that layer norm, the MLP and the
// window attention all reduce over the contiguous last axis.

namespace swinfe {

inline constexpr double kMaskValue = 1e4;

struct SwinConfig {
    std::size_t embed_dim = 96;
    std::array<std::size_t, 4> depths{2, 2, 6, 2};
    std::array<std::size_t, 4> heads{3, 6, 12, 24};
    std::size_t window = 7;
    std::size_t patch = 4;
    std::size_t in_channels = 1;
    double mlp_ratio = 4.0;
    bool rel_pos_bias = false;
    /// Reference mode: every stage attends over its whole map (one window).
    bool global_attention = false;

    std::size_t stage_channels(std::size_t stage) const { return embed_dim << stage; }

    /// Token-grid side of `stage` for an input side of `image_side`.
    std::size_t stage_side(std::size_t image_side, std::size_t stage) const {
        return image_side / patch >> stage;
    }

    /// Window side used at a stage: the configured window, or the whole map
    /// when the map is not larger than the window.
    std::size_t effective_window(std::size_t side) const {
        return global_attention || side <= window ? side : window;
    }

    std::size_t shift_for(std::size_t side) const {
        return global_attention || side <= window ? 0 : window / 2;
    }

    void validate() const {
        if (embed_dim == 0 || window == 0 || patch == 0 || in_channels == 0 || mlp_ratio <= 0) {
            throw ConfigError("swin: embed_dim, window, patch, in_channels and mlp_ratio must be positive");
        }
        for (std::size_t i = 0; i < 4; ++i) {
            if (depths[i] == 0 || depths[i] % 2 != 0) {
                throw ConfigError("swin: depths[" + std::to_string(i) + "] = " + std::to_string(depths[i]) +
                                  " must be a positive even number");
            }
            if (heads[i] == 0 || stage_channels(i) % heads[i] != 0) {
                throw ConfigError("swin: stage " + std::to_string(i) + " channels " +
                                  std::to_string(stage_channels(i)) + " not divisible by heads " +
                                  std::to_string(heads[i]));
            }
        }
    }

    void validate_input(std::size_t H, std::size_t W) const {
        validate();
        const std::size_t unit = patch * 8;
        if (H % unit != 0 || W % unit != 0) {
            throw ShapeError("swin: input " + std::to_string(H) + "x" + std::to_string(W) + " must be divisible by " +
                             std::to_string(unit) + " (patch * 2^3)");
        }
        for (std::size_t s = 0; s < 4; ++s) {
            const std::size_t h = stage_side(H, s), w = stage_side(W, s);
            const std::size_t wh = effective_window(h), ww = effective_window(w);
            if (wh != ww || h % wh != 0 || w % ww != 0) {
                throw ShapeError("swin: stage " + std::to_string(s) + " grid " + std::to_string(h) + "x" +
                                 std::to_string(w) + " is not tiled by window " + std::to_string(window));
            }
        }
    }

    static SwinConfig tiny() { return SwinConfig{}; }

    /// Desk-scale configuration used by the toy experiments.
    static SwinConfig toy() {
        SwinConfig c;
        c.embed_dim = 8;
        c.depths = {2, 2, 2, 2};
        c.heads = {1, 2, 4, 8};
        c.window = 4;
        return c;
    }
};

/// Additive pre-softmax bias for shifted-window attention, one N x N matrix
/// per window (row-major windows, row-major positions within a window).
struct ShiftMask {
    std::size_t windows = 0;
    std::size_t tokens = 0;
    std::vector<double> bias;

    double at(std::size_t win, std::size_t i, std::size_t j) const {
        return bias[(win * tokens + i) * tokens + j];
    }
    bool all_zero() const {
        for (double v : bias) {
            if (v != 0.0) return false;
        }
        return true;
    }
};

namespace detail {

// Region label of each index along one axis of the rolled map. Indices in
// different regions come from non-adjacent parts of the original map.
inline std::vector<int> shift_regions(std::size_t len, std::size_t w, std::size_t s) {
    std::vector<int> label(len, 0);
    if (s == 0 || len <= w) return label;
    for (std::size_t i = 0; i < len; ++i) {
        if (i >= len - s) {
            label[i] = 2;
        } else if (i >= len - w) {
            label[i] = 1;
        }
    }
    return label;
}

}  // namespace detail

inline ShiftMask build_shift_mask(std::size_t H, std::size_t W, std::size_t w, std::size_t s) {
    if (w == 0 || H % w != 0 || W % w != 0) {
        throw ShapeError("build_shift_mask: " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by window " + std::to_string(w));
    }
    const auto lh = detail::shift_regions(H, w, s);
    const auto lw = detail::shift_regions(W, w, s);
    ShiftMask m;
    m.windows = (H / w) * (W / w);
    m.tokens = w * w;
    m.bias.assign(m.windows * m.tokens * m.tokens, 0.0);
    std::vector<int> label(m.tokens);
    for (std::size_t wy = 0; wy < H / w; ++wy) {
        for (std::size_t wx = 0; wx < W / w; ++wx) {
            const std::size_t win = wy * (W / w) + wx;
            for (std::size_t p = 0; p < m.tokens; ++p) {
                label[p] = lh[wy * w + p / w] * 3 + lw[wx * w + p % w];
            }
            for (std::size_t i = 0; i < m.tokens; ++i) {
                for (std::size_t j = 0; j < m.tokens; ++j) {
                    if (label[i] != label[j]) m.bias[(win * m.tokens + i) * m.tokens + j] = -kMaskValue;
                }
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
struct AttentionParams {
    LinearParams<T> q, k, v, proj;
    Tensor<T> rel_table;  // [(2w-1)^2, heads], only with relative position bias
    std::size_t heads = 1;
    std::size_t window = 1;
};

template <typename T>
struct BlockParams {
    NormParams<T> norm1, norm2;
    AttentionParams<T> attn;
    LinearParams<T> fc1, fc2;
};

template <typename T>
struct MergeParams {
    NormParams<T> norm;
    LinearParams<T> reduction;  // [4C, 2C], no bias
};

template <typename T>
struct SwinParams {
    SwinConfig cfg;
    ConvParams<T> patch_embed;
    std::array<std::vector<BlockParams<T>>, 4> stages;
    std::array<MergeParams<T>, 3> merges;  // merges[i] runs before stage i+1
};

template <typename T>
AttentionParams<T> make_attention(ParamSet<T>& ps, const std::string& name, std::size_t dim, std::size_t heads,
                                  std::size_t window, bool rel_bias, Rng& rng) {
    AttentionParams<T> a;
    a.q = make_linear(ps, name + ".q", dim, dim, true, rng);
    a.k = make_linear(ps, name + ".k", dim, dim, true, rng);
    a.v = make_linear(ps, name + ".v", dim, dim, true, rng);
    a.proj = make_linear(ps, name + ".proj", dim, dim, true, rng);
    a.heads = heads;
    a.window = window;
    if (rel_bias) {
        a.rel_table = ps.add(name + ".rel_table", {(2 * window - 1) * (2 * window - 1), heads});
        fill_trunc_normal(a.rel_table.mutable_data(), kProjectionInitStd, rng);
    }
    return a;
}

template <typename T>
BlockParams<T> make_block(ParamSet<T>& ps, const std::string& name, std::size_t dim, std::size_t heads,
                          std::size_t window, const SwinConfig& cfg, Rng& rng) {
    BlockParams<T> b;
    const auto hidden = static_cast<std::size_t>(std::llround(static_cast<double>(dim) * cfg.mlp_ratio));
    b.norm1 = make_norm(ps, name + ".norm1", dim);
    b.attn = make_attention(ps, name + ".attn", dim, heads, window, cfg.rel_pos_bias, rng);
    b.norm2 = make_norm(ps, name + ".norm2", dim);
    b.fc1 = make_linear(ps, name + ".mlp.fc1", dim, hidden, true, rng);
    b.fc2 = make_linear(ps, name + ".mlp.fc2", hidden, dim, true, rng);
    return b;
}

template <typename T>
MergeParams<T> make_merge(ParamSet<T>& ps, const std::string& name, std::size_t dim, Rng& rng) {
    MergeParams<T> m;
    m.norm = make_norm(ps, name + ".norm", 4 * dim);
    m.reduction = make_linear(ps, name + ".reduction", 4 * dim, 2 * dim, false, rng);
    return m;
}

/// Registers every backbone tensor under `prefix`. `image_side` fixes the
/// per-stage window (and thus the relative-bias table size).
template <typename T>
SwinParams<T> make_swin(ParamSet<T>& ps, const SwinConfig& cfg, std::size_t image_side, Rng& rng,
                        const std::string& prefix = "backbone") {
    cfg.validate_input(image_side, image_side);
    SwinParams<T> p;
    p.cfg = cfg;
    p.patch_embed.weight = ps.add(prefix + ".patch_embed.weight", {cfg.embed_dim, cfg.in_channels, cfg.patch, cfg.patch});
    fill_trunc_normal(p.patch_embed.weight.mutable_data(), kProjectionInitStd, rng);
    p.patch_embed.bias = ps.add(prefix + ".patch_embed.bias", {cfg.embed_dim});
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t dim = cfg.stage_channels(s);
        const std::size_t win = cfg.effective_window(cfg.stage_side(image_side, s));
        if (s > 0) p.merges[s - 1] = make_merge(ps, prefix + ".merges." + std::to_string(s - 1), dim / 2, rng);
        for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
            p.stages[s].push_back(make_block(
                ps, prefix + ".stages." + std::to_string(s) + ".blocks." + std::to_string(b), dim, cfg.heads[s], win,
                cfg, rng));
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Window geometry

template <typename T>
Tensor<T> nchw_to_nhwc(Tape<T>& tape, const Tensor<T>& x) {
    return permute(tape, x, {0, 2, 3, 1});
}

template <typename T>
Tensor<T> nhwc_to_nchw(Tape<T>& tape, const Tensor<T>& x) {
    return permute(tape, x, {0, 3, 1, 2});
}

/// [B,H,W,C] -> [B*nW, w*w, C]
template <typename T>
Tensor<T> partition_nhwc(Tape<T>& tape, const Tensor<T>& x, std::size_t w) {
    if (x.rank() != 4) throw ShapeError("window_partition: expected rank 4, got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (w == 0 || H % w != 0 || W % w != 0) {
        throw ShapeError("window_partition: " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by window " + std::to_string(w));
    }
    auto t = reshape(tape, x, {B, H / w, w, W / w, w, C});
    t = permute(tape, t, {0, 1, 3, 2, 4, 5});
    return reshape(tape, t, {B * (H / w) * (W / w), w * w, C});
}

/// [B*nW, w*w, C] -> [B,H,W,C]
template <typename T>
Tensor<T> reverse_nhwc(Tape<T>& tape, const Tensor<T>& windows, std::size_t H, std::size_t W, std::size_t w) {
    if (windows.rank() != 3 || w == 0 || H % w != 0 || W % w != 0 || windows.dim(1) != w * w) {
        throw ShapeError("window_reverse: windows " + shape_str(windows.shape()) + " inconsistent with " +
                         std::to_string(H) + "x" + std::to_string(W) + ", window " + std::to_string(w));
    }
    const std::size_t per_image = (H / w) * (W / w);
    if (windows.dim(0) % per_image != 0) {
        throw ShapeError("window_reverse: window count " + std::to_string(windows.dim(0)) + " is not a multiple of " +
                         std::to_string(per_image));
    }
    const std::size_t B = windows.dim(0) / per_image, C = windows.dim(2);
    auto t = reshape(tape, windows, {B, H / w, W / w, w, w, C});
    t = permute(tape, t, {0, 1, 3, 2, 4, 5});
    return reshape(tape, t, {B, H, W, C});
}

/// Splits x[B,C,H,W] into non-overlapping w x w windows: [B*(H/w)*(W/w), w*w, C].
template <typename T>
Tensor<T> window_partition(Tape<T>& tape, const Tensor<T>& x, std::size_t w) {
    if (x.rank() != 4) throw ShapeError("window_partition: expected [B,C,H,W], got " + shape_str(x.shape()));
    return partition_nhwc(tape, nchw_to_nhwc(tape, x), w);
}

/// Inverse of window_partition, back to [B,C,H,W].
template <typename T>
Tensor<T> window_reverse(Tape<T>& tape, const Tensor<T>& windows, std::size_t H, std::size_t W, std::size_t w) {
    return nhwc_to_nchw(tape, reverse_nhwc(tape, windows, H, W, w));
}

/// Toroidal roll of x[B,C,H,W] by (-s, -s).
template <typename T>
Tensor<T> cyclic_shift(Tape<T>& tape, const Tensor<T>& x, long s) {
    if (x.rank() != 4) throw ShapeError("cyclic_shift: expected [B,C,H,W], got " + shape_str(x.shape()));
    return roll2d(tape, x, 2, 3, s);
}

// ---------------------------------------------------------------------------
// Attention

namespace detail {

template <typename T>
Tensor<T> split_heads(Tape<T>& tape, const Tensor<T>& x, std::size_t heads) {
    const std::size_t Bw = x.dim(0), N = x.dim(1), C = x.dim(2);
    auto t = reshape(tape, x, {Bw, N, heads, C / heads});
    return permute(tape, t, {0, 2, 1, 3});
}

inline std::vector<std::size_t> rel_index(std::size_t w, std::size_t heads) {
    const std::size_t N = w * w;
    const std::size_t span = 2 * w - 1;
    std::vector<std::size_t> idx(heads * N * N);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = 0; j < N; ++j) {
                const std::size_t dy = i / w + w - 1 - j / w;
                const std::size_t dx = i % w + w - 1 - j % w;
                idx[(h * N + i) * N + j] = (dy * span + dx) * heads + h;
            }
        }
    }
    return idx;
}

}  // namespace detail

/// Multi-head self-attention inside each window. `windows` is [B*nW, N, C];
/// `mask`, when given, is added to the scaled scores of every head before
/// the softmax.
template <typename T>
Tensor<T> window_msa(Tape<T>& tape, const Tensor<T>& windows, const AttentionParams<T>& p,
                     const ShiftMask* mask = nullptr) {
    if (windows.rank() != 3) throw ShapeError("window_msa: expected [B*nW,N,C], got " + shape_str(windows.shape()));
    const std::size_t Bw = windows.dim(0), N = windows.dim(1), C = windows.dim(2);
    const std::size_t heads = p.heads;
    if (heads == 0 || C % heads != 0) {
        throw ConfigError("window_msa: channels " + std::to_string(C) + " not divisible by heads " +
                          std::to_string(heads));
    }
    const std::size_t hd = C / heads;
    auto q = detail::split_heads(tape, linear(tape, windows, p.q.weight, p.q.bias, "attention.qkv"), heads);
    auto k = detail::split_heads(tape, linear(tape, windows, p.k.weight, p.k.bias, "attention.qkv"), heads);
    auto v = detail::split_heads(tape, linear(tape, windows, p.v.weight, p.v.bias, "attention.qkv"), heads);
    q = scale(tape, q, T(1) / std::sqrt(static_cast<T>(hd)));
    auto scores = matmul(tape, q, k, true, "attention.qk");  // [Bw, h, N, N]
    if (p.rel_table.defined()) {
        if (p.window * p.window != N) throw ShapeError("window_msa: relative bias table built for another window");
        auto bias = gather(tape, p.rel_table, detail::rel_index(p.window, heads), {heads, N, N});
        scores = add_broadcast(tape, scores, bias);
    }
    if (mask) {
        if (mask->tokens != N || mask->windows == 0 || Bw % mask->windows != 0) {
            throw ShapeError("window_msa: mask for " + std::to_string(mask->windows) + " windows of " +
                             std::to_string(mask->tokens) + " tokens does not fit " + shape_str(windows.shape()));
        }
        const std::size_t nW = mask->windows;
        Tensor<T> mb(Shape{nW, heads, N, N});
        auto md = mb.mutable_data();
        for (std::size_t w = 0; w < nW; ++w) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t ij = 0; ij < N * N; ++ij) {
                    md[((w * heads + h) * N * N) + ij] = static_cast<T>(mask->bias[w * N * N + ij]);
                }
            }
        }
        auto s5 = reshape(tape, scores, {Bw / nW, nW, heads, N, N});
        scores = reshape(tape, add_broadcast(tape, s5, mb), {Bw, heads, N, N});
    }
    auto attn = softmax_lastdim(tape, scores);
    auto out = matmul(tape, attn, v, false, "attention.av");  // [Bw, h, N, hd]
    out = reshape(tape, permute(tape, out, {0, 2, 1, 3}), {Bw, N, C});
    return linear(tape, out, p.proj.weight, p.proj.bias, "attention.proj");
}

// ---------------------------------------------------------------------------
// Blocks

/// One pre-norm transformer block on channel-last tokens. `shift` > 0 makes
/// it the shifted-window variant; `mask` must then be the matching mask.
template <typename T>
Tensor<T> swin_block_nhwc(Tape<T>& tape, const Tensor<T>& x, const BlockParams<T>& p, std::size_t window,
                          std::size_t shift, const ShiftMask* mask) {
    const std::size_t H = x.dim(1), W = x.dim(2);
    auto h = layer_norm(tape, x, p.norm1.gamma, p.norm1.beta);
    if (shift) h = roll2d(tape, h, 1, 2, static_cast<long>(shift));
    auto win = partition_nhwc(tape, h, window);
    win = window_msa(tape, win, p.attn, shift ? mask : nullptr);
    h = reverse_nhwc(tape, win, H, W, window);
    if (shift) h = roll2d(tape, h, 1, 2, -static_cast<long>(shift));
    auto y = add(tape, x, h);
    auto m = layer_norm(tape, y, p.norm2.gamma, p.norm2.beta);
    m = linear(tape, m, p.fc1.weight, p.fc1.bias, "mlp");
    m = gelu(tape, m);
    m = linear(tape, m, p.fc2.weight, p.fc2.bias, "mlp");
    return add(tape, y, m);
}

/// Regular-window block followed by a shifted-window block, on x[B,C,H,W].
template <typename T>
Tensor<T> swin_block_pair(Tape<T>& tape, const Tensor<T>& x, const BlockParams<T>& regular,
                          const BlockParams<T>& shifted, const SwinConfig& cfg) {
    if (x.rank() != 4) throw ShapeError("swin_block_pair: expected [B,C,H,W], got " + shape_str(x.shape()));
    const std::size_t H = x.dim(2), W = x.dim(3);
    const std::size_t w = cfg.effective_window(H);
    if (cfg.effective_window(W) != w || H % w != 0 || W % w != 0) {
        throw ShapeError("swin_block_pair: " + std::to_string(H) + "x" + std::to_string(W) +
                         " not tiled by window " + std::to_string(cfg.window));
    }
    const std::size_t s = cfg.shift_for(H);
    const ShiftMask mask = build_shift_mask(H, W, w, s);
    auto t = nchw_to_nhwc(tape, x);
    t = swin_block_nhwc(tape, t, regular, w, 0, nullptr);
    t = swin_block_nhwc(tape, t, shifted, w, s, &mask);
    return nhwc_to_nchw(tape, t);
}

/// 2x2 neighbourhood concat (4C), layer norm, linear 4C -> 2C; channel-last.
template <typename T>
Tensor<T> patch_merging_nhwc(Tape<T>& tape, const Tensor<T>& x, const MergeParams<T>& p) {
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) {
        throw ShapeError("patch_merging: odd spatial size " + std::to_string(H) + "x" + std::to_string(W));
    }
    // [B, H/2, dy, W/2, dx, C] -> [B, H/2, W/2, dx, dy, C]: channel blocks ordered
    // (0,0), (1,0), (0,1), (1,1) as (dy,dx).
    auto t = reshape(tape, x, {B, H / 2, 2, W / 2, 2, C});
    t = permute(tape, t, {0, 1, 3, 4, 2, 5});
    t = reshape(tape, t, {B, H / 2, W / 2, 4 * C});
    t = layer_norm(tape, t, p.norm.gamma, p.norm.beta);
    return linear(tape, t, p.reduction.weight, p.reduction.bias, "merge");
}

template <typename T>
Tensor<T> patch_merging(Tape<T>& tape, const Tensor<T>& x, const MergeParams<T>& p) {
    if (x.rank() != 4) throw ShapeError("patch_merging: expected [B,C,H,W], got " + shape_str(x.shape()));
    return nhwc_to_nchw(tape, patch_merging_nhwc(tape, nchw_to_nhwc(tape, x), p));
}

/// Non-overlapping patch x patch projection: [B,Cin,H,W] -> [B,C,H/p,W/p].
template <typename T>
Tensor<T> patch_embed(Tape<T>& tape, const Tensor<T>& image, const ConvParams<T>& p, const SwinConfig& cfg) {
    if (image.rank() != 4) throw ShapeError("patch_embed: expected [B,Cin,H,W], got " + shape_str(image.shape()));
    if (image.dim(2) % cfg.patch != 0 || image.dim(3) % cfg.patch != 0) {
        throw ShapeError("patch_embed: " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                         " not divisible by patch " + std::to_string(cfg.patch));
    }
    return conv2d(tape, image, p.weight, p.bias, cfg.patch, 0, "patch_embed");
}

template <typename T>
using StagePyramid = std::array<Tensor<T>, 4>;

/// Four stage outputs, finest first: [C,H/4,W/4] ... [8C,H/32,W/32] for patch 4.
template <typename T>
StagePyramid<T> backbone_forward(Tape<T>& tape, const Tensor<T>& image, const SwinParams<T>& p) {
    const SwinConfig& cfg = p.cfg;
    if (image.rank() != 4 || image.dim(1) != cfg.in_channels) {
        throw ShapeError("backbone: expected [B," + std::to_string(cfg.in_channels) + ",H,W], got " +
                         shape_str(image.shape()));
    }
    cfg.validate_input(image.dim(2), image.dim(3));
    StagePyramid<T> out;
    auto t = nchw_to_nhwc(tape, patch_embed(tape, image, p.patch_embed, cfg));
    for (std::size_t s = 0; s < 4; ++s) {
        if (s > 0) t = patch_merging_nhwc(tape, t, p.merges[s - 1]);
        const std::size_t H = t.dim(1), W = t.dim(2);
        const std::size_t w = cfg.effective_window(H);
        const std::size_t shift = cfg.shift_for(H);
        const ShiftMask mask = build_shift_mask(H, W, w, shift);
        const auto& blocks = p.stages[s];
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const bool shifted = (b % 2 == 1) && shift > 0;
            t = swin_block_nhwc(tape, t, blocks[b], w, shifted ? shift : 0, shifted ? &mask : nullptr);
        }
        out[s] = nhwc_to_nchw(tape, t);
    }
    return out;
}

}  // namespace swinfe

#pragma once

#include <chrono>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "swinfe/swin.hpp"

// Cost of one attention layer over an S x S token map: windowed (w x w
// windows) against global attention (a single S x S window).

namespace swinfe {

struct AttentionCost {
    std::uint64_t macs = 0;     // every "attention.*" matmul
    std::uint64_t qk_macs = 0;  // the Q K^T term alone
    double ms = 0;
};

struct AttentionBenchRow {
    std::size_t side = 0;
    AttentionCost windowed, global;
};

template <typename T>
AttentionCost attention_cost(const Tensor<T>& tokens, const AttentionParams<T>& p, std::size_t window,
                             std::size_t repeats) {
    FlopCounter flops;
    AttentionCost c;
    double best = 0;
    for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
        flops.reset();
        Tape<T> tape(false, &flops);
        const auto t0 = std::chrono::steady_clock::now();
        auto win = partition_nhwc(tape, tokens, window);
        (void)window_msa(tape, win, p, nullptr);
        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (r == 0 || ms < best) best = ms;
    }
    c.macs = flops.with_prefix("attention.");
    c.qk_macs = flops.of("attention.qk");
    c.ms = best;
    return c;
}

/// `sides` are token-map sides; each must be a multiple of `window` or no
/// larger than it (then the whole map is one window).
inline std::vector<AttentionBenchRow> bench_attention(const std::vector<std::size_t>& sides, std::size_t window,
                                                      std::size_t channels = 32, std::size_t heads = 2,
                                                      std::size_t repeats = 3, std::uint64_t seed = 42) {
    if (window == 0) throw ConfigError("bench-attention: window must be positive");
    if (heads == 0 || channels % heads != 0) throw ConfigError("bench-attention: channels not divisible by heads");
    std::vector<AttentionBenchRow> rows;
    for (std::size_t side : sides) {
        if (side == 0 || (side > window && side % window != 0)) {
            throw ConfigError("bench-attention: size " + std::to_string(side) + " is not a multiple of window " +
                              std::to_string(window));
        }
        auto rng = make_rng({seed, side});
        ParamSet<float> ps;
        const std::size_t w = std::min(side, window);
        auto p = make_attention(ps, "attn", channels, heads, w, false, rng);
        Tensor<float> tokens(Shape{1, side, side, channels});
        fill_uniform(tokens.mutable_data(), -1.0, 1.0, rng);
        AttentionBenchRow row;
        row.side = side;
        row.windowed = attention_cost(tokens, p, w, repeats);
        row.global = attention_cost(tokens, p, side, repeats);
        rows.push_back(row);
    }
    return rows;
}

inline std::string format_attention_bench(const std::vector<AttentionBenchRow>& rows, std::size_t window) {
    std::ostringstream os;
    os << "window " << window << "; MACs of one attention layer; ratio = this row / previous row\n";
    os << std::right << std::setw(6) << "side" << std::setw(8) << "tokens" << std::setw(14) << "windowed"
       << std::setw(8) << "ratio" << std::setw(16) << "global" << std::setw(8) << "ratio" << std::setw(10)
       << "qk ratio" << std::setw(12) << "win ms" << std::setw(12) << "glob ms" << "\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        auto ratio = [&](std::uint64_t cur, std::uint64_t prev) {
            std::ostringstream s;
            if (i == 0 || prev == 0) {
                s << "-";
            } else {
                s << std::fixed << std::setprecision(2) << static_cast<double>(cur) / static_cast<double>(prev);
            }
            return s.str();
        };
        const AttentionBenchRow* p = i ? &rows[i - 1] : nullptr;
        os << std::setw(6) << r.side << std::setw(8) << r.side * r.side << std::setw(14) << r.windowed.macs
           << std::setw(8) << ratio(r.windowed.macs, p ? p->windowed.macs : 0) << std::setw(16) << r.global.macs
           << std::setw(8) << ratio(r.global.macs, p ? p->global.macs : 0) << std::setw(10)
           << ratio(r.global.qk_macs, p ? p->global.qk_macs : 0) << std::setw(12) << std::fixed
           << std::setprecision(3) << r.windowed.ms << std::setw(12) << r.global.ms << "\n";
        os.unsetf(std::ios::fixed);
    }
    return os.str();
}

}  // namespace swinfe

#pragma once

// Reference implementations shared by the unit tests and the acceptance
// runner. Nothing here calls the library code it is used to check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "swinfe/swin.hpp"

namespace swinfe_oracle {

using namespace swinfe;

struct Frac {
    long long n = 0, d = 1;

    Frac() = default;
    Frac(long long num, long long den) : n(num), d(den) {
        const long long g = std::gcd(n, d);
        if (g) {
            n /= g;
            d /= g;
        }
    }
    Frac operator+(Frac o) const { return {n * o.d + o.n * d, d * o.d}; }
    Frac operator*(Frac o) const { return {n * o.n, d * o.d}; }
    bool operator<(Frac o) const { return n * o.d < o.n * d; }
    double value() const { return static_cast<double>(n) / static_cast<double>(d); }
};

// Area under the interpolated precision p(r) = max{precision_k : recall_k >= r},
// integrated exactly over each 1/n_gt recall slab.
inline Frac envelope_area(const std::vector<bool>& flags, long long n_gt) {
    const long long L = static_cast<long long>(flags.size());
    std::vector<Frac> prec;
    std::vector<long long> tp_at;
    long long tp = 0;
    for (long long k = 0; k < L; ++k) {
        tp += flags[static_cast<std::size_t>(k)];
        prec.emplace_back(tp, k + 1);
        tp_at.push_back(tp);
    }
    Frac area(0, 1);
    for (long long slab = 1; slab <= n_gt; ++slab) {
        Frac best(0, 1);
        for (long long k = 0; k < L; ++k) {
            if (tp_at[static_cast<std::size_t>(k)] >= slab && best < prec[static_cast<std::size_t>(k)]) {
                best = prec[static_cast<std::size_t>(k)];
            }
        }
        area = area + best * Frac(1, n_gt);
    }
    return area;
}

// x[C] @ W[C,O] + b
inline std::vector<double> affine(const double* x, const LinearParams<double>& p, std::size_t C) {
    const std::size_t O = p.weight.dim(1);
    std::vector<double> y(O);
    for (std::size_t o = 0; o < O; ++o) {
        double s = p.bias.defined() ? p.bias[o] : 0.0;
        for (std::size_t c = 0; c < C; ++c) s += x[c] * p.weight[c * O + o];
        y[o] = s;
    }
    return y;
}

// Dense multi-head attention over tokens[n][C] where token i may attend to j
// only if allowed(i, j). Written without any of the library's attention code.
template <typename Allowed>
std::vector<std::vector<double>> dense_attention(const std::vector<std::vector<double>>& tokens,
                                                 const AttentionParams<double>& p, Allowed allowed) {
    const std::size_t n = tokens.size(), C = tokens[0].size(), hd = C / p.heads;
    std::vector<std::vector<double>> q(n), k(n), v(n), out(n, std::vector<double>(C, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        q[i] = affine(tokens[i].data(), p.q, C);
        k[i] = affine(tokens[i].data(), p.k, C);
        v[i] = affine(tokens[i].data(), p.v, C);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> mixed(C, 0.0);
        for (std::size_t h = 0; h < p.heads; ++h) {
            std::vector<double> logit(n, -INFINITY);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                if (!allowed(i, j)) continue;
                double s = 0;
                for (std::size_t d = 0; d < hd; ++d) s += q[i][h * hd + d] * k[j][h * hd + d];
                logit[j] = s / std::sqrt(static_cast<double>(hd));
                mx = std::max(mx, logit[j]);
            }
            double z = 0;
            for (std::size_t j = 0; j < n; ++j) z += allowed(i, j) ? std::exp(logit[j] - mx) : 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (!allowed(i, j)) continue;
                const double a = std::exp(logit[j] - mx) / z;
                for (std::size_t d = 0; d < hd; ++d) mixed[h * hd + d] += a * v[j][h * hd + d];
            }
        }
        out[i] = affine(mixed.data(), p.proj, C);
    }
    return out;
}

// Group index along one axis in the padded shifted-window partition: the map
// is cut at s, s+w, s+2w, ... so the first s indices form their own group.
inline std::size_t shifted_group(std::size_t r, std::size_t L, std::size_t w, std::size_t s) {
    if (L <= w || s == 0) return r / w;
    return (r + w - s) / w;
}

}  // namespace swinfe_oracle

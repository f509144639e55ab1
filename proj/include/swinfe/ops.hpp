#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "swinfe/tape.hpp"
#include "swinfe/tensor.hpp"

// Differentiable tensor operations. Every op takes the Tape first; it always
// computes the forward value and records a backward closure only when some
// input requires a gradient and the tape is recording.

namespace swinfe {

namespace kernel {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernel

namespace detail {

template <typename T>
Tensor<T> result(Tape<T>& tape, Shape shape, std::initializer_list<const Tensor<T>*> parents) {
    return Tensor<T>(std::move(shape), T(0), tape.needs_grad(parents));
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <typename T>
bool wants(const std::shared_ptr<TensorData<T>>& p) {
    return p->requires_grad;
}

}  // namespace detail

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("add", a, b);
    auto out = detail::result(tape, a.shape(), {&a, &b});
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    if (out.requires_grad()) {
        auto pa = a.impl(), pb = b.impl();
        tape.record("add", {pa, pb}, out, [pa, pb](std::span<const T> g) {
            for (auto* p : {pa.get(), pb.get()}) {
                if (!p->requires_grad) continue;
                auto d = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
        });
    }
    return out;
}

/// a + alpha * b
template <typename T>
Tensor<T> add_scaled(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, T alpha) {
    detail::require_same_shape("add_scaled", a, b);
    auto out = detail::result(tape, a.shape(), {&a, &b});
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + alpha * y[i];
    if (out.requires_grad()) {
        auto pa = a.impl(), pb = b.impl();
        tape.record("add_scaled", {pa, pb}, out, [pa, pb, alpha](std::span<const T> g) {
            if (pa->requires_grad) {
                auto d = pa->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (pb->requires_grad) {
                auto d = pb->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += alpha * g[i];
            }
        });
    }
    return out;
}

/// a + b where b's shape is a trailing suffix of a's shape (b is tiled).
template <typename T>
Tensor<T> add_broadcast(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - bs.size())) {
        throw ShapeError("add_broadcast: " + shape_str(bs) + " is not a suffix of " + shape_str(as));
    }
    auto out = detail::result(tape, as, {&a, &b});
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    const std::size_t inner = y.size();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i % inner];
    if (out.requires_grad()) {
        auto pa = a.impl(), pb = b.impl();
        tape.record("add_broadcast", {pa, pb}, out, [pa, pb, inner](std::span<const T> g) {
            if (pa->requires_grad) {
                auto d = pa->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (pb->requires_grad) {
                auto d = pb->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i % inner] += g[i];
            }
        });
    }
    return out;
}

/// Elementwise product.
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("mul", a, b);
    auto out = detail::result(tape, a.shape(), {&a, &b});
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    if (out.requires_grad()) {
        auto pa = a.impl(), pb = b.impl();
        tape.record("mul", {pa, pb}, out, [pa, pb](std::span<const T> g) {
            if (pa->requires_grad) {
                auto d = pa->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                auto d = pb->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * pa->value[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T s) {
    auto out = detail::result(tape, a.shape(), {&a});
    auto o = out.mutable_data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
    if (out.requires_grad()) {
        auto pa = a.impl();
        tape.record("scale", {pa}, out, [pa, s](std::span<const T> g) {
            auto d = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
        });
    }
    return out;
}

/// Sum of all elements, as a scalar tensor. Sequential order.
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
    auto out = detail::result(tape, Shape{}, {&a});
    T acc = T(0);
    for (T v : a.data()) acc += v;
    out.mutable_data()[0] = acc;
    if (out.requires_grad()) {
        auto pa = a.impl();
        tape.record("sum", {pa}, out, [pa](std::span<const T> g) {
            auto d = pa->grad_buffer();
            for (auto& v : d) v += g[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a) {
    return scale(tape, sum(tape, a), T(1) / static_cast<T>(a.numel()));
}

/// Batched matrix product a[..,m,k] x b[..,k,n]. `b` may be rank 2 (shared
/// across the batch) or carry the same leading dims as `a`. With
/// `transpose_b` the second operand is read as b[..,n,k].
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false,
                 std::string_view tag = "matmul") {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands must be at least rank 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const auto& as = a.shape();
    const auto& bs = b.shape();
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as.back();
    const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
    const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
    const bool shared_b = bs.size() == 2;
    bool ok = bk == k;
    if (!shared_b) ok = ok && bs.size() == as.size() && std::equal(as.begin(), as.end() - 2, bs.begin());
    if (!ok) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs) +
                         (transpose_b ? " (b transposed)" : ""));
    }
    const std::size_t batch = a.numel() / (m * k);
    Shape os(as.begin(), as.end() - 2);
    os.push_back(m);
    os.push_back(n);
    auto out = detail::result(tape, os, {&a, &b});
    T* o = out.mutable_data().data();
    const T* x = a.data().data();
    const T* y = b.data().data();
    const std::size_t bstride = shared_b ? 0 : k * n;
    for (std::size_t s = 0; s < batch; ++s) {
        if (transpose_b) {
            kernel::gemm_nt(x + s * m * k, y + s * bstride, o + s * m * n, m, k, n);
        } else {
            kernel::gemm_nn(x + s * m * k, y + s * bstride, o + s * m * n, m, k, n);
        }
    }
    tape.count(tag, static_cast<std::uint64_t>(batch) * m * n * k);
    if (out.requires_grad()) {
        auto pa = a.impl(), pb = b.impl();
        tape.record("matmul", {pa, pb}, out,
                    [pa, pb, batch, m, k, n, bstride, transpose_b](std::span<const T> g) {
                        const T* gd = g.data();
                        if (pa->requires_grad) {
                            T* da = pa->grad_buffer().data();
                            const T* y = pb->value.data();
                            for (std::size_t s = 0; s < batch; ++s) {
                                if (transpose_b) {
                                    // dA = dC * B, B stored [n,k]
                                    kernel::gemm_nn(gd + s * m * n, y + s * bstride, da + s * m * k, m, n, k);
                                } else {
                                    // dA = dC * B^T, B stored [k,n]
                                    kernel::gemm_nt(gd + s * m * n, y + s * bstride, da + s * m * k, m, n, k);
                                }
                            }
                        }
                        if (pb->requires_grad) {
                            T* db = pb->grad_buffer().data();
                            const T* x = pa->value.data();
                            for (std::size_t s = 0; s < batch; ++s) {
                                if (transpose_b) {
                                    // dB[n,k] += dC^T * A
                                    kernel::gemm_tn(gd + s * m * n, x + s * m * k, db + s * bstride, n, m, k);
                                } else {
                                    // dB[k,n] += A^T * dC
                                    kernel::gemm_tn(x + s * m * k, gd + s * m * n, db + s * bstride, k, m, n);
                                }
                            }
                        }
                    });
    }
    return out;
}

/// x[.., in] * weight[in, out] + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::string_view tag = "linear") {
    auto y = matmul(tape, x, weight, false, tag);
    return bias.defined() ? add_broadcast(tape, y, bias) : y;
}

template <typename T>
Tensor<T> softmax_lastdim(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("softmax_lastdim: empty last dimension");
    auto out = detail::result(tape, x.shape(), {&x});
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    const T* in = x.data().data();
    T* o = out.mutable_data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = in + r * d;
        T* yr = o + r * d;
        T mx = xr[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        T z = T(0);
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
        }
        for (std::size_t j = 0; j < d; ++j) yr[j] /= z;
    }
    if (out.requires_grad()) {
        auto px = x.impl(), po = out.impl();
        tape.record("softmax", {px}, out, [px, po, rows, d](std::span<const T> g) {
            T* dx = px->grad_buffer().data();
            const T* y = po->value.data();
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
            }
        });
    }
    return out;
}

/// Normalizes over the last dimension, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match feature dim of " + shape_str(x.shape()));
    }
    auto out = detail::result(tape, x.shape(), {&x, &gamma, &beta});
    const std::size_t rows = x.numel() / d;
    std::vector<T> xhat(x.numel());
    std::vector<T> inv_std(rows);
    const T* in = x.data().data();
    const T* gm = gamma.data().data();
    const T* bt = beta.data().data();
    T* o = out.mutable_data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = in + r * d;
        T mu = T(0);
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (xr[j] - mu) * is;
            xhat[r * d + j] = h;
            o[r * d + j] = h * gm[j] + bt[j];
        }
    }
    if (out.requires_grad()) {
        auto px = x.impl(), pg = gamma.impl(), pb = beta.impl();
        tape.record("layer_norm", {px, pg, pb}, out,
                    [px, pg, pb, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const T> g) {
                        const T* gm = pg->value.data();
                        if (pg->requires_grad || pb->requires_grad) {
                            auto dg = pg->grad_buffer();
                            auto db = pb->grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t j = 0; j < d; ++j) {
                                    dg[j] += g[r * d + j] * xhat[r * d + j];
                                    db[j] += g[r * d + j];
                                }
                            }
                        }
                        if (!px->requires_grad) return;
                        T* dx = px->grad_buffer().data();
                        const T dn = static_cast<T>(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                            T s1 = T(0), s2 = T(0);
                            for (std::size_t j = 0; j < d; ++j) {
                                const T dh = g[r * d + j] * gm[j];
                                s1 += dh;
                                s2 += dh * xhat[r * d + j];
                            }
                            for (std::size_t j = 0; j < d; ++j) {
                                const T dh = g[r * d + j] * gm[j];
                                dx[r * d + j] += inv_std[r] / dn * (dn * dh - s1 - xhat[r * d + j] * s2);
                            }
                        }
                    });
    }
    return out;
}

/// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
    constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k1 = T(0.044715);
    auto out = detail::result(tape, x.shape(), {&x});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        const T v = in[i];
        o[i] = T(0.5) * v * (T(1) + std::tanh(k0 * (v + k1 * v * v * v)));
    }
    if (out.requires_grad()) {
        auto px = x.impl();
        tape.record("gelu", {px}, out, [px](std::span<const T> g) {
            auto dx = px->grad_buffer();
            const auto& in = px->value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T v = in[i];
                const T t = std::tanh(k0 * (v + k1 * v * v * v));
                const T dt = (T(1) - t * t) * k0 * (T(1) + T(3) * k1 * v * v);
                dx[i] += g[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
    auto out = detail::result(tape, x.shape(), {&x});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
    if (out.requires_grad()) {
        auto px = x.impl();
        tape.record("relu", {px}, out, [px](std::span<const T> g) {
            auto dx = px->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (px->value[i] > T(0)) dx[i] += g[i];
            }
        });
    }
    return out;
}

/// Copy with a new shape of the same element count.
template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto out = detail::result(tape, std::move(shape), {&x});
    std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
    if (out.requires_grad()) {
        auto px = x.impl();
        tape.record("reshape", {px}, out, [px](std::span<const T> g) {
            auto dx = px->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        });
    }
    return out;
}

namespace detail {

// For each output linear index, the input linear index under `axes`.
inline std::vector<std::size_t> permute_index(const Shape& in_shape, const std::vector<std::size_t>& axes) {
    const std::size_t r = in_shape.size();
    const auto in_strides = strides_of(in_shape);
    Shape out_shape(r);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[axes[i]];
        step[i] = in_strides[axes[i]];
    }
    const std::size_t n = shape_numel(in_shape);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
        map[o] = src;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            src += step[d];
            if (idx[d] < out_shape[d]) break;
            src -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    return map;
}

}  // namespace detail

/// Axis permutation: out.shape[i] = x.shape[axes[i]].
template <typename T>
Tensor<T> permute(Tape<T>& tape, const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    std::vector<bool> seen(r, false);
    bool ok = axes.size() == r;
    for (std::size_t a : axes) {
        if (!ok || a >= r || seen[a]) {
            ok = false;
            break;
        }
        seen[a] = true;
    }
    if (!ok) throw ShapeError("permute: invalid axes for shape " + shape_str(x.shape()));
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) os[i] = x.shape()[axes[i]];
    auto out = detail::result(tape, os, {&x});
    auto map = detail::permute_index(x.shape(), axes);
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[map[i]];
    if (out.requires_grad()) {
        auto px = x.impl();
        tape.record("permute", {px}, out, [px, map = std::move(map)](std::span<const T> g) {
            auto dx = px->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dx[map[i]] += g[i];
        });
    }
    return out;
}

/// Toroidal roll of two axes: out[.., i, .., j, ..] = x[.., (i+s) mod H, .., (j+s) mod W, ..].
/// A positive `shift` moves content towards lower indices (a roll by -shift).
template <typename T>
Tensor<T> roll2d(Tape<T>& tape, const Tensor<T>& x, std::size_t axis_h, std::size_t axis_w, long shift) {
    if (axis_h >= x.rank() || axis_w >= x.rank() || axis_h >= axis_w) {
        throw ShapeError("roll2d: bad axes for shape " + shape_str(x.shape()));
    }
    const auto& s = x.shape();
    const long H = static_cast<long>(s[axis_h]);
    const long W = static_cast<long>(s[axis_w]);
    auto out = detail::result(tape, s, {&x});
    const auto st = strides_of(s);
    const std::size_t n = x.numel();
    std::vector<std::size_t> map(n);
    for (std::size_t o = 0; o < n; ++o) {
        const long i = static_cast<long>((o / st[axis_h]) % s[axis_h]);
        const long j = static_cast<long>((o / st[axis_w]) % s[axis_w]);
        const long si = ((i + shift) % H + H) % H;
        const long sj = ((j + shift) % W + W) % W;
        map[o] = o + static_cast<std::size_t>(si - i) * st[axis_h] + static_cast<std::size_t>(sj - j) * st[axis_w];
    }
    auto od = out.mutable_data();
    auto in = x.data();
    for (std::size_t o = 0; o < n; ++o) od[o] = in[map[o]];
    if (out.requires_grad()) {
        auto px = x.impl();
        tape.record("roll2d", {px}, out, [px, map = std::move(map)](std::span<const T> g) {
            auto dx = px->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dx[map[i]] += g[i];
        });
    }
    return out;
}

/// Concatenation along `axis`; all other dims must agree.
template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
    Shape os = s0;
    os[axis] = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
        if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
        os[axis] += s[axis];
        any_grad = any_grad || p.requires_grad();
    }
    Tensor<T> out(os, T(0), tape.recording() && any_grad);
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
    const std::size_t orow = os[axis] * inner;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    auto od = out.mutable_data();
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t prow = p.shape()[axis] * inner;
        auto pd = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pd.begin() + o * prow, prow, od.begin() + o * orow + off);
        }
        off += prow;
    }
    if (out.requires_grad()) {
        std::vector<std::shared_ptr<TensorData<T>>> ps;
        for (const auto& p : parts) ps.push_back(p.impl());
        tape.record("concat", ps, out, [ps, offsets, outer, inner, orow](std::span<const T> g) {
            for (std::size_t k = 0; k < ps.size(); ++k) {
                auto& p = *ps[k];
                if (!p.requires_grad) continue;
                auto dp = p.grad_buffer();
                const std::size_t prow = dp.size() / outer;
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t i = 0; i < prow; ++i) dp[o * prow + i] += g[o * orow + offsets[k] + i];
                }
            }
        });
    }
    return out;
}

/// out[i] = src[index[i]] (flat), reshaped to `shape`. Backward scatter-adds.
template <typename T>
Tensor<T> gather(Tape<T>& tape, const Tensor<T>& src, const std::vector<std::size_t>& index, Shape shape) {
    if (shape_numel(shape) != index.size()) throw ShapeError("gather: index count does not match output shape");
    for (auto i : index) {
        if (i >= src.numel()) throw ShapeError("gather: index out of range");
    }
    auto out = detail::result(tape, std::move(shape), {&src});
    auto o = out.mutable_data();
    auto in = src.data();
    for (std::size_t i = 0; i < index.size(); ++i) o[i] = in[index[i]];
    if (out.requires_grad()) {
        auto ps = src.impl();
        tape.record("gather", {ps}, out, [ps, index](std::span<const T> g) {
            auto d = ps->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) d[index[i]] += g[i];
        });
    }
    return out;
}

namespace detail {

struct ConvGeometry {
    std::size_t B, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo;
    std::size_t K() const { return Cin * kh * kw; }
    std::size_t P() const { return Ho * Wo; }
};

template <typename T>
void im2col(const T* x, T* col, const ConvGeometry& g) {
    const long H = static_cast<long>(g.H), W = static_cast<long>(g.W);
    for (std::size_t c = 0; c < g.Cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.P();
                for (std::size_t oy = 0; oy < g.Ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    for (std::size_t ox = 0; ox < g.Wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        row[oy * g.Wo + ox] =
                            (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x[(c * g.H + iy) * g.W + ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, T* dx, const ConvGeometry& g) {
    const long H = static_cast<long>(g.H), W = static_cast<long>(g.W);
    for (std::size_t c = 0; c < g.Cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.P();
                for (std::size_t oy = 0; oy < g.Ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= H) continue;
                    for (std::size_t ox = 0; ox < g.Wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < W) dx[(c * g.H + iy) * g.W + ix] += row[oy * g.Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D cross-correlation. x[B,Cin,H,W], kernel[Cout,Cin,kh,kw], bias[Cout] (optional).
/// `pad` zeros precede each spatial axis and `pad_end` follow it.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad, std::size_t pad_end, std::string_view tag) {
    if (x.rank() != 4 || kernel.rank() != 4) {
        throw ShapeError("conv2d: expected rank-4 input and kernel, got " + shape_str(x.shape()) + " and " +
                         shape_str(kernel.shape()));
    }
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                           stride, pad, 0, 0};
    if (kernel.dim(1) != g.Cin) {
        throw ShapeError("conv2d: input channels " + std::to_string(g.Cin) + " vs kernel " +
                         shape_str(kernel.shape()));
    }
    if (bias.defined() && bias.shape() != Shape{g.Cout}) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " for " + std::to_string(g.Cout) +
                         " output channels");
    }
    const std::size_t span_h = g.H + pad + pad_end, span_w = g.W + pad + pad_end;
    if (span_h < g.kh || span_w < g.kw || (span_h - g.kh) % stride != 0 || (span_w - g.kw) % stride != 0) {
        throw ShapeError("conv2d: non-integral output size for input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(kernel.shape()) + ", stride " + std::to_string(stride) + ", pad " +
                         std::to_string(pad) + "/" + std::to_string(pad_end));
    }
    g.Ho = (span_h - g.kh) / stride + 1;
    g.Wo = (span_w - g.kw) / stride + 1;
    auto out = detail::result(tape, Shape{g.B, g.Cout, g.Ho, g.Wo}, {&x, &kernel, &bias});
    const bool keep = out.requires_grad();
    std::vector<T> cols(keep ? g.B * g.K() * g.P() : g.K() * g.P());
    T* o = out.mutable_data().data();
    const T* w = kernel.data().data();
    for (std::size_t b = 0; b < g.B; ++b) {
        T* col = cols.data() + (keep ? b * g.K() * g.P() : 0);
        detail::im2col(x.data().data() + b * g.Cin * g.H * g.W, col, g);
        T* ob = o + b * g.Cout * g.P();
        if (bias.defined()) {
            for (std::size_t c = 0; c < g.Cout; ++c) std::fill_n(ob + c * g.P(), g.P(), bias[c]);
        }
        kernel::gemm_nn(w, col, ob, g.Cout, g.K(), g.P());
    }
    tape.count(tag, static_cast<std::uint64_t>(g.B) * g.Cout * g.P() * g.K());
    if (keep) {
        auto px = x.impl(), pk = kernel.impl();
        auto pb = bias.defined() ? bias.impl() : nullptr;
        std::vector<std::shared_ptr<TensorData<T>>> parents{px, pk};
        if (pb) parents.push_back(pb);
        tape.record("conv2d", parents, out, [px, pk, pb, g, cols = std::move(cols)](std::span<const T> gr) {
            const T* gd = gr.data();
            if (pk->requires_grad) {
                T* dk = pk->grad_buffer().data();
                for (std::size_t b = 0; b < g.B; ++b) {
                    kernel::gemm_nt(gd + b * g.Cout * g.P(), cols.data() + b * g.K() * g.P(), dk, g.Cout, g.P(),
                                    g.K());
                }
            }
            if (pb && pb->requires_grad) {
                auto db = pb->grad_buffer();
                for (std::size_t b = 0; b < g.B; ++b) {
                    for (std::size_t c = 0; c < g.Cout; ++c) {
                        const T* gc = gd + (b * g.Cout + c) * g.P();
                        for (std::size_t p = 0; p < g.P(); ++p) db[c] += gc[p];
                    }
                }
            }
            if (px->requires_grad) {
                T* dx = px->grad_buffer().data();
                std::vector<T> dcol(g.K() * g.P());
                for (std::size_t b = 0; b < g.B; ++b) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    kernel::gemm_tn(pk->value.data(), gd + b * g.Cout * g.P(), dcol.data(), g.K(), g.Cout, g.P());
                    detail::col2im(dcol.data(), dx + b * g.Cin * g.H * g.W, g);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad, std::string_view tag = "conv2d") {
    return conv2d(tape, x, kernel, bias, stride, pad, pad, tag);
}

/// Nearest-neighbour 2x upsampling of x[B,C,H,W].
template <typename T>
Tensor<T> upsample_nearest_2x(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest_2x: expected [B,C,H,W], got " + shape_str(x.shape()));
    const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    auto out = detail::result(tape, Shape{x.dim(0), x.dim(1), 2 * H, 2 * W}, {&x});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < 2 * H; ++y) {
            for (std::size_t xx = 0; xx < 2 * W; ++xx) {
                o[(p * 2 * H + y) * 2 * W + xx] = in[(p * H + y / 2) * W + xx / 2];
            }
        }
    }
    if (out.requires_grad()) {
        auto px = x.impl();
        tape.record("upsample2x", {px}, out, [px, planes, H, W](std::span<const T> g) {
            auto dx = px->grad_buffer();
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t y = 0; y < 2 * H; ++y) {
                    for (std::size_t xx = 0; xx < 2 * W; ++xx) {
                        dx[(p * H + y / 2) * W + xx / 2] += g[(p * 2 * H + y) * 2 * W + xx];
                    }
                }
            }
        });
    }
    return out;
}

/// sum_i w_i * BCE(sigmoid(logit_i), y_i), computed in the stable log-sum-exp form.
template <typename T>
Tensor<T> bce_with_logits_sum(Tape<T>& tape, const Tensor<T>& logits, std::vector<T> targets,
                              std::vector<T> weights) {
    if (targets.size() != logits.numel() || weights.size() != logits.numel()) {
        throw ShapeError("bce_with_logits_sum: target/weight length does not match logits " +
                         shape_str(logits.shape()));
    }
    auto out = detail::result(tape, Shape{}, {&logits});
    auto x = logits.data();
    T acc = T(0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (weights[i] == T(0)) continue;
        const T v = x[i];
        acc += weights[i] * (std::max(v, T(0)) - v * targets[i] + std::log1p(std::exp(-std::abs(v))));
    }
    out.mutable_data()[0] = acc;
    if (out.requires_grad()) {
        auto pl = logits.impl();
        tape.record("bce_with_logits", {pl}, out,
                    [pl, targets = std::move(targets), weights = std::move(weights)](std::span<const T> g) {
                        auto d = pl->grad_buffer();
                        for (std::size_t i = 0; i < d.size(); ++i) {
                            if (weights[i] == T(0)) continue;
                            const T s = T(1) / (T(1) + std::exp(-pl->value[i]));
                            d[i] += g[0] * weights[i] * (s - targets[i]);
                        }
                    });
    }
    return out;
}

template <typename T>
T smooth_l1(T x, T beta) {
    const T a = std::abs(x);
    return a < beta ? T(0.5) * a * a / beta : a - T(0.5) * beta;
}

/// sum_i w_i * smoothL1(pred_i - target_i; beta).
template <typename T>
Tensor<T> smooth_l1_sum(Tape<T>& tape, const Tensor<T>& pred, std::vector<T> targets, std::vector<T> weights,
                        T beta) {
    if (targets.size() != pred.numel() || weights.size() != pred.numel()) {
        throw ShapeError("smooth_l1_sum: target/weight length does not match " + shape_str(pred.shape()));
    }
    auto out = detail::result(tape, Shape{}, {&pred});
    auto x = pred.data();
    T acc = T(0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (weights[i] != T(0)) acc += weights[i] * smooth_l1(x[i] - targets[i], beta);
    }
    out.mutable_data()[0] = acc;
    if (out.requires_grad()) {
        auto pp = pred.impl();
        tape.record("smooth_l1", {pp}, out,
                    [pp, beta, targets = std::move(targets), weights = std::move(weights)](std::span<const T> g) {
                        auto d = pp->grad_buffer();
                        for (std::size_t i = 0; i < d.size(); ++i) {
                            if (weights[i] == T(0)) continue;
                            const T r = pp->value[i] - targets[i];
                            const T dr = std::abs(r) < beta ? r / beta : (r > T(0) ? T(1) : T(-1));
                            d[i] += g[0] * weights[i] * dr;
                        }
                    });
    }
    return out;
}

}  // namespace swinfe

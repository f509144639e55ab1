#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "swinfe/random.hpp"
#include "swinfe/tensor.hpp"

namespace swinfe {

/// Ordered collection of named learnable tensors. Iteration order is
/// lexicographic by name, which is also the checkpoint order.
template <typename T>
class ParamSet {
public:
    Tensor<T> add(const std::string& name, Shape shape) {
        if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Tensor<T> t(std::move(shape), T(0), true);
        params_.emplace(name, t);
        return t;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Tensor<T> get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : params_) t.zero_grad();
    }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    /// Deep copy: fresh storage with identical names and values.
    ParamSet clone() const {
        ParamSet out;
        for (const auto& [name, t] : params_) out.params_.emplace(name, t.clone());
        return out;
    }

private:
    std::map<std::string, Tensor<T>> params_;
};

template <typename T>
struct LinearParams {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out], may be undefined
};

template <typename T>
struct NormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
struct ConvParams {
    Tensor<T> weight;  // [out, in, k, k]
    Tensor<T> bias;    // [out]
};

inline constexpr double kProjectionInitStd = 0.02;

template <typename T>
LinearParams<T> make_linear(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                            bool with_bias, Rng& rng) {
    LinearParams<T> p;
    p.weight = ps.add(name + ".weight", {in, out});
    fill_trunc_normal(p.weight.mutable_data(), kProjectionInitStd, rng);
    if (with_bias) p.bias = ps.add(name + ".bias", {out});
    return p;
}

template <typename T>
NormParams<T> make_norm(ParamSet<T>& ps, const std::string& name, std::size_t dim) {
    NormParams<T> p;
    p.gamma = ps.add(name + ".weight", {dim});
    p.beta = ps.add(name + ".bias", {dim});
    for (auto& v : p.gamma.mutable_data()) v = T(1);
    return p;
}

/// Conv kernels use a fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
ConvParams<T> make_conv(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                        Rng& rng) {
    ConvParams<T> p;
    p.weight = ps.add(name + ".weight", {out, in, k, k});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    fill_uniform(p.weight.mutable_data(), -bound, bound, rng);
    p.bias = ps.add(name + ".bias", {out});
    return p;
}

}  // namespace swinfe

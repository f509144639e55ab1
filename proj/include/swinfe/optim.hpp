#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "swinfe/params.hpp"

namespace swinfe {

struct AdamWOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// Adam with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
template <typename T>
class AdamW {
public:
    struct Moments {
        std::vector<T> m, v;
    };

    explicit AdamW(AdamWOptions opt = {}) : opt_(opt) {}

    const AdamWOptions& options() const { return opt_; }
    std::uint64_t step_count() const { return step_; }
    void set_step_count(std::uint64_t t) { step_ = t; }
    std::map<std::string, Moments>& moments() { return moments_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }

    /// Zero moments for every parameter (idempotent).
    void init(const ParamSet<T>& params) {
        for (const auto& [name, t] : params) {
            auto& mo = moments_[name];
            if (mo.m.size() != t.numel()) {
                mo.m.assign(t.numel(), T(0));
                mo.v.assign(t.numel(), T(0));
            }
        }
    }

    /// Applies one update from the gradients stored on `params`. Refuses the
    /// whole step (no parameter touched) if any gradient is non-finite.
    void step(ParamSet<T>& params) {
        for (const auto& [name, t] : params) {
            for (T g : t.grad()) {
                if (!std::isfinite(static_cast<double>(g))) {
                    throw NumericError("adamw: non-finite gradient in '" + name + "', step refused");
                }
            }
        }
        init(params);
        ++step_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
        for (const auto& [name, tensor] : params) {
            Tensor<T> t = tensor;
            auto& mo = moments_[name];
            auto w = t.mutable_data();
            auto g = t.grad();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
                const double m = opt_.beta1 * static_cast<double>(mo.m[i]) + (1.0 - opt_.beta1) * gi;
                const double v = opt_.beta2 * static_cast<double>(mo.v[i]) + (1.0 - opt_.beta2) * gi * gi;
                mo.m[i] = static_cast<T>(m);
                mo.v[i] = static_cast<T>(v);
                const double mhat = m / bc1, vhat = v / bc2;
                const double theta = static_cast<double>(w[i]);
                w[i] = static_cast<T>(theta - opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * theta));
            }
        }
    }

private:
    AdamWOptions opt_;
    std::uint64_t step_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace swinfe

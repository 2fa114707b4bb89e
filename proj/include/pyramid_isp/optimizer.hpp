#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pyramid_isp/parameters.hpp"

namespace pyramid_isp {

/// Adam, betas (0.9, 0.999), eps 1e-8, no weight decay.
template <typename T>
class Adam {
public:
    struct Moments {
        Tensor<T> m, v;
    };

    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    /// One update of every parameter that has a gradient. Gradients are
    /// checked first so a bad step leaves the parameters untouched.
    void step(ParameterSet<T>& params, double lr) {
        for (auto& [name, p] : params)
            if (!p.grad().empty() && !p.grad().all_finite()) throw NonFiniteError("gradient of '" + name + "'");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        const T step_size = static_cast<T>(lr / bc1);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        const T e = static_cast<T>(eps);
        for (auto& [name, p] : params) {
            if (p.grad().empty()) continue;
            auto& st = state_[name];
            auto& w = p.mutable_value();
            if (st.m.empty()) {
                st.m = Tensor<T>(w.shape());
                st.v = Tensor<T>(w.shape());
            }
            const auto& g = p.grad();
            for (std::size_t i = 0; i < w.size(); ++i) {
                st.m[i] = b1 * st.m[i] + (T(1) - b1) * g[i];
                st.v[i] = b2 * st.v[i] + (T(1) - b2) * g[i] * g[i];
                w[i] -= step_size * st.m[i] / (std::sqrt(st.v[i]) * inv_sqrt_bc2 + e);
            }
        }
    }

    void reset() {
        state_.clear();
        t_ = 0;
    }

    long steps() const { return t_; }
    void set_steps(long t) { t_ = t; }
    std::map<std::string, Moments>& state() { return state_; }
    const std::map<std::string, Moments>& state() const { return state_; }

private:
    long t_ = 0;
    std::map<std::string, Moments> state_;
};

}  // namespace pyramid_isp

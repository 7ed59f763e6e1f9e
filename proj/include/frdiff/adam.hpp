#pragma once

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace frdiff {

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    long long step = 0;
    AdamHyper hyper;
};

template <typename T>
void require_finite_grad(const Param<T>& p) {
    for (std::size_t i = 0; i < p.grad.size(); ++i)
        if (!std::isfinite(p.grad[i]))
            throw NumericError(concat("adam: non-finite gradient in '", p.name, "' at index ", i));
}

/// Bias-corrected Adam update of one parameter.
template <typename T>
void adam_step(Param<T>& p, AdamState<T>& s) {
    require_finite_grad(p);
    if (s.m.empty()) {
        s.m.assign(p.size(), T(0));
        s.v.assign(p.size(), T(0));
    }
    if (s.m.size() != p.size() || s.v.size() != p.size())
        throw ShapeError(concat("adam: state shape mismatch for '", p.name, "'"));
    ++s.step;
    const auto& h = s.hyper;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        const double m = h.beta1 * s.m[i] + (1.0 - h.beta1) * g;
        const double v = h.beta2 * s.v[i] + (1.0 - h.beta2) * g * g;
        s.m[i] = static_cast<T>(m);
        s.v[i] = static_cast<T>(v);
        if (g == 0.0 && m == 0.0) continue;
        p.value[i] -= static_cast<T>(h.lr * (m / c1) / (std::sqrt(v / c2) + h.eps));
    }
}

/// Adam over a whole parameter list; gradients are validated before any update lands.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(ParamList<T> params, AdamHyper hyper) : params_(std::move(params)), states_(params_.size()) {
        for (auto& s : states_) s.hyper = hyper;
    }

    void step() {
        for (auto* p : params_) require_finite_grad(*p);
        for (std::size_t i = 0; i < params_.size(); ++i) adam_step(*params_[i], states_[i]);
    }
    void zero_grad() { zero_grads(params_); }

    const ParamList<T>& params() const noexcept { return params_; }
    std::vector<AdamState<T>>& states() noexcept { return states_; }
    const std::vector<AdamState<T>>& states() const noexcept { return states_; }

private:
    ParamList<T> params_;
    std::vector<AdamState<T>> states_;
};

} // namespace frdiff

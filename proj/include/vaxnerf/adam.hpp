#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "vaxnerf/error.hpp"

namespace vaxnerf {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class Scalar>
struct AdamState {
    std::vector<Scalar> m;
    std::vector<Scalar> v;
    std::uint64_t step = 0;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, Scalar(0)), v(n, Scalar(0)) {}
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update of `params` in place.
template <class Scalar>
void adam_step(std::span<Scalar> params, std::span<const Scalar> grads, AdamState<Scalar>& state, double lr,
               const AdamConfig& cfg = {}) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ValidationError("adam_step: parameter, gradient and state sizes differ");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = static_cast<Scalar>(m);
        state.v[i] = static_cast<Scalar>(v);
        params[i] = static_cast<Scalar>(params[i] - lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
    }
}

}  // namespace vaxnerf

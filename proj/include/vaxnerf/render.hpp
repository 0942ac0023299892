#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "vaxnerf/camera.hpp"
#include "vaxnerf/error.hpp"

namespace vaxnerf {

/// sigma * delta is clamped here before exponentiation.
inline constexpr double kMaxOpticalDepth = 80.0;

struct RenderOutput {
    Vec3 color = Vec3::Zero();
    std::vector<double> weights;
    std::vector<double> transmittance;
    double acc_alpha = 0.0;
    double depth = 0.0;
};

/// Alpha compositing of N samples. Invalid samples (outside the hull) have
/// their density forced to zero, so they neither emit nor absorb.
/// `rgb` holds N rows of 3 values; `t` is optional and only feeds `depth`.
inline RenderOutput volume_render(std::span<const double> sigma, std::span<const double> rgb,
                                  std::span<const double> delta, std::span<const std::uint8_t> valid,
                                  std::span<const double> t = {}) {
    const std::size_t n = sigma.size();
    if (rgb.size() != 3 * n || delta.size() != n || valid.size() != n || (!t.empty() && t.size() != n))
        throw ValidationError("volume_render: input lengths differ");
    RenderOutput out;
    out.weights.resize(n);
    out.transmittance.resize(n);
    long double optical_depth = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(delta[i] >= 0.0)) throw ValidationError("volume_render: negative delta");
        double s = valid[i] ? sigma[i] : 0.0;
        if (s < 0.0) throw ValidationError("volume_render: negative density");
        double tau = std::min(s * delta[i], kMaxOpticalDepth);
        double trans = static_cast<double>(std::exp(-optical_depth));
        double w = trans * -std::expm1(-tau);
        out.transmittance[i] = trans;
        out.weights[i] = w;
        out.color += w * Vec3(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
        out.acc_alpha += w;
        if (!t.empty()) out.depth += w * t[i];
        optical_depth += tau;
    }
    return out;
}

/// Gradients of a scalar loss through volume_render. Given dL/dcolor and
/// dL/dacc_alpha, fills dL/dsigma (N) and dL/drgb (N x 3). Samples that are
/// invalid or clamped receive zero density gradient.
inline void volume_render_backward(std::span<const double> sigma, std::span<const double> rgb,
                                   std::span<const double> delta, std::span<const std::uint8_t> valid,
                                   const RenderOutput& out, const Vec3& d_color, double d_acc,
                                   std::span<double> d_sigma, std::span<double> d_rgb) {
    const std::size_t n = sigma.size();
    // g_i: derivative of the loss with respect to weight i.
    double suffix = 0.0;  // sum_{i > k} g_i w_i
    for (std::size_t k = n; k-- > 0;) {
        double g = d_color.x() * rgb[3 * k] + d_color.y() * rgb[3 * k + 1] + d_color.z() * rgb[3 * k + 2] + d_acc;
        double s = valid[k] ? sigma[k] : 0.0;
        double raw_tau = s * delta[k];
        double trans_next = out.transmittance[k] * std::exp(-std::min(raw_tau, kMaxOpticalDepth));
        double d_tau = g * trans_next - suffix;
        d_sigma[k] = (valid[k] && raw_tau < kMaxOpticalDepth) ? d_tau * delta[k] : 0.0;
        for (int c = 0; c < 3; ++c) d_rgb[3 * k + c] = out.weights[k] * d_color[c];
        suffix += g * out.weights[k];
    }
}

inline Vec3 composite_background(const RenderOutput& out, const Vec3& bg) {
    return out.color + (1.0 - out.acc_alpha) * bg;
}

/// Mean over the batch of squared L2 colour errors.
inline double rgb_loss(std::span<const Vec3> predicted, std::span<const Vec3> target) {
    if (predicted.size() != target.size()) throw ValidationError("rgb_loss: batch sizes differ");
    if (predicted.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) sum += (predicted[i] - target[i]).squaredNorm();
    return sum / static_cast<double>(predicted.size());
}

}  // namespace vaxnerf

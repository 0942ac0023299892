#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "vaxnerf/encoding.hpp"
#include "vaxnerf/mlp.hpp"
#include "vaxnerf/render.hpp"
#include "vaxnerf/sampling.hpp"

namespace vaxnerf {

/// Variable-length sample lists for a group of rays, flattened. Samples with
/// valid = 0 are never sent through the network.
struct RayBundle {
    std::vector<Vec3> directions;          // per ray, unit length
    std::vector<std::size_t> offsets{0};   // ray r owns samples [offsets[r], offsets[r+1])
    std::vector<Vec3> positions;
    std::vector<double> t;
    std::vector<double> delta;
    std::vector<std::uint8_t> valid;

    std::size_t rays() const { return directions.size(); }
    std::size_t samples() const { return positions.size(); }
    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto v : valid) n += v;
        return n;
    }

    void add_ray(const Ray& ray, const RaySamples& s) {
        directions.push_back(ray.direction);
        for (std::size_t i = 0; i < s.size(); ++i) {
            positions.push_back(ray.at(s.t[i]));
            t.push_back(s.t[i]);
            delta.push_back(s.delta[i]);
            valid.push_back(s.keep[i]);
        }
        offsets.push_back(positions.size());
    }

    /// Only the valid slots of a packed batch, ray by ray.
    static RayBundle from_packed(const PackedBatch& b) {
        RayBundle out;
        for (std::size_t r = 0; r < b.rays; ++r) {
            out.directions.push_back(b.directions[r]);
            for (std::size_t k = 0; k < b.counts[r]; ++k) {
                std::size_t s = b.slot(r, k);
                out.positions.push_back(b.positions[s]);
                out.t.push_back(b.t[s]);
                out.delta.push_back(b.delta[s]);
                out.valid.push_back(1);
            }
            out.offsets.push_back(out.positions.size());
        }
        return out;
    }
};

struct BundleResult {
    std::vector<Vec3> colors;     // composited over the background
    std::vector<double> weights;  // per sample, aligned with the bundle
    double loss = 0.0;            // loss_scale * sum of squared errors
    std::size_t evaluations = 0;  // network evaluations performed
};

/// Evaluates the network on every valid sample of `bundle`, renders each ray
/// and composites it over `background`. When `targets` is given the scaled
/// squared error is returned and, if `grads` is non-null, its exact gradient
/// with respect to all parameters is accumulated into `grads`. `raw_noise`,
/// when non-empty, is added to the raw density of each sample (regularizer).
template <class Scalar>
BundleResult render_bundle(const MlpParams<Scalar>& params, const RayBundle& bundle, const Vec3& background,
                           std::span<const Vec3> targets = {}, double loss_scale = 1.0,
                           MlpParams<Scalar>* grads = nullptr, std::span<const double> raw_noise = {}) {
    using Mat = typename MlpParams<Scalar>::Mat;
    const MlpConfig& cfg = params.config();
    const bool with_loss = !targets.empty();
    if (with_loss && targets.size() != bundle.rays()) throw ValidationError("render_bundle: one target per ray expected");

    std::vector<std::size_t> active;
    active.reserve(bundle.samples());
    for (std::size_t i = 0; i < bundle.samples(); ++i)
        if (bundle.valid[i]) active.push_back(i);
    const auto m = static_cast<Eigen::Index>(active.size());

    Mat x_enc(cfg.pos_dim(), m), d_enc(cfg.dir_dim(), m);
    {
        std::vector<Scalar> dir_code(cfg.dir_dim());
        Eigen::Index col = 0;
        for (std::size_t r = 0; r < bundle.rays(); ++r) {
            positional_encoding_into(bundle.directions[r], cfg.dir_levels, cfg.include_input, dir_code.data());
            for (std::size_t i = bundle.offsets[r]; i < bundle.offsets[r + 1]; ++i) {
                if (!bundle.valid[i]) continue;
                positional_encoding_into(bundle.positions[i], cfg.pos_levels, cfg.include_input, x_enc.col(col).data());
                for (int k = 0; k < cfg.dir_dim(); ++k) d_enc(k, col) = dir_code[k];
                ++col;
            }
        }
    }

    Mat sigma_raw, rgb_raw;
    MlpTape<Scalar> tape;
    if (m > 0 && grads) mlp_forward(params, x_enc, d_enc, sigma_raw, rgb_raw, &tape);
    else if (m > 0) mlp_infer(params, x_enc, d_enc, sigma_raw, rgb_raw);

    // Per-sample activated outputs in double; invalid samples stay zero.
    const std::size_t n = bundle.samples();
    if (!raw_noise.empty() && raw_noise.size() != n) throw ValidationError("render_bundle: one noise value per sample expected");
    auto raw_density = [&](Eigen::Index c) {
        double raw = static_cast<double>(sigma_raw(0, c));
        return raw_noise.empty() ? raw : raw + raw_noise[active[c]];
    };
    std::vector<double> sigma(n, 0.0), rgb(3 * n, 0.0);
    for (Eigen::Index c = 0; c < m; ++c) {
        std::size_t i = active[c];
        sigma[i] = density_activation(cfg, raw_density(c));
        for (int k = 0; k < 3; ++k) rgb[3 * i + k] = sigmoid(static_cast<double>(rgb_raw(k, c)));
    }

    BundleResult res;
    res.evaluations = active.size();
    res.colors.resize(bundle.rays());
    res.weights.assign(n, 0.0);
    std::vector<double> d_sigma(grads ? n : 0, 0.0), d_rgb(grads ? 3 * n : 0, 0.0);
    for (std::size_t r = 0; r < bundle.rays(); ++r) {
        const std::size_t b = bundle.offsets[r], e = bundle.offsets[r + 1];
        std::span<const double> s_sigma(sigma.data() + b, e - b), s_rgb(rgb.data() + 3 * b, 3 * (e - b)),
            s_delta(bundle.delta.data() + b, e - b);
        std::span<const std::uint8_t> s_valid(bundle.valid.data() + b, e - b);
        RenderOutput out = volume_render(s_sigma, s_rgb, s_delta, s_valid, std::span<const double>(bundle.t.data() + b, e - b));
        res.colors[r] = composite_background(out, background);
        std::copy(out.weights.begin(), out.weights.end(), res.weights.begin() + static_cast<std::ptrdiff_t>(b));
        if (!with_loss) continue;
        Vec3 err = res.colors[r] - targets[r];
        res.loss += loss_scale * err.squaredNorm();
        if (!grads) continue;
        Vec3 d_color = 2.0 * loss_scale * err;
        double d_acc = -d_color.dot(background);
        volume_render_backward(s_sigma, s_rgb, s_delta, s_valid, out, d_color, d_acc,
                               std::span<double>(d_sigma.data() + b, e - b),
                               std::span<double>(d_rgb.data() + 3 * b, 3 * (e - b)));
    }

    if (grads && m > 0) {
        Mat d_sigma_raw(1, m), d_rgb_raw(3, m);
        for (Eigen::Index c = 0; c < m; ++c) {
            std::size_t i = active[c];
            d_sigma_raw(0, c) = static_cast<Scalar>(d_sigma[i] * density_activation_grad(cfg, raw_density(c)));
            for (int k = 0; k < 3; ++k) {
                double y = rgb[3 * i + k];
                d_rgb_raw(k, c) = static_cast<Scalar>(d_rgb[3 * i + k] * y * (1.0 - y));
            }
        }
        mlp_backward(params, tape, d_sigma_raw, d_rgb_raw, *grads);
    }
    return res;
}

}  // namespace vaxnerf

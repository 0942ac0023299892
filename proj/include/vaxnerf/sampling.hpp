#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "vaxnerf/camera.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/hull.hpp"
#include "vaxnerf/rng.hpp"

namespace vaxnerf {

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = -Vec3::UnitZ();
    double t_near = 0.0;
    double t_far = 1.0;

    Vec3 at(double t) const { return origin + t * direction; }
};

/// Ordered samples along one ray. delta[i] is the length of ray the sample
/// stands for: t[i+1] - t[i], with the leading gap [t_near, t[0]) folded
/// into delta[0] and the last sample closing at t_far, so sum(delta) is
/// exactly the ray span.
struct RaySamples {
    std::vector<double> t;
    std::vector<double> delta;
    std::vector<std::uint8_t> keep;

    std::size_t size() const { return t.size(); }
    std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1)); }
};

struct PixelIndex {
    int row = 0;
    int col = 0;
};

/// Rays through pixel centres.
inline std::vector<Ray> pixel_rays(const CameraPose& pose, std::span<const PixelIndex> pixels, double near, double far) {
    std::vector<Ray> rays;
    rays.reserve(pixels.size());
    const Vec3 o = pose.origin();
    for (const auto& px : pixels) {
        if (px.row < 0 || px.col < 0 || px.row >= pose.height || px.col >= pose.width)
            throw ValidationError("pixel outside image bounds");
        rays.push_back({o, pose.direction_through(px.col + 0.5, px.row + 0.5), near, far});
    }
    return rays;
}

inline Ray pixel_ray(const CameraPose& pose, int row, int col, double near, double far) {
    PixelIndex px{row, col};
    return pixel_rays(pose, std::span<const PixelIndex>(&px, 1), near, far).front();
}

/// Recomputes delta from t under the closed-span convention above.
inline void assign_deltas(RaySamples& s, double t_near, double t_far) {
    const std::size_t n = s.t.size();
    s.delta.resize(n);
    for (std::size_t i = 0; i + 1 < n; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
    if (n > 0) {
        s.delta[n - 1] = t_far - s.t[n - 1];
        s.delta[0] += s.t[0] - t_near;
    }
}

/// n equal bins over [t_near, t_far]: bin midpoints, or one uniform draw per
/// bin when `rng` is given.
inline RaySamples sample_coarse(const Ray& ray, std::size_t n, Rng* rng = nullptr) {
    if (n < 1) throw ValidationError("sample_coarse needs n >= 1");
    RaySamples s;
    s.t.resize(n);
    const double width = (ray.t_far - ray.t_near) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng ? rng->uniform() : 0.5;
        s.t[i] = ray.t_near + (static_cast<double>(i) + u) * width;
    }
    assign_deltas(s, ray.t_near, ray.t_far);
    s.keep.assign(n, 1);
    return s;
}

/// Floor added to every coarse weight before building the fine CDF.
inline constexpr double kFineWeightFloor = 1e-5;

/// Inverse-transform samples of a piecewise-constant density over bins
/// around each coarse_t[i] (edges at the midpoints between neighbours,
/// clipped to [min t, max t]); the density on bin i is proportional to
/// weights[i] + floor. With `rng` null the draws sit at evenly spaced
/// quantiles (j + 0.5) / n.
inline std::vector<double> draw_fine(std::span<const double> coarse_t, std::span<const double> weights,
                                     std::size_t n_fine, Rng* rng) {
    if (coarse_t.size() != weights.size()) throw ValidationError("sample_fine: weights and coarse_t lengths differ");
    if (coarse_t.empty()) throw ValidationError("sample_fine needs at least one coarse sample");
    for (double w : weights)
        if (!(w >= 0.0)) throw ValidationError("sample_fine: negative or NaN weight");
    const std::size_t n = coarse_t.size();
    std::vector<double> edges(n + 1);
    edges[0] = coarse_t.front();
    edges[n] = coarse_t.back();
    for (std::size_t i = 1; i < n; ++i) edges[i] = 0.5 * (coarse_t[i - 1] + coarse_t[i]);
    std::vector<double> cdf(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + (weights[i] + kFineWeightFloor) * (edges[i + 1] - edges[i]);
    const double total = cdf[n];
    if (!(total > 0.0)) return std::vector<double>(n_fine, edges[0]);  // single sample or zero-length span
    for (double& c : cdf) c /= total;
    cdf[n] = 1.0;

    std::vector<double> draws(n_fine);
    for (std::size_t j = 0; j < n_fine; ++j) {
        double u = rng ? rng->uniform() : (static_cast<double>(j) + 0.5) / static_cast<double>(n_fine);
        // Bin b with cdf[b] <= u < cdf[b+1].
        auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), u);
        std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()) - 1, n - 1);
        double span = cdf[b + 1] - cdf[b];
        double frac = span > 0.0 ? (u - cdf[b]) / span : 0.0;
        draws[j] = std::clamp(edges[b] + frac * (edges[b + 1] - edges[b]), edges[0], edges[n]);
    }
    return draws;
}

/// Fine samples: the sorted union of the coarse positions and n_fine draws.
inline RaySamples sample_fine(const Ray& ray, std::span<const double> coarse_t, std::span<const double> weights,
                              std::size_t n_fine, Rng* rng = nullptr) {
    std::vector<double> draws = draw_fine(coarse_t, weights, n_fine, rng);
    RaySamples s;
    s.t.assign(coarse_t.begin(), coarse_t.end());
    s.t.insert(s.t.end(), draws.begin(), draws.end());
    std::sort(s.t.begin(), s.t.end());
    assign_deltas(s, ray.t_near, ray.t_far);
    s.keep.assign(s.t.size(), 1);
    return s;
}

/// keep[i] = sample i lies inside the hull; t and delta are untouched.
inline RaySamples reject_by_hull(const VoxelGrid& grid, const Ray& ray, RaySamples samples) {
    for (std::size_t i = 0; i < samples.t.size(); ++i) samples.keep[i] = grid.contains(ray.at(samples.t[i])) ? 1 : 0;
    return samples;
}

/// Fixed-capacity layout of kept samples: row r holds the kept samples of
/// ray r densely in ascending t; unused slots hold the ray origin with
/// valid = false and zero t/delta.
struct PackedBatch {
    std::size_t rays = 0;
    std::size_t capacity = 0;
    std::vector<Vec3> positions;   // rays x capacity
    std::vector<Vec3> directions;  // rays
    std::vector<double> t;         // rays x capacity
    std::vector<double> delta;     // rays x capacity
    std::vector<std::uint8_t> valid;
    std::vector<std::uint32_t> counts;  // kept samples per ray

    std::size_t slot(std::size_t ray, std::size_t k) const { return ray * capacity + k; }
    std::size_t total_valid() const {
        std::size_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }
};

inline PackedBatch pack_batch(std::span<const Ray> rays, std::span<const RaySamples> samples, std::size_t capacity) {
    if (rays.size() != samples.size()) throw ValidationError("pack_batch: rays and samples lengths differ");
    std::size_t observed = 0;
    for (const auto& s : samples) observed = std::max(observed, s.kept());
    if (observed > capacity) throw CapacityError(observed, capacity);

    PackedBatch b;
    b.rays = rays.size();
    b.capacity = capacity;
    b.positions.resize(b.rays * capacity);
    b.t.assign(b.rays * capacity, 0.0);
    b.delta.assign(b.rays * capacity, 0.0);
    b.valid.assign(b.rays * capacity, 0);
    b.counts.assign(b.rays, 0);
    b.directions.resize(b.rays);
    for (std::size_t r = 0; r < b.rays; ++r) {
        b.directions[r] = rays[r].direction;
        std::size_t k = 0;
        for (std::size_t i = 0; i < samples[r].size(); ++i) {
            if (!samples[r].keep[i]) continue;
            std::size_t s = b.slot(r, k++);
            b.positions[s] = rays[r].at(samples[r].t[i]);
            b.t[s] = samples[r].t[i];
            b.delta[s] = samples[r].delta[i];
            b.valid[s] = 1;
        }
        b.counts[r] = static_cast<std::uint32_t>(k);
        for (; k < capacity; ++k) b.positions[b.slot(r, k)] = rays[r].origin;
    }
    return b;
}

}  // namespace vaxnerf

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vaxnerf/error.hpp"
#include "vaxnerf/hull.hpp"
#include "vaxnerf/mlp.hpp"
#include "vaxnerf/parallel.hpp"
#include "vaxnerf/pipeline.hpp"
#include "vaxnerf/sampling.hpp"

namespace vaxnerf {

/// baseline: plain NeRF (coarse + optional fine network, no hull).
/// vax_single: one network on the hull-masked coarse samples.
/// vax_hier: coarse and fine networks, both on hull-masked samples.
enum class TrainMode : std::uint32_t { baseline = 0, vax_single = 1, vax_hier = 2 };

inline const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::baseline: return "baseline";
        case TrainMode::vax_single: return "vax_single";
        case TrainMode::vax_hier: return "vax_hier";
    }
    return "baseline";
}

inline TrainMode parse_mode(const std::string& s) {
    if (s == "baseline") return TrainMode::baseline;
    if (s == "vax_single") return TrainMode::vax_single;
    if (s == "vax_hier") return TrainMode::vax_hier;
    throw ConfigError("unknown mode '" + s + "' (expected baseline, vax_single or vax_hier)");
}

inline bool uses_hull(TrainMode m) { return m != TrainMode::baseline; }

/// The trained networks plus the sampling they were trained with.
template <class Scalar>
struct NerfModel {
    TrainMode mode = TrainMode::baseline;
    std::uint32_t n_coarse = 64;
    std::uint32_t n_fine = 0;
    std::vector<MlpParams<Scalar>> nets;  // [coarse] or [coarse, fine]

    bool hierarchical() const { return n_fine > 0; }

    static NerfModel create(TrainMode mode, std::uint32_t n_coarse, std::uint32_t n_fine, const MlpConfig& mlp,
                            std::uint64_t seed) {
        NerfModel m;
        m.mode = mode;
        m.n_coarse = n_coarse;
        m.n_fine = n_fine;
        for (int k = 0; k < (n_fine > 0 ? 2 : 1); ++k) {
            MlpParams<Scalar> p(mlp);
            Rng rng(seed, {0x1417, static_cast<std::uint64_t>(k)});
            p.init_glorot(rng);
            m.nets.push_back(std::move(p));
        }
        return m;
    }

    friend bool operator==(const NerfModel&, const NerfModel&) = default;
};

/// Packed-batch capacities for the hull modes; 0 disables packing.
struct SampleCapacity {
    std::size_t coarse = 0;
    std::size_t fine = 0;
};

struct RaysResult {
    std::vector<Vec3> colors;
    double loss = 0.0;                  // summed over both networks when hierarchical
    std::size_t evaluations = 0;        // network evaluations, fine pass counts the whole union
    std::size_t distinct_samples = 0;   // kept coarse samples + kept new fine draws
    std::size_t coarse_overflow = 0;    // observed max when a packed batch overflowed
    std::size_t fine_overflow = 0;
    bool overflowed() const { return coarse_overflow > 0 || fine_overflow > 0; }
};

/// Runs the full sampling + rendering procedure of `model` on a group of
/// rays. With `rngs` empty the sampling is deterministic (bin midpoints,
/// evenly spaced fine quantiles); otherwise rngs[r] drives ray r. With
/// `targets` the scaled loss is computed, and with `grads` (one entry per
/// network) gradients are accumulated. `density_noise_std` > 0 adds Gaussian
/// noise to the raw density (needs rngs). On packed-batch overflow the
/// observed maximum is reported and no further work is done.
template <class Scalar>
RaysResult run_rays(const NerfModel<Scalar>& model, std::span<const Ray> rays, std::span<Rng> rngs,
                    const VoxelGrid* grid, const Vec3& background, std::span<const Vec3> targets = {},
                    double loss_scale = 1.0, std::vector<MlpParams<Scalar>>* grads = nullptr,
                    SampleCapacity capacity = {}, double density_noise_std = 0.0) {
    const bool masked = uses_hull(model.mode);
    if (masked && !grid) throw ConfigError(std::string(to_string(model.mode)) + " rendering requires a voxel grid");
    const std::size_t n = rays.size();
    auto rng_for = [&](std::size_t r) { return rngs.empty() ? nullptr : &rngs[r]; };

    RaysResult res;
    std::vector<RaySamples> coarse(n);
    for (std::size_t r = 0; r < n; ++r) {
        coarse[r] = sample_coarse(rays[r], model.n_coarse, rng_for(r));
        if (masked) coarse[r] = reject_by_hull(*grid, rays[r], std::move(coarse[r]));
    }

    auto make_bundle = [&](const std::vector<RaySamples>& samples, std::size_t cap, std::size_t& overflow) {
        if (!masked || cap == 0) {
            RayBundle b;
            for (std::size_t r = 0; r < n; ++r) b.add_ray(rays[r], samples[r]);
            return std::optional<RayBundle>(std::move(b));
        }
        try {
            return std::optional<RayBundle>(RayBundle::from_packed(pack_batch(rays, samples, cap)));
        } catch (const CapacityError& e) {
            overflow = e.observed_max();
            return std::optional<RayBundle>();
        }
    };

    auto coarse_bundle = make_bundle(coarse, capacity.coarse, res.coarse_overflow);
    if (!coarse_bundle) return res;
    auto noise_for = [&](const RayBundle& b) {
        std::vector<double> noise;
        if (density_noise_std <= 0.0 || rngs.empty()) return noise;
        noise.resize(b.samples());
        for (std::size_t r = 0; r < b.rays(); ++r)
            for (std::size_t i = b.offsets[r]; i < b.offsets[r + 1]; ++i) noise[i] = density_noise_std * rngs[r].normal();
        return noise;
    };
    std::vector<double> coarse_noise = noise_for(*coarse_bundle);
    BundleResult c = render_bundle(model.nets[0], *coarse_bundle, background, targets, loss_scale,
                                   grads ? &(*grads)[0] : nullptr, coarse_noise);
    res.evaluations += c.evaluations;
    res.distinct_samples += c.evaluations;
    res.loss += c.loss;
    res.colors = std::move(c.colors);
    if (!model.hierarchical()) return res;

    // Coarse weights back on the full coarse sample lists (zero where rejected).
    // A packed bundle holds only the kept samples of each ray; an unpacked one holds all of them.
    std::vector<RaySamples> fine(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t base = coarse_bundle->offsets[r];
        const bool packed = coarse_bundle->offsets[r + 1] - base != coarse[r].size();
        std::vector<double> w(coarse[r].size(), 0.0);
        for (std::size_t i = 0, k = 0; i < coarse[r].size(); ++i)
            if (coarse[r].keep[i]) w[i] = c.weights[base + (packed ? k++ : i)];
        fine[r] = sample_fine(rays[r], coarse[r].t, w, model.n_fine, rng_for(r));
        if (masked) fine[r] = reject_by_hull(*grid, rays[r], std::move(fine[r]));
        res.distinct_samples += fine[r].kept() - coarse[r].kept();
    }
    auto fine_bundle = make_bundle(fine, capacity.fine, res.fine_overflow);
    if (!fine_bundle) return res;
    std::vector<double> fine_noise = noise_for(*fine_bundle);
    BundleResult f = render_bundle(model.nets[1], *fine_bundle, background, targets, loss_scale,
                                   grads ? &(*grads)[1] : nullptr, fine_noise);
    res.evaluations += f.evaluations;
    res.loss += f.loss;
    res.colors = std::move(f.colors);
    return res;
}

/// Deterministic colours for `rays`, evaluated `chunk` rays at a time.
template <class Scalar>
std::vector<Vec3> render_rays(const NerfModel<Scalar>& model, std::span<const Ray> rays, const VoxelGrid* grid,
                              const Vec3& background, std::size_t chunk = 4096, unsigned threads = default_threads()) {
    if (chunk == 0) throw ConfigError("render chunk size must be >= 1");
    std::vector<Vec3> out(rays.size());
    const std::size_t chunks = (rays.size() + chunk - 1) / chunk;
    parallel_for(chunks, threads, [&](std::size_t c) {
        ScopedFlushDenormals ftz;
        const std::size_t b = c * chunk, e = std::min(rays.size(), b + chunk);
        RaysResult r = run_rays(model, rays.subspan(b, e - b), std::span<Rng>(), grid, background);
        std::copy(r.colors.begin(), r.colors.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
    });
    return out;
}

}  // namespace vaxnerf

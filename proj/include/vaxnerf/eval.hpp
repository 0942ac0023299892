#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vaxnerf/hull.hpp"
#include "vaxnerf/image.hpp"
#include "vaxnerf/metrics.hpp"
#include "vaxnerf/model.hpp"
#include "vaxnerf/training.hpp"

namespace vaxnerf {

/// Deterministic full-frame render. `chunk` and `threads` only change speed.
template <class Scalar>
Image render_image(const NerfModel<Scalar>& model, const CameraPose& pose, double near, double far,
                   const VoxelGrid* grid, const Vec3& background, std::size_t chunk = 4096,
                   unsigned threads = default_threads()) {
    std::vector<PixelIndex> px;
    px.reserve(static_cast<std::size_t>(pose.width) * pose.height);
    for (int r = 0; r < pose.height; ++r)
        for (int c = 0; c < pose.width; ++c) px.push_back({r, c});
    auto rays = pixel_rays(pose, px, near, far);
    auto colors = render_rays(model, rays, grid, background, chunk, threads);
    Image img;
    img.width = pose.width;
    img.height = pose.height;
    img.channels = 3;
    img.data.resize(colors.size() * 3);
    for (std::size_t i = 0; i < colors.size(); ++i)
        for (int k = 0; k < 3; ++k) img.data[3 * i + k] = static_cast<float>(colors[i][k]);
    return img;
}

struct ViewMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalSummary {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

/// Renders every view of `ds` and scores it against the stored image.
/// Writes `<out_dir>/view_XXX.png` when an output directory is given.
template <class Scalar>
EvalSummary evaluate(const NerfModel<Scalar>& model, const Dataset& ds, const VoxelGrid* grid,
                     std::optional<std::filesystem::path> out_dir = std::nullopt, std::size_t chunk = 4096,
                     unsigned threads = default_threads()) {
    if (ds.views.empty()) throw ValidationError("evaluate: dataset has no views");
    EvalSummary s;
    if (out_dir) std::filesystem::create_directories(*out_dir);
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        const auto& v = ds.views[i];
        Image img = render_image(model, v.pose, ds.near, ds.far, grid, ds.background, chunk, threads);
        s.views.push_back({psnr(img, v.image), ssim(img, v.image)});
        if (out_dir) {
            std::ostringstream name;
            name << "view_" << std::setw(3) << std::setfill('0') << i << ".png";
            write_png(*out_dir / name.str(), img, 8);
        }
    }
    for (const auto& m : s.views) {
        s.mean_psnr += m.psnr;
        s.mean_ssim += m.ssim;
    }
    s.mean_psnr /= static_cast<double>(s.views.size());
    s.mean_ssim /= static_cast<double>(s.views.size());
    return s;
}

/// Mean fraction of each ray's [t_near, t_far] span lying inside occupied
/// cells, by midpoint integration with `steps` points per ray.
inline double mean_in_hull_fraction(const VoxelGrid& grid, std::span<const Ray> rays, int steps = 4096) {
    if (rays.empty()) throw ValidationError("mean_in_hull_fraction: no rays");
    double sum = 0.0;
    for (const auto& ray : rays) {
        int inside = 0;
        for (int k = 0; k < steps; ++k) {
            double t = ray.t_near + (k + 0.5) / steps * (ray.t_far - ray.t_near);
            inside += grid.contains(ray.at(t)) ? 1 : 0;
        }
        sum += static_cast<double>(inside) / steps;
    }
    return sum / static_cast<double>(rays.size());
}

struct BenchConfig {
    std::string label;
    TrainConfig train;
};

struct BenchOptions {
    std::size_t warmup_steps = 20;
    std::size_t timed_steps = 200;
    std::size_t repeats = 3;
};

struct BenchRow {
    std::string method;
    double samples_per_batch = 0.0;  // mean network evaluations per training step
    double rays_per_sec = 0.0;       // median over repeats
    double occupancy_fraction = 1.0;
    double speedup = 1.0;            // rays_per_sec / baseline rays_per_sec
};

inline constexpr const char* kBenchCsvHeader = "method,samples_per_batch,rays_per_sec,occupancy_fraction,speedup";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << kBenchCsvHeader << '\n';
    for (const auto& r : rows)
        os << r.method << ',' << std::setprecision(10) << r.samples_per_batch << ',' << r.rays_per_sec << ','
           << r.occupancy_fraction << ',' << r.speedup << '\n';
}

/// Times training steps of each configuration from the same seed. Every
/// repeat starts from a freshly initialised trainer, so sample counts are
/// reproducible. The first baseline configuration is the speedup reference.
inline std::vector<BenchRow> bench_sampling(const Dataset& dataset, const std::optional<VoxelGrid>& grid,
                                            const std::vector<BenchConfig>& configs, const BenchOptions& opt = {}) {
    if (configs.size() < 2) throw ConfigError("bench_sampling needs at least 2 configurations");
    auto base = std::find_if(configs.begin(), configs.end(),
                             [](const BenchConfig& c) { return c.train.mode == TrainMode::baseline; });
    if (base == configs.end()) throw ConfigError("bench_sampling needs a baseline configuration");
    if (opt.timed_steps < 1 || opt.repeats < 1) throw ConfigError("bench_sampling needs timed steps and repeats >= 1");

    std::vector<BenchRow> rows;
    for (const auto& bc : configs) {
        const bool hull = uses_hull(bc.train.mode);
        if (hull && !grid) throw ConfigError("bench configuration '" + bc.label + "' needs a voxel grid");
        BenchRow row;
        row.method = bc.label;
        row.occupancy_fraction = hull ? occupancy_fraction(*grid) : 1.0;
        std::vector<double> rates;
        double evals = 0.0;
        for (std::size_t rep = 0; rep < opt.repeats; ++rep) {
            TrainConfig cfg = bc.train;
            cfg.iterations = std::max<std::uint64_t>(cfg.iterations, opt.warmup_steps + opt.timed_steps);
            Trainer t(dataset, cfg, hull ? grid : std::nullopt);
            for (std::size_t i = 0; i < opt.warmup_steps; ++i) t.step();
            const auto t0 = std::chrono::steady_clock::now();
            for (std::size_t i = 0; i < opt.timed_steps; ++i) evals += static_cast<double>(t.step().points);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rates.push_back(static_cast<double>(opt.timed_steps * cfg.batch_rays) / std::max(secs, 1e-9));
        }
        std::sort(rates.begin(), rates.end());
        row.rays_per_sec = rates[rates.size() / 2];
        row.samples_per_batch = evals / static_cast<double>(opt.timed_steps * opt.repeats);
        rows.push_back(row);
    }
    const double ref = rows[static_cast<std::size_t>(base - configs.begin())].rays_per_sec;
    for (auto& r : rows) r.speedup = r.rays_per_sec / ref;
    return rows;
}

}  // namespace vaxnerf

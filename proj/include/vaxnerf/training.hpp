#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vaxnerf/adam.hpp"
#include "vaxnerf/checkpoint.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/hull.hpp"
#include "vaxnerf/metrics.hpp"
#include "vaxnerf/model.hpp"
#include "vaxnerf/parallel.hpp"
#include "vaxnerf/scene_io.hpp"

namespace vaxnerf {

struct TrainConfig {
    TrainMode mode = TrainMode::baseline;
    std::uint32_t n_coarse = 64;
    std::uint32_t n_fine = 128;
    std::size_t batch_rays = 4096;
    std::uint64_t iterations = 1000000;
    double lr_init = 5e-4;
    double lr_final = 5e-6;
    std::optional<std::filesystem::path> grid_path;
    double capacity_safety = 1.1;
    std::uint32_t probe_iters = 8;
    std::uint64_t seed = 0;
    std::uint64_t log_every = 100;
    std::uint64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    std::optional<std::filesystem::path> checkpoint_dir;
    MlpConfig mlp;
    double density_noise_std = 0.0;  // raw-density noise regularizer, off by default
    std::size_t shard_rays = 64;     // rays per gradient shard; fixes the reduction order
    unsigned threads = default_threads();
    std::size_t val_views = 2;
    std::size_t val_stride = 2;  // validation renders every val_stride-th pixel in each axis
    bool validate_at_log = true;

    void validate() const {
        mlp.validate();
        if (n_coarse < 1) throw ConfigError("n_coarse must be >= 1");
        if (batch_rays < 1) throw ConfigError("batch_rays must be >= 1");
        if (shard_rays < 1) throw ConfigError("shard_rays must be >= 1");
        if (!(lr_init > 0.0) || !(lr_final > 0.0)) throw ConfigError("learning rates must be > 0");
        if (!(capacity_safety >= 1.0)) throw ConfigError("capacity_safety must be >= 1");
        if (log_every < 1) throw ConfigError("log_every must be >= 1");
        if (val_stride < 1) throw ConfigError("val_stride must be >= 1");
        if (mode == TrainMode::vax_single && n_fine != 0) throw ConfigError("vax_single requires n_fine = 0");
        if (mode == TrainMode::vax_hier && n_fine == 0) throw ConfigError("vax_hier requires n_fine > 0");
    }
};

/// Learning rate with exponential decay from lr_init to lr_final.
inline double lr_at(std::uint64_t iteration, const TrainConfig& cfg) {
    if (cfg.iterations == 0) return cfg.lr_init;
    double frac = static_cast<double>(iteration) / static_cast<double>(cfg.iterations);
    return cfg.lr_init * std::pow(cfg.lr_final / cfg.lr_init, frac);
}

struct TrainLogEntry {
    std::uint64_t iteration = 0;  // completed steps
    double wall_seconds = 0.0;    // optimisation time only, validation excluded
    double loss = 0.0;
    std::uint64_t points = 0;           // network evaluations this step
    std::uint64_t distinct_points = 0;  // coarse + new fine samples, each counted once
    std::uint64_t cumulative_points = 0;
    double rays_per_second = 0.0;
    std::optional<double> val_psnr;
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;

    static constexpr const char* kCsvHeader = "iter,wall_s,loss,points,rays_per_s,val_psnr";

    void write_csv_header(std::ostream& os) const { os << kCsvHeader << '\n'; }

    static void write_csv_row(std::ostream& os, const TrainLogEntry& e) {
        std::ostringstream line;
        line << e.iteration << ',' << std::setprecision(9) << e.wall_seconds << ',' << std::setprecision(17) << e.loss
             << ',' << e.points << ',' << std::setprecision(9) << e.rays_per_second << ',';
        if (e.val_psnr) line << std::setprecision(9) << *e.val_psnr;
        os << line.str() << '\n';
    }

    void write_csv(std::ostream& os) const {
        write_csv_header(os);
        for (const auto& e : entries) write_csv_row(os, e);
    }
};

namespace detail {

/// Maps a global pixel index over all views to (view, row, col).
class PixelIndexer {
public:
    explicit PixelIndexer(const Dataset& ds) {
        starts_.push_back(0);
        for (const auto& v : ds.views) starts_.push_back(starts_.back() + v.image.pixel_count());
    }
    std::size_t total() const { return starts_.back(); }
    void locate(const Dataset& ds, std::size_t idx, std::size_t& view, int& row, int& col) const {
        view = static_cast<std::size_t>(std::upper_bound(starts_.begin(), starts_.end(), idx) - starts_.begin()) - 1;
        std::size_t local = idx - starts_[view];
        row = static_cast<int>(local / ds.views[view].image.width);
        col = static_cast<int>(local % ds.views[view].image.width);
    }

private:
    std::vector<std::size_t> starts_;
};

/// Draws ray r of a step: uniform pixel over all training views, then the
/// remaining stream drives stratified sampling of that ray.
inline Ray draw_training_ray(const Dataset& ds, const PixelIndexer& px, Rng& rng, Vec3* target) {
    std::size_t view;
    int row, col;
    px.locate(ds, static_cast<std::size_t>(rng.below(px.total())), view, row, col);
    const auto& v = ds.views[view];
    if (target) *target = Vec3(v.image.at(row, col, 0), v.image.at(row, col, 1), v.image.at(row, col, 2));
    return pixel_ray(v.pose, row, col, ds.near, ds.far);
}

inline std::size_t inflate(std::size_t observed, double safety) {
    auto cap = static_cast<std::size_t>(std::ceil(safety * static_cast<double>(observed) - 1e-9));
    return std::max<std::size_t>(cap, 1);
}

}  // namespace detail

/// Largest number of hull-kept coarse samples on a ray over `probe_iters`
/// random training batches, inflated by the safety factor (at least 1).
inline std::size_t calibrate_capacity(const Dataset& dataset, const VoxelGrid& grid, const TrainConfig& config,
                                      std::uint32_t probe_iters) {
    detail::PixelIndexer px(dataset);
    if (px.total() == 0) throw ValidationError("calibrate_capacity: dataset has no pixels");
    std::size_t observed = 0;
    for (std::uint32_t it = 0; it < probe_iters; ++it) {
        for (std::size_t r = 0; r < config.batch_rays; ++r) {
            Rng rng(config.seed, {0xca11b, it, r});
            Ray ray = detail::draw_training_ray(dataset, px, rng, nullptr);
            RaySamples s = reject_by_hull(grid, ray, sample_coarse(ray, config.n_coarse, &rng));
            observed = std::max(observed, s.kept());
        }
    }
    return detail::inflate(observed, config.capacity_safety);
}

/// Worst-case kept-count over every training pixel: the number of coarse
/// strata whose span touches the hull, probed at `substeps` + 1 points per
/// stratum. Never exceeds n_coarse.
inline std::size_t capacity_bound(const Dataset& dataset, const VoxelGrid& grid, std::size_t n_coarse,
                                  unsigned threads = default_threads(), int substeps = 8) {
    std::vector<std::size_t> per_view(dataset.views.size(), 0);
    parallel_for(dataset.views.size(), threads, [&](std::size_t vi) {
        const auto& v = dataset.views[vi];
        for (int r = 0; r < v.pose.height; ++r)
            for (int c = 0; c < v.pose.width; ++c) {
                const Ray ray = pixel_ray(v.pose, r, c, dataset.near, dataset.far);
                const double width = (ray.t_far - ray.t_near) / static_cast<double>(n_coarse);
                std::size_t count = 0;
                for (std::size_t i = 0; i < n_coarse; ++i)
                    for (int k = 0; k <= substeps; ++k) {
                        const double t = ray.t_near + (static_cast<double>(i) + static_cast<double>(k) / substeps) * width;
                        if (grid.contains(ray.at(t))) {
                            ++count;
                            break;
                        }
                    }
                per_view[vi] = std::max(per_view[vi], count);
            }
    });
    return per_view.empty() ? 0 : *std::max_element(per_view.begin(), per_view.end());
}

/// Algorithm driver: owns the model, the optimizer state and the log.
class Trainer {
public:
    Trainer(const Dataset& train, TrainConfig cfg, std::optional<VoxelGrid> grid = std::nullopt,
            const Dataset* val = nullptr)
        : train_(train), cfg_(std::move(cfg)), val_(val), pixels_(train) {
        cfg_.validate();
        if (train_.views.empty() || pixels_.total() == 0) throw ValidationError("training dataset is empty");
        if (!grid && cfg_.grid_path && uses_hull(cfg_.mode)) grid = load_grid(*cfg_.grid_path);
        if (uses_hull(cfg_.mode) && !grid) throw ConfigError(std::string(to_string(cfg_.mode)) + " requires a voxel grid");
        grid_ = std::move(grid);
        model_ = NerfModel<float>::create(cfg_.mode, cfg_.n_coarse, cfg_.n_fine, cfg_.mlp, cfg_.seed);
        state_.seed = cfg_.seed;
        for (const auto& net : model_.nets) state_.adam.emplace_back(net.size());
        if (uses_hull(cfg_.mode)) {
            state_.capacity.coarse = calibrate_capacity(train_, *grid_, cfg_, cfg_.probe_iters);
            if (cfg_.n_fine > 0)
                state_.capacity.fine = std::min<std::size_t>(cfg_.n_coarse + cfg_.n_fine, state_.capacity.coarse + cfg_.n_fine);
        }
    }

    /// Continues from a checkpoint written by save(); `cfg` must describe the
    /// same run (mode, sample counts, architecture and seed).
    static Trainer resume(const std::filesystem::path& path, const Dataset& train, TrainConfig cfg,
                          std::optional<VoxelGrid> grid = std::nullopt, const Dataset* val = nullptr) {
        Checkpoint ck = load_checkpoint(path);
        if (!ck.state) throw FormatError("checkpoint has no training state: " + path.string());
        if (ck.model.mode != cfg.mode || ck.model.n_coarse != cfg.n_coarse || ck.model.n_fine != cfg.n_fine ||
            !(ck.model.nets.front().config() == cfg.mlp) || ck.state->seed != cfg.seed)
            throw FormatError("checkpoint does not match the training configuration");
        cfg.probe_iters = 0;  // capacities come from the checkpoint
        Trainer t(train, std::move(cfg), std::move(grid), val);
        t.model_ = std::move(ck.model);
        t.state_ = std::move(*ck.state);
        return t;
    }

    const NerfModel<float>& model() const { return model_; }
    const TrainLog& log() const { return log_; }
    const TrainingState& state() const { return state_; }
    const TrainConfig& config() const { return cfg_; }
    const std::optional<VoxelGrid>& grid() const { return grid_; }
    std::uint64_t iteration() const { return state_.iteration; }
    bool done() const { return state_.iteration >= cfg_.iterations; }

    void save(const std::filesystem::path& path) const { save_checkpoint(path, model_, &state_); }

    /// One optimisation step. Returns the log entry of this step.
    TrainLogEntry step() {
        const auto t0 = std::chrono::steady_clock::now();
        ScopedFlushDenormals ftz;
        StepResult sr = evaluate_step();
        if (sr.coarse_overflow || sr.fine_overflow) {
            if (state_.recalibrations > 0)
                throw CapacityError(std::max(sr.coarse_overflow, sr.fine_overflow),
                                    sr.coarse_overflow ? state_.capacity.coarse : state_.capacity.fine);
            ++state_.recalibrations;
            recalibrate(sr);
            std::cerr << "warning: packed batch overflow at iteration " << state_.iteration
                      << ", recalibrated capacity to " << state_.capacity.coarse << "/" << state_.capacity.fine << "\n";
            sr = evaluate_step();
            if (sr.coarse_overflow || sr.fine_overflow)
                throw CapacityError(std::max(sr.coarse_overflow, sr.fine_overflow),
                                    sr.coarse_overflow ? state_.capacity.coarse : state_.capacity.fine);
        }

        bool finite = std::isfinite(sr.loss);
        for (const auto& g : sr.grads) finite = finite && g.all_finite();
        if (!finite) {
            if (cfg_.checkpoint_dir) {
                std::filesystem::create_directories(*cfg_.checkpoint_dir);
                save(*cfg_.checkpoint_dir / "failed_state.vxc");
            }
            throw TrainingError("non-finite loss or gradient", cfg_.seed, state_.iteration);
        }

        const double lr = lr_at(state_.iteration, cfg_);
        for (std::size_t k = 0; k < model_.nets.size(); ++k) {
            auto& net = model_.nets[k];
            adam_step<float>(net.values(), sr.grads[k].values(), state_.adam[k], lr);
        }
        ++state_.iteration;
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        state_.wall_seconds += secs;
        state_.cumulative_points += sr.evaluations;

        TrainLogEntry e;
        e.iteration = state_.iteration;
        e.wall_seconds = state_.wall_seconds;
        e.loss = sr.loss;
        e.points = sr.evaluations;
        e.distinct_points = sr.distinct;
        e.cumulative_points = state_.cumulative_points;
        e.rays_per_second = secs > 0.0 ? static_cast<double>(cfg_.batch_rays) / secs : 0.0;
        return e;
    }

    /// Steps until `iterations`, logging, validating and checkpointing on schedule.
    /// Trains to `iterations`, streaming logged rows to `csv`. The header is
    /// skipped when `csv_header` is false, e.g. when appending after a resume.
    void run(std::ostream* csv = nullptr, bool csv_header = true) {
        if (csv && csv_header && log_.entries.empty()) log_.write_csv_header(*csv);
        while (!done()) {
            TrainLogEntry e = step();
            bool last = done();
            if (e.iteration % cfg_.log_every == 0 || last) {
                if (val_ && cfg_.validate_at_log && !val_->views.empty()) e.val_psnr = validation_psnr();
                log_.entries.push_back(e);
                if (csv) {
                    TrainLog::write_csv_row(*csv, e);
                    csv->flush();
                }
            }
            if (cfg_.checkpoint_dir && cfg_.checkpoint_every > 0 && (e.iteration % cfg_.checkpoint_every == 0 || last)) {
                std::filesystem::create_directories(*cfg_.checkpoint_dir);
                std::ostringstream name;
                name << "ckpt_" << std::setw(8) << std::setfill('0') << e.iteration << ".vxc";
                save(*cfg_.checkpoint_dir / name.str());
                save(*cfg_.checkpoint_dir / "latest.vxc");
            }
        }
    }

    /// PSNR over every val_stride-th pixel of the first val_views held-out views.
    double validation_psnr() const {
        if (!val_ || val_->views.empty()) throw ValidationError("no validation views");
        std::vector<Ray> rays;
        std::vector<Vec3> targets;
        const std::size_t nv = std::min(cfg_.val_views, val_->views.size());
        for (std::size_t v = 0; v < nv; ++v) {
            const auto& view = val_->views[v];
            for (int r = 0; r < view.image.height; r += static_cast<int>(cfg_.val_stride))
                for (int c = 0; c < view.image.width; c += static_cast<int>(cfg_.val_stride)) {
                    rays.push_back(pixel_ray(view.pose, r, c, val_->near, val_->far));
                    targets.emplace_back(view.image.at(r, c, 0), view.image.at(r, c, 1), view.image.at(r, c, 2));
                }
        }
        auto pred = render_rays(model_, rays, grid_ ? &*grid_ : nullptr, val_->background, 1024, cfg_.threads);
        double se = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i)
            for (int k = 0; k < 3; ++k) {
                double d = std::clamp(pred[i][k], 0.0, 1.0) - targets[i][k];
                se += d * d;
            }
        return psnr_from_mse(se / (3.0 * static_cast<double>(pred.size())));
    }

private:
    struct StepResult {
        std::vector<MlpParams<float>> grads;
        double loss = 0.0;
        std::size_t evaluations = 0;
        std::size_t distinct = 0;
        std::size_t coarse_overflow = 0;
        std::size_t fine_overflow = 0;
    };

    /// Grows the capacities to cover the observed overflow and the
    /// worst case over all training pixels, capped at the per-ray sample count.
    void recalibrate(const StepResult& sr) {
        const std::size_t bound = capacity_bound(train_, *grid_, cfg_.n_coarse, cfg_.threads);
        auto& cap = state_.capacity;
        cap.coarse = std::min<std::size_t>(
            cfg_.n_coarse, std::max({cap.coarse, detail::inflate(sr.coarse_overflow, cfg_.capacity_safety),
                                     detail::inflate(bound, cfg_.capacity_safety)}));
        if (cfg_.n_fine > 0)
            cap.fine = std::min<std::size_t>(
                cfg_.n_coarse + cfg_.n_fine,
                std::max({cap.fine, detail::inflate(sr.fine_overflow, cfg_.capacity_safety), cap.coarse + cfg_.n_fine}));
    }

    StepResult evaluate_step() const {
        const std::size_t batch = cfg_.batch_rays;
        const std::size_t shards = (batch + cfg_.shard_rays - 1) / cfg_.shard_rays;
        const double scale = 1.0 / static_cast<double>(batch);
        std::vector<StepResult> parts(shards);
        parallel_for(shards, cfg_.threads, [&](std::size_t s) {
            ScopedFlushDenormals ftz;
            const std::size_t b = s * cfg_.shard_rays, e = std::min(batch, b + cfg_.shard_rays);
            std::vector<Ray> rays;
            std::vector<Vec3> targets(e - b);
            std::vector<Rng> rngs;
            rays.reserve(e - b);
            rngs.reserve(e - b);
            for (std::size_t r = b; r < e; ++r) {
                rngs.emplace_back(cfg_.seed, std::initializer_list<std::uint64_t>{state_.iteration, r});
                rays.push_back(detail::draw_training_ray(train_, pixels_, rngs.back(), &targets[r - b]));
            }
            StepResult& part = parts[s];
            for (const auto& net : model_.nets) part.grads.push_back(net.zeros_like());
            RaysResult rr = run_rays(model_, rays, rngs, grid_ ? &*grid_ : nullptr, train_.background, targets, scale,
                                     &part.grads, state_.capacity, cfg_.density_noise_std);
            part.loss = rr.loss;
            part.evaluations = rr.evaluations;
            part.distinct = rr.distinct_samples;
            part.coarse_overflow = rr.coarse_overflow;
            part.fine_overflow = rr.fine_overflow;
        });
        tree_reduce(parts, [](StepResult& a, const StepResult& b) {
            for (std::size_t k = 0; k < a.grads.size(); ++k) {
                auto& av = a.grads[k].values();
                const auto& bv = b.grads[k].values();
                for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
            }
            a.loss += b.loss;
            a.evaluations += b.evaluations;
            a.distinct += b.distinct;
            a.coarse_overflow = std::max(a.coarse_overflow, b.coarse_overflow);
            a.fine_overflow = std::max(a.fine_overflow, b.fine_overflow);
        });
        return std::move(parts.front());
    }

    const Dataset& train_;
    TrainConfig cfg_;
    const Dataset* val_;
    detail::PixelIndexer pixels_;
    std::optional<VoxelGrid> grid_;
    NerfModel<float> model_;
    TrainingState state_;
    TrainLog log_;
};

struct TrainResult {
    NerfModel<float> model;
    TrainLog log;
};

inline TrainResult train(const Dataset& dataset, const TrainConfig& config, std::optional<VoxelGrid> grid = std::nullopt,
                         const Dataset* val = nullptr) {
    Trainer t(dataset, config, std::move(grid), val);
    t.run();
    return {t.model(), t.log()};
}

}  // namespace vaxnerf

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vaxnerf.hpp"

namespace fs = std::filesystem;
using namespace vaxnerf;

namespace {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumeric = 4 };

struct Common {
    bool force = false;
    unsigned threads = 0;
    std::optional<std::uint64_t> seed;
};

unsigned thread_count(const Common& c) { return c.threads == 0 ? default_threads() : c.threads; }

/// Refuses to replace an existing output unless --force was given.
void guard_output(const fs::path& p, const Common& c) {
    if (fs::exists(p) && !c.force) throw ConfigError(p.string() + " already exists (use --force to overwrite)");
}

void write_json(const fs::path& p, const Json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

std::string absolute_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

Dataset load_split(const fs::path& root, const std::string& split) {
    return load_dataset(root, parse_split(split));
}

std::optional<VoxelGrid> optional_grid(const std::string& path) {
    if (path.empty()) return std::nullopt;
    return load_grid(path);
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string spec_file;
    std::string kind = "sphere";
    std::string out;
    int views = 100, val_views = 8, test_views = 8, resolution = 64;
};

int cmd_synth(const SynthArgs& a, const Common& c) {
    Json spec = a.spec_file.empty() ? Json{{"kind", a.kind}} : read_json_file(a.spec_file);
    SceneSpec s = scene_spec_from_json(spec);
    if (a.views < 1 || a.val_views < 0 || a.test_views < 0 || a.resolution < 1)
        throw ConfigError("view counts must be >= 0 (train >= 1) and resolution >= 1");
    const fs::path out = a.out;
    guard_output(out / "transforms_train.json", c);
    const std::uint64_t seed = c.seed.value_or(0);
    const unsigned threads = thread_count(c);
    struct Part {
        Split split;
        int n;
        std::uint64_t seed;
    };
    for (const Part& p : {Part{Split::train, a.views, seed}, Part{Split::val, a.val_views, seed + 1},
                          Part{Split::test, a.test_views, seed + 2}}) {
        if (p.n == 0) continue;
        const std::string prefix = std::string("./") + to_string(p.split) + "/r_";
        Dataset ds = generate_synthetic_scene(s, p.n, a.resolution, p.seed, threads, prefix).first;
        save_dataset(out, p.split, ds);
    }
    Json resolved = {{"command", "synth"},    {"spec", spec},           {"views", a.views},
                     {"val_views", a.val_views}, {"test_views", a.test_views}, {"resolution", a.resolution},
                     {"seed", seed}};
    write_json(out / "synth_config.json", resolved);
    std::cout << "wrote " << a.views << '/' << a.val_views << '/' << a.test_views << " views to " << out.string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------- carve

struct CarveArgs {
    std::string data, split = "train", out;
    std::uint32_t resolution = 128;
    std::string dilation = "auto";
    std::uint32_t samples = 64;
};

int cmd_carve(const CarveArgs& a, const Common& c) {
    guard_output(a.out, c);
    Dataset ds = load_split(a.data, a.split);
    CarveOptions opts;
    opts.threads = thread_count(c);
    VoxelGrid grid = carve(ds, {a.resolution, a.resolution, a.resolution}, opts);
    std::uint32_t radius = 0;
    if (a.dilation == "auto") {
        radius = dilation_radius(a.resolution, a.samples);
    } else {
        try {
            const long v = std::stol(a.dilation);
            if (v < 0) throw ConfigError("dilation must be >= 0 or 'auto'");
            radius = static_cast<std::uint32_t>(v);
        } catch (const std::logic_error&) {
            throw ConfigError("dilation must be an integer or 'auto'");
        }
    }
    if (radius > 0) grid = dilate(grid, radius);
    save_grid(grid, a.out);
    write_json(fs::path(a.out).concat(".config.json"),
               {{"command", "carve"}, {"data", absolute_string(a.data)}, {"split", a.split},
                {"resolution", a.resolution}, {"dilation", radius}, {"samples", a.samples}});
    std::cout << "occupancy_fraction " << std::setprecision(17) << occupancy_fraction(grid) << '\n';
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string data, config, out, grid, resume;
    std::vector<std::string> overrides;
};

TrainConfig resolve_train_config(const std::string& file, const std::vector<std::string>& overrides, const Common& c) {
    Json j = file.empty() ? Json::object() : read_json_file(file);
    for (const auto& o : overrides) apply_override(j, o);
    if (c.seed) j["seed"] = *c.seed;
    if (c.threads) j["threads"] = c.threads;
    return train_config_from_json(j);
}

int cmd_train(const TrainArgs& a, const Common& c) {
    TrainConfig cfg = resolve_train_config(a.config, a.overrides, c);
    const fs::path out = a.out;
    if (!a.grid.empty()) cfg.grid_path = a.grid;
    if (cfg.grid_path) cfg.grid_path = absolute_string(*cfg.grid_path);
    if (!cfg.checkpoint_dir) cfg.checkpoint_dir = out;
    cfg.checkpoint_dir = absolute_string(*cfg.checkpoint_dir);
    if (a.resume.empty()) guard_output(out / "final.vxc", c);
    fs::create_directories(out);

    Dataset train = load_split(a.data, "train");
    std::optional<Dataset> val;
    if (fs::exists(manifest_path(a.data, Split::val))) val = load_split(a.data, "val");
    const Dataset* val_ptr = val ? &*val : nullptr;

    Json resolved = train_config_to_json(cfg);
    resolved["data"] = absolute_string(a.data);
    write_json(out / "config.json", resolved);

    const fs::path log_path = out / "log.csv";
    const bool append = !a.resume.empty() && fs::exists(log_path);
    std::optional<Trainer> trainer;
    if (a.resume.empty()) trainer.emplace(train, cfg, std::nullopt, val_ptr);
    else trainer.emplace(Trainer::resume(a.resume, train, cfg, std::nullopt, val_ptr));
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw ConfigError("cannot write " + log_path.string());
    trainer->run(&log, !append);
    trainer->save(out / "final.vxc");
    const auto& entries = trainer->log().entries;
    std::cout << "trained " << trainer->iteration() << " iterations";
    if (!entries.empty()) std::cout << ", final loss " << std::setprecision(6) << entries.back().loss;
    std::cout << "\ncheckpoint " << (out / "final.vxc").string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------- render / eval

struct RenderArgs {
    std::string checkpoint, data, split = "test", grid, out, csv;
    std::size_t chunk = 4096;
};

const VoxelGrid* grid_for(const NerfModel<float>& model, const std::optional<VoxelGrid>& grid) {
    if (uses_hull(model.mode) && !grid) throw ConfigError(std::string(to_string(model.mode)) + " checkpoints need --grid");
    return uses_hull(model.mode) ? &*grid : nullptr;
}

Json render_config(const char* command, const RenderArgs& a) {
    return {{"command", command},
            {"checkpoint", absolute_string(a.checkpoint)},
            {"data", absolute_string(a.data)},
            {"split", a.split},
            {"grid", a.grid.empty() ? Json(nullptr) : Json(absolute_string(a.grid))},
            {"chunk", a.chunk}};
}

int cmd_render(const RenderArgs& a, const Common& c) {
    const fs::path out = a.out;
    guard_output(out / "view_000.png", c);
    Checkpoint ck = load_checkpoint(a.checkpoint);
    Dataset ds = load_split(a.data, a.split);
    auto grid = optional_grid(a.grid);
    const VoxelGrid* g = grid_for(ck.model, grid);
    fs::create_directories(out);
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        Image img = render_image(ck.model, ds.views[i].pose, ds.near, ds.far, g, ds.background, a.chunk, thread_count(c));
        char name[32];
        std::snprintf(name, sizeof name, "view_%03zu.png", i);
        write_png(out / name, img, 8);
    }
    write_json(out / "render_config.json", render_config("render", a));
    std::cout << "rendered " << ds.views.size() << " views to " << out.string() << '\n';
    return kOk;
}

int cmd_eval(const RenderArgs& a, const Common& c) {
    if (!a.csv.empty()) guard_output(a.csv, c);
    if (!a.out.empty()) guard_output(fs::path(a.out) / "view_000.png", c);
    Checkpoint ck = load_checkpoint(a.checkpoint);
    Dataset ds = load_split(a.data, a.split);
    auto grid = optional_grid(a.grid);
    const VoxelGrid* g = grid_for(ck.model, grid);
    std::optional<fs::path> out_dir;
    if (!a.out.empty()) out_dir = a.out;
    EvalSummary s = evaluate(ck.model, ds, g, out_dir, a.chunk, thread_count(c));

    std::ostringstream table;
    table << "view,psnr,ssim\n" << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < s.views.size(); ++i) table << i << ',' << s.views[i].psnr << ',' << s.views[i].ssim << '\n';
    table << "mean," << s.mean_psnr << ',' << s.mean_ssim << '\n';
    std::cout << table.str();
    if (!a.csv.empty()) {
        std::ofstream f(a.csv);
        if (!f) throw ConfigError("cannot write " + a.csv);
        f << table.str();
        write_json(fs::path(a.csv).concat(".config.json"), render_config("eval", a));
    } else if (out_dir) {
        write_json(*out_dir / "eval_config.json", render_config("eval", a));
    }
    return kOk;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::string data, grid, suite, out;
};

int cmd_bench(const BenchArgs& a, const Common& c) {
    guard_output(a.out, c);
    Json suite = read_json_file(a.suite);
    detail::reject_unknown(suite, {"warmup_steps", "timed_steps", "repeats", "common", "configs"}, "bench suite");
    BenchOptions opt;
    detail::read_key(suite, "warmup_steps", opt.warmup_steps);
    detail::read_key(suite, "timed_steps", opt.timed_steps);
    detail::read_key(suite, "repeats", opt.repeats);
    const Json common = suite.value("common", Json::object());
    if (!suite.contains("configs") || !suite["configs"].is_array()) throw ConfigError("bench suite needs a configs array");

    Json resolved = {{"command", "bench"},
                     {"data", absolute_string(a.data)},
                     {"grid", a.grid.empty() ? Json(nullptr) : Json(absolute_string(a.grid))},
                     {"warmup_steps", opt.warmup_steps},
                     {"timed_steps", opt.timed_steps},
                     {"repeats", opt.repeats},
                     {"configs", Json::array()}};
    std::vector<BenchConfig> configs;
    for (const Json& entry : suite["configs"]) {
        if (!entry.is_object() || !entry.contains("label")) throw ConfigError("each bench config needs a label");
        Json train = common;
        if (entry.contains("train")) train.merge_patch(entry["train"]);
        if (c.seed) train["seed"] = *c.seed;
        if (c.threads) train["threads"] = c.threads;
        BenchConfig bc{entry["label"].get<std::string>(), train_config_from_json(train)};
        resolved["configs"].push_back({{"label", bc.label}, {"train", train_config_to_json(bc.train)}});
        configs.push_back(std::move(bc));
    }
    Dataset ds = load_split(a.data, "train");
    auto rows = bench_sampling(ds, optional_grid(a.grid), configs, opt);
    std::ofstream f(a.out);
    if (!f) throw ConfigError("cannot write " + a.out);
    write_bench_csv(f, rows);
    write_bench_csv(std::cout, rows);
    write_json(fs::path(a.out).concat(".config.json"), resolved);
    return kOk;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
    if (dynamic_cast<const TrainingError*>(&e) || dynamic_cast<const CapacityError*>(&e)) return kNumeric;
    if (dynamic_cast<const Error*>(&e)) return kData;  // dataset, file-format and validation errors
    return kInternal;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vaxnerf: visual-hull accelerated radiance field training"};
    app.require_subcommand(1);
    Common common;
    std::uint64_t seed = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_flag("--force", common.force, "Overwrite existing outputs");
        sub->add_option("--threads", common.threads, "Worker threads (0 = all cores)");
        sub->add_option("--seed", seed, "Seed for every stochastic component");
    };

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic scene dataset");
    s->add_option("--spec", synth.spec_file, "Scene spec JSON file");
    s->add_option("--kind", synth.kind, "Scene kind when no spec file is given")
        ->check(CLI::IsMember({"sphere", "torus", "two_lobe", "rod"}));
    s->add_option("--views", synth.views, "Training views");
    s->add_option("--val-views", synth.val_views, "Validation views");
    s->add_option("--test-views", synth.test_views, "Test views");
    s->add_option("--resolution", synth.resolution, "Image width and height");
    s->add_option("--out", synth.out, "Output dataset directory")->required();
    add_common(s);

    CarveArgs carve_args;
    auto* cv = app.add_subcommand("carve", "Carve a visual hull voxel grid");
    cv->add_option("--data", carve_args.data, "Dataset directory")->required();
    cv->add_option("--split", carve_args.split, "Dataset split")->check(CLI::IsMember({"train", "val", "test"}));
    cv->add_option("--resolution", carve_args.resolution, "Cells per axis");
    cv->add_option("--dilation", carve_args.dilation, "Dilation radius in cells, or 'auto'");
    cv->add_option("--samples", carve_args.samples, "Samples per ray for the automatic dilation rule");
    cv->add_option("--out", carve_args.out, "Output grid file")->required();
    add_common(cv);

    TrainArgs train_args;
    auto* tr = app.add_subcommand("train", "Train a radiance field");
    tr->add_option("--data", train_args.data, "Dataset directory")->required();
    tr->add_option("--config", train_args.config, "Training config JSON file");
    tr->add_option("--set", train_args.overrides, "Override a config key, e.g. --set mlp.width=64");
    tr->add_option("--grid", train_args.grid, "Voxel grid for vax modes");
    tr->add_option("--resume", train_args.resume, "Checkpoint to resume from");
    tr->add_option("--out", train_args.out, "Output directory")->required();
    add_common(tr);

    RenderArgs render_args;
    auto* rd = app.add_subcommand("render", "Render dataset poses from a checkpoint");
    RenderArgs eval_args;
    auto* ev = app.add_subcommand("eval", "Score a checkpoint against a dataset split");
    for (auto [sub, args] : {std::pair{rd, &render_args}, std::pair{ev, &eval_args}}) {
        sub->add_option("--checkpoint", args->checkpoint, "Checkpoint file")->required();
        sub->add_option("--data", args->data, "Dataset directory providing poses")->required();
        sub->add_option("--split", args->split, "Dataset split")->check(CLI::IsMember({"train", "val", "test"}));
        sub->add_option("--grid", args->grid, "Voxel grid for vax checkpoints");
        sub->add_option("--chunk", args->chunk, "Rays per render chunk")->check(CLI::PositiveNumber);
        add_common(sub);
    }
    rd->add_option("--out", render_args.out, "Output image directory")->required();
    ev->add_option("--out", eval_args.out, "Optional directory for rendered images");
    ev->add_option("--csv", eval_args.csv, "Optional CSV output file");

    BenchArgs bench_args;
    auto* bn = app.add_subcommand("bench", "Benchmark training throughput");
    bn->add_option("--data", bench_args.data, "Dataset directory")->required();
    bn->add_option("--grid", bench_args.grid, "Voxel grid for vax configurations");
    bn->add_option("--suite", bench_args.suite, "Bench suite JSON file")->required();
    bn->add_option("--out", bench_args.out, "Output CSV file")->required();
    add_common(bn);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }
    for (CLI::App* sub : app.get_subcommands())
        if (sub->count("--seed")) common.seed = seed;

    try {
        if (*s) return cmd_synth(synth, common);
        if (*cv) return cmd_carve(carve_args, common);
        if (*tr) return cmd_train(train_args, common);
        if (*rd) return cmd_render(render_args, common);
        if (*ev) return cmd_eval(eval_args, common);
        if (*bn) return cmd_bench(bench_args, common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kUsage;
}

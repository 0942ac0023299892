#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace vaxnerf;
using test::TempDir;

namespace {

const Dataset& scene() {
    static Dataset ds = generate_synthetic_scene(test::sphere_spec(), 8, 24, 17).first;
    return ds;
}

const Dataset& held_out() {
    static Dataset ds = generate_synthetic_scene(test::sphere_spec(), 2, 24, 18, default_threads(), "./val/r_").first;
    return ds;
}

const VoxelGrid& hull() {
    static VoxelGrid g = dilate(carve(scene(), {48, 48, 48}), 1);
    return g;
}

TrainConfig small_config(TrainMode mode, std::uint32_t nc, std::uint32_t nf, std::uint64_t iters) {
    TrainConfig c;
    c.mode = mode;
    c.n_coarse = nc;
    c.n_fine = nf;
    c.batch_rays = 48;
    c.iterations = iters;
    c.mlp = test::tiny_mlp(2, 16);
    c.seed = 7;
    c.log_every = 1;
    c.shard_rays = 16;
    c.threads = 1;
    c.probe_iters = 4;
    return c;
}

std::vector<double> losses(const TrainLog& log) {
    std::vector<double> out;
    for (const auto& e : log.entries) out.push_back(e.loss);
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST(LearningRate, Schedule) {
    TrainConfig c;
    c.iterations = 1000;
    c.lr_init = 5e-4;
    c.lr_final = 5e-6;
    EXPECT_EQ(lr_at(0, c), 5e-4);
    EXPECT_NEAR(lr_at(1000, c), 5e-6, 1e-18);
    EXPECT_NEAR(lr_at(500, c), std::sqrt(5e-4 * 5e-6), 1e-18);
}

TEST(TrainConfig, ModeConstraints) {
    EXPECT_THROW(small_config(TrainMode::vax_single, 32, 16, 1).validate(), ConfigError);
    EXPECT_THROW(small_config(TrainMode::vax_hier, 32, 0, 1).validate(), ConfigError);
    EXPECT_NO_THROW(small_config(TrainMode::baseline, 32, 0, 1).validate());
    EXPECT_THROW(Trainer(scene(), small_config(TrainMode::vax_single, 32, 0, 1)), ConfigError);
    TrainConfig bad = small_config(TrainMode::baseline, 32, 0, 1);
    bad.batch_rays = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Train, ZeroIterationsReturnsInitialModel) {
    TrainConfig c = small_config(TrainMode::baseline, 16, 16, 0);
    TrainResult r = train(scene(), c);
    EXPECT_TRUE(r.log.entries.empty());
    EXPECT_EQ(r.model, NerfModel<float>::create(TrainMode::baseline, 16, 16, c.mlp, c.seed));
}

TEST(Train, BaselinePointCountsPerStep) {
    TrainConfig c = small_config(TrainMode::baseline, 64, 128, 1);
    c.batch_rays = 4096;
    c.shard_rays = 512;
    c.threads = default_threads();
    Trainer t(scene(), c);
    TrainLogEntry e = t.step();
    EXPECT_EQ(e.points, 1048576u);  // 4096 * (64 + (64 + 128))
    EXPECT_EQ(e.distinct_points, 4096u * (64u + 128u));
}

TEST(Train, VaxNeverEvaluatesMorePointsThanBaseline) {
    Trainer base(scene(), small_config(TrainMode::baseline, 32, 32, 10));
    Trainer vax(scene(), small_config(TrainMode::vax_hier, 32, 32, 10), hull());
    for (int i = 0; i < 10; ++i) {
        auto b = base.step(), v = vax.step();
        EXPECT_LE(v.points, b.points);
        EXPECT_LT(v.points, b.points);
    }
}

TEST(Train, VaxSingleWithFullGridMatchesCoarseBaseline) {
    const VoxelGrid full = test::full_grid(test::enclosing_bounds(scene()));
    TrainResult b = train(scene(), small_config(TrainMode::baseline, 32, 0, 30));
    TrainResult v = train(scene(), small_config(TrainMode::vax_single, 32, 0, 30), full);
    ASSERT_EQ(b.log.entries.size(), 30u);
    ASSERT_EQ(v.log.entries.size(), 30u);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_NEAR(v.log.entries[i].loss, b.log.entries[i].loss, 1e-6);
        EXPECT_EQ(v.log.entries[i].points, b.log.entries[i].points);
    }
}

TEST(Train, ThreadCountDoesNotChangeLosses) {
    for (TrainMode mode : {TrainMode::baseline, TrainMode::vax_hier}) {
        TrainConfig c = small_config(mode, 24, 24, 12);
        TrainResult one = train(scene(), c, hull());
        c.threads = 3;
        TrainResult many = train(scene(), c, hull());
        EXPECT_EQ(losses(one.log), losses(many.log));
        EXPECT_EQ(one.model, many.model);
    }
}

TEST(Train, ResumeIsBitExact) {
    TempDir dir("resume");
    for (TrainMode mode : {TrainMode::baseline, TrainMode::vax_hier}) {
        TrainConfig c = small_config(mode, 16, 16, 20);
        Trainer full(scene(), c, hull());
        full.run();

        Trainer first(scene(), c, hull());
        for (int i = 0; i < 10; ++i) first.step();
        first.save(dir / "mid.vxc");
        Trainer second = Trainer::resume(dir / "mid.vxc", scene(), c, hull());
        EXPECT_EQ(second.iteration(), 10u);
        second.run();
        EXPECT_EQ(second.model(), full.model());
        EXPECT_EQ(second.state(), full.state());
        ASSERT_EQ(second.log().entries.size(), 10u);
        for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(second.log().entries[i].loss, full.log().entries[10 + i].loss);
    }
}

TEST(Checkpoint, RoundTripPreservesEverything) {
    TempDir dir("ckpt");
    TrainConfig c = small_config(TrainMode::vax_hier, 16, 16, 5);
    c.mlp.density_shift = -0.1;  // not representable in f32
    Trainer t(scene(), c, hull());
    t.run();
    t.save(dir / "a.vxc");
    Checkpoint ck = load_checkpoint(dir / "a.vxc");
    EXPECT_EQ(ck.model, t.model());
    ASSERT_TRUE(ck.state.has_value());
    EXPECT_EQ(*ck.state, t.state());
    EXPECT_EQ(ck.state->adam[1].v, t.state().adam[1].v);
    EXPECT_EQ(ck.model.nets[0].config().density_shift, -0.1);
    // Model-only checkpoints carry no state.
    save_checkpoint(dir / "b.vxc", t.model(), nullptr);
    EXPECT_FALSE(load_checkpoint(dir / "b.vxc").state.has_value());
}

TEST(Checkpoint, FormatErrors) {
    TempDir dir("ckptbad");
    EXPECT_THROW(load_checkpoint(dir / "missing.vxc"), FormatError);
    auto model = NerfModel<float>::create(TrainMode::baseline, 8, 0, test::tiny_mlp(), 1);
    auto bytes = encode_checkpoint(model, nullptr);
    auto version = bytes;
    version[8] = 9;  // version field follows the magic
    EXPECT_THROW(decode_checkpoint(version), FormatError);
    auto magic = bytes;
    magic[0] = 'Q';
    EXPECT_THROW(decode_checkpoint(magic), FormatError);
    bytes.pop_back();
    EXPECT_THROW(decode_checkpoint(bytes), FormatError);
    EXPECT_THROW(Trainer::resume(dir / "missing.vxc", scene(), small_config(TrainMode::baseline, 8, 0, 1)), FormatError);
}

TEST(Checkpoint, ResumeRejectsDifferentConfiguration) {
    TempDir dir("ckptcfg");
    TrainConfig c = small_config(TrainMode::baseline, 16, 0, 2);
    Trainer t(scene(), c);
    t.run();
    t.save(dir / "c.vxc");
    TrainConfig other = c;
    other.n_coarse = 32;
    EXPECT_THROW(Trainer::resume(dir / "c.vxc", scene(), other), FormatError);
}

TEST(Train, NonFiniteLossRaisesTrainingErrorWithStateDump) {
    TempDir dir("nan");
    Dataset ds = scene();
    for (auto& v : ds.views) std::fill(v.image.data.begin(), v.image.data.end(), std::nanf(""));
    TrainConfig c = small_config(TrainMode::baseline, 8, 0, 3);
    c.seed = 1234;
    c.checkpoint_dir = dir.path();
    Trainer t(ds, c);
    try {
        t.step();
        FAIL() << "expected a training error";
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.seed(), 1234u);
        EXPECT_EQ(e.iteration(), 0u);
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "failed_state.vxc"));
}

TEST(Train, OverflowRecalibratesToTheWorstCase) {
    TrainConfig c = small_config(TrainMode::vax_hier, 64, 16, 50);
    c.probe_iters = 0;  // capacity starts at 1
    c.capacity_safety = 1.0;
    Trainer t(scene(), c, hull());
    EXPECT_EQ(t.state().capacity.coarse, 1u);
    t.step();
    EXPECT_EQ(t.state().recalibrations, 1u);
    const std::size_t bound = capacity_bound(scene(), hull(), 64);
    EXPECT_GE(t.state().capacity.coarse, bound);
    EXPECT_LE(t.state().capacity.coarse, 64u);
    EXPECT_EQ(t.state().capacity.fine, std::min<std::size_t>(80, t.state().capacity.coarse + 16));
    while (!t.done()) t.step();
    EXPECT_EQ(t.state().recalibrations, 1u);
}

TEST(Train, SecondOverflowIsACapacityError) {
    TempDir dir("overflow");
    TrainConfig c = small_config(TrainMode::vax_single, 64, 0, 10);
    Trainer t(scene(), c, hull());
    TrainingState st = t.state();
    st.capacity.coarse = 1;
    st.recalibrations = 1;
    save_checkpoint(dir / "tight.vxc", t.model(), &st);
    Trainer r = Trainer::resume(dir / "tight.vxc", scene(), c, hull());
    try {
        r.step();
        FAIL() << "expected a capacity error";
    } catch (const CapacityError& e) {
        EXPECT_EQ(e.capacity(), 1u);
        EXPECT_GT(e.observed_max(), 1u);
    }
}

TEST(CapacityBound, CoversEveryPixelAndRespectsLimits) {
    const std::size_t bound = capacity_bound(scene(), hull(), 64);
    EXPECT_GE(bound, 1u);
    EXPECT_LE(bound, 64u);
    EXPECT_EQ(capacity_bound(scene(), test::full_grid(test::enclosing_bounds(scene())), 40), 40u);
    VoxelGrid empty({4, 4, 4}, scene().scene_bounds, false);
    EXPECT_EQ(capacity_bound(scene(), empty, 64), 0u);
    // Random jittered batches never exceed the pixel-wise bound.
    TrainConfig c = small_config(TrainMode::vax_single, 64, 0, 1);
    c.capacity_safety = 1.0;
    EXPECT_LE(calibrate_capacity(scene(), hull(), c, 20), bound);
    EXPECT_EQ(capacity_bound(scene(), hull(), 64, 1), capacity_bound(scene(), hull(), 64, 3));
}

TEST(Train, CalibratedCapacityMatchesHelper) {
    TrainConfig c = small_config(TrainMode::vax_hier, 32, 16, 1);
    Trainer t(scene(), c, hull());
    const std::size_t cap = calibrate_capacity(scene(), hull(), c, c.probe_iters);
    EXPECT_EQ(t.state().capacity.coarse, cap);
    EXPECT_EQ(t.state().capacity.fine, std::min<std::size_t>(48, cap + 16));
}

TEST(Train, LogIsStrictlyIncreasingAndCsvHeaderExact) {
    TrainConfig c = small_config(TrainMode::vax_single, 16, 0, 10);
    c.log_every = 3;
    Trainer t(scene(), c, hull(), &held_out());
    std::ostringstream csv;
    t.run(&csv);
    const auto& e = t.log().entries;
    ASSERT_EQ(e.size(), 4u);  // 3, 6, 9 and the final step
    EXPECT_EQ(e.back().iteration, 10u);
    for (std::size_t i = 1; i < e.size(); ++i) EXPECT_GT(e[i].iteration, e[i - 1].iteration);
    for (const auto& x : e) {
        ASSERT_TRUE(x.val_psnr.has_value());
        EXPECT_GT(*x.val_psnr, 0.0);
    }
    std::istringstream in(csv.str());
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "iter,wall_s,loss,points,rays_per_s,val_psnr");
    std::string row;
    int rows = 0;
    while (std::getline(in, row)) {
        ++rows;
        EXPECT_EQ(std::count(row.begin(), row.end(), ','), 5);
    }
    EXPECT_EQ(rows, 4);
}

TEST(Train, EveryForegroundRayKeepsSamples) {
    const VoxelGrid& g = hull();
    for (const auto& v : scene().views)
        for (int r = 0; r < v.pose.height; ++r)
            for (int c = 0; c < v.pose.width; ++c) {
                if (!v.mask.at(r, c)) continue;
                Ray ray = pixel_ray(v.pose, r, c, scene().near, scene().far);
                ASSERT_GT(reject_by_hull(g, ray, sample_coarse(ray, 64)).kept(), 0u);
            }
}

TEST(Train, LossDecreasesOnSphereScene) {
    TrainConfig c = small_config(TrainMode::vax_single, 32, 0, 2000);
    c.mlp = test::tiny_mlp(2, 32);
    c.batch_rays = 64;
    c.lr_init = 5e-3;
    c.lr_final = 5e-4;
    c.threads = default_threads();
    TrainResult r = train(scene(), c, hull());
    auto l = losses(r.log);
    ASSERT_EQ(l.size(), 2000u);
    std::vector<double> head(l.begin(), l.begin() + 200), tail(l.end() - 200, l.end());
    EXPECT_LT(median(tail), median(head));
}

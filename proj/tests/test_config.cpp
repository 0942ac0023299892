#include <fstream>

#include "test_util.hpp"

using namespace vaxnerf;
using test::TempDir;

TEST(Config, DefaultsWhenEmpty) {
    TrainConfig c = train_config_from_json(Json::object());
    TrainConfig d;
    EXPECT_EQ(c.n_coarse, d.n_coarse);
    EXPECT_EQ(c.n_fine, d.n_fine);
    EXPECT_EQ(c.batch_rays, 4096u);
    EXPECT_EQ(c.lr_init, 5e-4);
    EXPECT_EQ(c.lr_final, 5e-6);
    EXPECT_EQ(c.mlp.depth, 8);
    EXPECT_EQ(c.mlp.width, 256);
    EXPECT_GE(c.threads, 1u);
}

TEST(Config, UnknownKeysAreRejected) {
    EXPECT_THROW(train_config_from_json(Json{{"n_corse", 32}}), ConfigError);
    EXPECT_THROW(train_config_from_json(Json{{"mlp", {{"widht", 32}}}}), ConfigError);
    EXPECT_THROW(train_config_from_json(Json{{"mode", "fast"}}), ConfigError);
    EXPECT_THROW(train_config_from_json(Json{{"n_coarse", "many"}}), ConfigError);
    EXPECT_THROW(train_config_from_json(Json{{"mode", "vax_single"}, {"n_fine", 64}}), ConfigError);
}

TEST(Config, OverridesUseDottedPaths) {
    Json j = {{"mode", "baseline"}, {"mlp", {{"width", 64}}}};
    apply_override(j, "mlp.width=32");
    apply_override(j, "mlp.depth=4");
    apply_override(j, "mode=vax_hier");
    apply_override(j, "grid=out/grid.vxg");
    apply_override(j, "lr_init=1e-3");
    TrainConfig c = train_config_from_json(j);
    EXPECT_EQ(c.mlp.width, 32);
    EXPECT_EQ(c.mlp.depth, 4);
    EXPECT_EQ(c.mode, TrainMode::vax_hier);
    ASSERT_TRUE(c.grid_path.has_value());
    EXPECT_EQ(c.grid_path->string(), "out/grid.vxg");
    EXPECT_EQ(c.lr_init, 1e-3);
    EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
    EXPECT_THROW(apply_override(j, "mode.x=1"), ConfigError);  // cannot descend into a string
}

TEST(Config, RoundTripIsExact) {
    TrainConfig c;
    c.mode = TrainMode::vax_single;
    c.n_coarse = 96;
    c.n_fine = 0;
    c.lr_init = 1.0 / 3.0;
    c.seed = 0xfeedfacecafebeefULL;
    c.threads = 3;
    c.mlp = test::tiny_mlp(3, 24);
    c.mlp.density_activation = DensityActivation::relu;
    c.mlp.density_shift = -0.1;
    c.grid_path = "g.vxg";
    c.checkpoint_dir = "ck";
    const Json j = train_config_to_json(c);
    TrainConfig back = train_config_from_json(Json::parse(j.dump()));
    EXPECT_EQ(train_config_to_json(back), j);
    EXPECT_EQ(back.seed, c.seed);
    EXPECT_EQ(back.lr_init, c.lr_init);
    EXPECT_EQ(back.mlp.density_shift, -0.1);
}

TEST(Config, ReadJsonFileErrors) {
    TempDir dir("cfg");
    EXPECT_THROW(read_json_file(dir / "absent.json"), ConfigError);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_THROW(read_json_file(dir / "bad.json"), ConfigError);
    std::ofstream(dir / "ok.json") << R"({"n_coarse": 8})";
    EXPECT_EQ(read_json_file(dir / "ok.json")["n_coarse"], 8);
}

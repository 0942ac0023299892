#include <cmath>
#include <fstream>
#include <numbers>

#include "test_util.hpp"

using namespace vaxnerf;
using test::TempDir;

namespace {

void write_manifest(const std::filesystem::path& file, const nlohmann::json& j) {
    std::ofstream out(file);
    out << j.dump(2);
}

nlohmann::json frame(const std::string& path, const Mat4& m) {
    return {{"file_path", path}, {"transform_matrix", detail::matrix_to_json(m)}};
}

void write_rgba(const std::filesystem::path& file, int w, int h, float alpha) {
    Image img(w, h, 4);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            img.at(r, c, 0) = 0.2f;
            img.at(r, c, 1) = 0.4f;
            img.at(r, c, 2) = 0.6f;
            img.at(r, c, 3) = alpha;
        }
    std::filesystem::create_directories(file.parent_path());
    write_png(file, img, 8);
}

/// Analytic ray-sphere test on the ray's closest approach to the centre.
double closest_approach(const Vec3& o, const Vec3& d, const Vec3& c) {
    double t = std::max(0.0, (c - o).dot(d));
    return (o + t * d - c).norm();
}

}  // namespace

// ---------------------------------------------------------------- camera

TEST(Camera, LookAtIsProperRotation) {
    Mat4 m = look_at(Vec3(2, -3, 1.5), Vec3(0.1, 0.2, 0.0));
    CameraPose p;
    p.width = p.height = 8;
    p.focal = 5;
    p.cam_to_world = m;
    EXPECT_NO_THROW(p.validate());
    EXPECT_LT((p.forward() - (Vec3(0.1, 0.2, 0.0) - Vec3(2, -3, 1.5)).normalized()).norm(), 1e-12);
}

TEST(Camera, ValidateRejectsImproperPoses) {
    CameraPose p;
    p.width = p.height = 8;
    p.focal = 5;
    p.cam_to_world = Mat4::Identity();
    p.cam_to_world(0, 0) = -1.0;  // reflection
    EXPECT_THROW(p.validate(), ValidationError);
    p.cam_to_world = Mat4::Identity();
    p.cam_to_world(1, 1) = 0.0;  // singular
    EXPECT_THROW(p.validate(), ValidationError);
    p.cam_to_world = Mat4::Identity();
    p.focal = 0.0;
    EXPECT_THROW(p.validate(), ValidationError);
}

TEST(Camera, ProjectInvertsPixelRays) {
    CameraPose p;
    p.width = 40;
    p.height = 30;
    p.focal = 33;
    p.principal_point = Eigen::Vector2d(20, 15);
    p.cam_to_world = look_at(Vec3(0, -4, 1), Vec3::Zero());
    for (double u : {0.5, 13.25, 39.5})
        for (double v : {0.5, 7.75, 29.5}) {
            Vec3 x = p.origin() + 3.7 * p.direction_through(u, v);
            auto uv = p.project(x);
            ASSERT_TRUE(uv.has_value());
            EXPECT_NEAR(uv->x(), u, 1e-9);
            EXPECT_NEAR(uv->y(), v, 1e-9);
        }
    EXPECT_FALSE(p.project(p.origin() - p.forward()).has_value());
}

// ---------------------------------------------------------------- images

TEST(Png, EightBitRoundTripIsExact) {
    TempDir dir("png8");
    Image img(5, 3, 4);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    write_png(dir / "a.png", img, 8);
    Image back = read_png(dir / "a.png");
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(back.data[i], img.data[i]);
}

TEST(Png, SixteenBitRoundTrip) {
    TempDir dir("png16");
    Image img(4, 4, 3);
    Rng rng(1);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    write_png(dir / "b.png", img, 16);
    Image back = read_png(dir / "b.png");
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 65535.0 + 1e-7);
}

TEST(Png, GarbageIsDatasetFormatError) {
    TempDir dir("pngbad");
    std::ofstream(dir / "x.png") << "not a png";
    EXPECT_THROW(read_png(dir / "x.png"), DatasetFormatError);
    EXPECT_THROW(read_png(dir / "missing.png"), DatasetFormatError);
}

// ---------------------------------------------------------------- masks

TEST(ExtractMask, AlphaPolicy) {
    Image img(2, 1, 4);
    float px0[4] = {0.2f, 0.2f, 0.2f, 1.0f}, px1[4] = {1, 1, 1, 0};
    for (int k = 0; k < 4; ++k) {
        img.at(0, 0, k) = px0[k];
        img.at(0, 1, k) = px1[k];
    }
    Mask m = extract_mask(img, MaskPolicy::alpha());
    EXPECT_TRUE(m.at(0, 0));
    EXPECT_FALSE(m.at(0, 1));
}

TEST(ExtractMask, LuminancePolicy) {
    Image white(6, 4, 3);
    std::fill(white.data.begin(), white.data.end(), 1.0f);
    EXPECT_EQ(extract_mask(white, MaskPolicy::luminance(0.99)).count(), 0u);
    white.at(2, 3, 1) = 0.5f;
    Mask m = extract_mask(white, MaskPolicy::luminance(0.99));
    EXPECT_EQ(m.count(), 1u);
    EXPECT_TRUE(m.at(2, 3));
}

TEST(ExtractMask, ThresholdOutsideRangeIsConfigError) {
    Image img(2, 2, 3);
    EXPECT_THROW(extract_mask(img, MaskPolicy::luminance(0.0)), ConfigError);
    EXPECT_THROW(extract_mask(img, MaskPolicy::luminance(1.5)), ConfigError);
    EXPECT_NO_THROW(extract_mask(img, MaskPolicy::luminance(1.0)));
}

TEST(ExtractMask, IdempotentAndOrderIndependent) {
    Rng rng(3);
    Image img(9, 7, 4);
    for (float& v : img.data) v = rng.uniform() < 0.3 ? 1.0f : static_cast<float>(rng.uniform());
    for (auto policy : {MaskPolicy::alpha(), MaskPolicy::luminance(0.9)}) {
        Mask m = extract_mask(img, policy);
        // Re-encode the mask as an image and extract again.
        Image enc(9, 7, 4);
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 9; ++c)
                for (int k = 0; k < 4; ++k) enc.at(r, c, k) = m.at(r, c) ? (k == 3 ? 1.0f : 0.0f) : (k == 3 ? 0.0f : 1.0f);
        EXPECT_EQ(extract_mask(enc, policy), m);
        // Transposed pixel order gives the transposed mask.
        Image tr(7, 9, 4);
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 9; ++c)
                for (int k = 0; k < 4; ++k) tr.at(c, r, k) = img.at(r, c, k);
        Mask mt = extract_mask(tr, policy);
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 9; ++c) EXPECT_EQ(mt.at(c, r), m.at(r, c));
    }
}

// ---------------------------------------------------------------- manifests

TEST(LoadDataset, FocalFromFieldOfView) {
    TempDir dir("focal");
    write_manifest(dir / "transforms_train.json",
                   {{"camera_angle_x", std::numbers::pi / 2}, {"w", 800}, {"h", 800},
                    {"frames", {frame("./train/r_0", look_at(Vec3(0, -4, 0), Vec3::Zero()))}}});
    Dataset ds = read_manifest(dir / "transforms_train.json");
    finalize_intrinsics(ds);
    EXPECT_NEAR(ds.views[0].pose.focal, 400.0, 1e-9);
    EXPECT_EQ(ds.views[0].pose.principal_point, Eigen::Vector2d(400, 400));
}

TEST(LoadDataset, HundredFrames) {
    TempDir dir("hundred");
    nlohmann::json frames = nlohmann::json::array();
    for (int i = 0; i < 100; ++i) {
        write_rgba(dir / "train" / ("r_" + std::to_string(i) + ".png"), 4, 4, i % 2 ? 1.0f : 0.0f);
        double phi = 2 * std::numbers::pi * i / 100.0;
        frames.push_back(frame("./train/r_" + std::to_string(i), look_at(4.0 * Vec3(std::cos(phi), std::sin(phi), 0.5), Vec3::Zero())));
    }
    write_manifest(dir / "transforms_train.json", {{"camera_angle_x", 0.69}, {"frames", frames}});
    Dataset ds = load_dataset(dir.path(), Split::train);
    ASSERT_EQ(ds.views.size(), 100u);
    EXPECT_NEAR(ds.views[0].pose.focal, 2.0 / std::tan(0.345), 1e-12);
    EXPECT_EQ(ds.views[0].mask.count(), 0u);
    EXPECT_EQ(ds.views[1].mask.count(), 16u);
    // Transparent pixels composite onto the white background.
    EXPECT_EQ(ds.views[0].image.at(0, 0, 0), 1.0f);
    EXPECT_NEAR(ds.views[1].image.at(0, 0, 0), 51.0f / 255.0f, 1e-7);
    EXPECT_EQ(ds.scene_bounds.min, Vec3::Constant(-1.5));
}

TEST(LoadDataset, MissingFilesAreFormatErrors) {
    TempDir dir("missing");
    EXPECT_THROW(load_dataset(dir.path(), Split::train), DatasetFormatError);
    write_manifest(dir / "transforms_val.json",
                   {{"camera_angle_x", 0.7}, {"frames", {frame("./val/r_0", look_at(Vec3(0, -4, 0), Vec3::Zero()))}}});
    EXPECT_THROW(load_dataset(dir.path(), Split::val), DatasetFormatError);
    std::ofstream(dir / "transforms_test.json") << "{ not json";
    EXPECT_THROW(load_dataset(dir.path(), Split::test), DatasetFormatError);
}

TEST(LoadDataset, SizeMismatchIsValidationError) {
    TempDir dir("size");
    write_rgba(dir / "train" / "r_0.png", 4, 4, 1.0f);
    write_manifest(dir / "transforms_train.json", {{"camera_angle_x", 0.7}, {"w", 8}, {"h", 8},
                                                   {"frames", {frame("./train/r_0", look_at(Vec3(0, -4, 0), Vec3::Zero()))}}});
    EXPECT_THROW(load_dataset(dir.path(), Split::train), ValidationError);
}

TEST(LoadDataset, SingularPoseIsValidationError) {
    TempDir dir("singular");
    write_rgba(dir / "train" / "r_0.png", 4, 4, 1.0f);
    Mat4 m = Mat4::Identity();
    m(2, 2) = 0.0;
    write_manifest(dir / "transforms_train.json", {{"camera_angle_x", 0.7}, {"frames", {frame("./train/r_0", m)}}});
    EXPECT_THROW(load_dataset(dir.path(), Split::train), ValidationError);
}

TEST(LoadDataset, SaveLoadRoundTripKeepsPosesAndMasks) {
    TempDir dir("roundtrip");
    auto [ds, oracle] = generate_synthetic_scene(test::sphere_spec(), 3, 16, 42, 1);
    save_dataset(dir.path(), Split::train, ds);
    Dataset back = load_dataset(dir.path(), Split::train);
    ASSERT_EQ(back.views.size(), ds.views.size());
    EXPECT_EQ(back.near, ds.near);
    EXPECT_EQ(back.far, ds.far);
    EXPECT_EQ(back.scene_bounds, ds.scene_bounds);
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        EXPECT_LT((back.views[i].pose.cam_to_world - ds.views[i].pose.cam_to_world).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(back.views[i].pose.focal, ds.views[i].pose.focal, 1e-9);
        EXPECT_EQ(back.views[i].mask, ds.views[i].mask);
        for (std::size_t k = 0; k < ds.views[i].image.data.size(); ++k) {
            // Background pixels are re-composited, foreground ones only quantised.
            EXPECT_NEAR(back.views[i].image.data[k], ds.views[i].image.data[k], 1e-4);
        }
    }
}

TEST(Split, ParseAndPrint) {
    EXPECT_EQ(parse_split("val"), Split::val);
    EXPECT_STREQ(to_string(Split::test), "test");
    EXPECT_THROW(parse_split("holdout"), ConfigError);
}

// ---------------------------------------------------------------- synthetic scenes

TEST(Synthetic, ShapesAndDeterminism) {
    auto a = generate_synthetic_scene(test::sphere_spec(), 20, 64, 5, 2).first;
    ASSERT_EQ(a.views.size(), 20u);
    for (const auto& v : a.views) {
        EXPECT_EQ(v.image.width, 64);
        EXPECT_EQ(v.image.height, 64);
        EXPECT_EQ(v.mask.width, 64);
        EXPECT_NO_THROW(v.pose.validate());
        Vec3 o = v.pose.origin();
        EXPECT_GT(o.z(), 0.0);  // upper hemisphere
        EXPECT_LT((v.pose.forward() + o.normalized()).norm(), 1e-12);
    }
    auto b = generate_synthetic_scene(test::sphere_spec(), 20, 64, 5, 1).first;
    for (std::size_t i = 0; i < a.views.size(); ++i) {
        EXPECT_EQ(a.views[i].image.data, b.views[i].image.data);
        EXPECT_EQ(a.views[i].mask, b.views[i].mask);
        EXPECT_EQ(a.views[i].pose.cam_to_world, b.views[i].pose.cam_to_world);
    }
    auto c = generate_synthetic_scene(test::sphere_spec(), 20, 64, 6, 1).first;
    EXPECT_NE(a.views[0].pose.cam_to_world, c.views[0].pose.cam_to_world);
}

TEST(Synthetic, SphereMaskMatchesClosestApproach) {
    auto [ds, oracle] = generate_synthetic_scene(test::sphere_spec(0.5), 20, 32, 9, 2);
    std::size_t checked = 0, foreground = 0;
    for (const auto& v : ds.views)
        for (int r = 0; r < 32; ++r)
            for (int c = 0; c < 32; ++c) {
                Vec3 d = v.pose.direction_through(c + 0.5, r + 0.5);
                double dist = closest_approach(v.pose.origin(), d, Vec3::Zero());
                if (std::abs(dist - 0.5) < 1e-7) continue;  // grazing ray, either answer is exact enough
                ASSERT_EQ(v.mask.at(r, c), dist < 0.5);
                ++checked;
                foreground += dist < 0.5;
            }
    EXPECT_GE(checked, 10000u);
    EXPECT_GT(foreground, 1000u);
}

TEST(Synthetic, TwoLobeMaskMatchesAnalyticIntersection) {
    SceneSpec spec;
    TwoLobeShape sh;
    spec.shape = sh;
    auto [ds, oracle] = generate_synthetic_scene(spec, 12, 32, 10, 2);
    for (const auto& v : ds.views)
        for (int r = 0; r < 32; ++r)
            for (int c = 0; c < 32; ++c) {
                Vec3 o = v.pose.origin(), d = v.pose.direction_through(c + 0.5, r + 0.5);
                double da = closest_approach(o, d, sh.center_a) - sh.radius_a;
                double db = closest_approach(o, d, sh.center_b) - sh.radius_b;
                if (std::abs(da) < 1e-7 || std::abs(db) < 1e-7) continue;
                ASSERT_EQ(v.mask.at(r, c), da < 0.0 || db < 0.0);
            }
}

TEST(Synthetic, OracleOccupancyIffPositiveDensity) {
    Rng rng(4);
    for (const Shape& shape : std::vector<Shape>{SphereShape{}, TorusShape{}, TwoLobeShape{}, RodShape{}}) {
        SceneSpec spec;
        spec.shape = shape;
        SceneOracle o(spec);
        for (int i = 0; i < 2000; ++i) {
            Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            EXPECT_EQ(o.occupancy(p), o.density(p) > 0.0);
        }
    }
}

TEST(Synthetic, BackgroundPixelsAreBackgroundColour) {
    auto [ds, oracle] = generate_synthetic_scene(test::sphere_spec(), 2, 16, 3, 1);
    for (const auto& v : ds.views)
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c)
                if (!v.mask.at(r, c))
                    for (int k = 0; k < 3; ++k) EXPECT_EQ(v.image.at(r, c, k), 1.0f);
}

TEST(Synthetic, InvalidRequests) {
    EXPECT_THROW(generate_synthetic_scene(test::sphere_spec(), 1, 32, 0), ConfigError);
    EXPECT_THROW(generate_synthetic_scene(test::sphere_spec(), 4, 8, 0), ConfigError);
    EXPECT_THROW(scene_spec_from_json({{"kind", "teapot"}}), ConfigError);
    EXPECT_THROW(scene_spec_from_json({{"radius", 0.5}}), ConfigError);
}

TEST(Synthetic, SpecFromJson) {
    SceneSpec s = scene_spec_from_json({{"kind", "torus"}, {"major_radius", 0.5}, {"minor_radius", 0.1},
                                        {"scene_scale", 2.0}, {"albedo", {0.1, 0.2, 0.3}}});
    ASSERT_TRUE(std::holds_alternative<TorusShape>(s.shape));
    EXPECT_EQ(std::get<TorusShape>(s.shape).major_radius, 0.5);
    EXPECT_EQ(s.scene_scale, 2.0);
    EXPECT_EQ(s.albedo, Vec3(0.1, 0.2, 0.3));
    SyntheticRig rig = rig_for(s);
    EXPECT_DOUBLE_EQ(rig.distance, 8.0);
    EXPECT_EQ(rig.bounds.max, Vec3::Constant(3.0));
}

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "vaxnerf/camera.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/parallel.hpp"
#include "vaxnerf/rng.hpp"
#include "vaxnerf/scene_io.hpp"

namespace vaxnerf {

struct SphereShape {
    Vec3 center = Vec3::Zero();
    double radius = 0.5;
};

/// Ring around an axis parallel to +z through `center`.
struct TorusShape {
    Vec3 center = Vec3::Zero();
    double major_radius = 0.45;
    double minor_radius = 0.15;
};

/// Union of two spheres; the waist between them is a dent a visual hull cannot carve.
struct TwoLobeShape {
    Vec3 center_a{-0.35, 0.0, 0.0};
    Vec3 center_b{0.35, 0.0, 0.0};
    double radius_a = 0.3;
    double radius_b = 0.3;
};

/// Capsule around the segment [a, b].
struct RodShape {
    Vec3 a{-0.6, 0.0, 0.0};
    Vec3 b{0.6, 0.0, 0.0};
    double radius = 0.02;
};

using Shape = std::variant<SphereShape, TorusShape, TwoLobeShape, RodShape>;

/// Declarative description of an analytic test scene and its camera rig.
struct SceneSpec {
    Shape shape = SphereShape{};
    Vec3 albedo{0.8, 0.35, 0.2};
    double density = 40.0;  // sigma inside the shape
    Vec3 light_dir = Vec3(0.4, -0.3, 0.85).normalized();
    double ambient = 0.3;
    Vec3 background = Vec3::Ones();
    double scene_scale = 1.0;
    std::optional<double> camera_distance;    // default 4 * scene_scale
    std::optional<double> frame_half_width;   // default 0.75 * scene_scale, measured at the scene centre
    int quadrature_steps = 1024;
};

/// Ground truth for a synthetic scene: occupancy, density and radiance are
/// all derived from one exact signed distance function.
class SceneOracle {
public:
    SceneOracle() = default;
    explicit SceneOracle(SceneSpec spec) : spec_(std::move(spec)) {}

    const SceneSpec& spec() const { return spec_; }

    double sdf(const Vec3& p) const {
        return std::visit([&](const auto& s) { return shape_sdf(s, p); }, spec_.shape);
    }

    bool occupancy(const Vec3& p) const { return sdf(p) < 0.0; }

    double density(const Vec3& p) const { return occupancy(p) ? spec_.density : 0.0; }

    /// Lambertian shading under a directional light; independent of `dir`.
    Vec3 radiance(const Vec3& p, const Vec3& /*dir*/) const {
        Vec3 n = normal(p);
        double shade = spec_.ambient + (1.0 - spec_.ambient) * std::max(0.0, n.dot(spec_.light_dir));
        return spec_.albedo * shade;
    }

    Vec3 normal(const Vec3& p) const {
        constexpr double h = 1e-6;
        Vec3 g(sdf(p + Vec3(h, 0, 0)) - sdf(p - Vec3(h, 0, 0)), sdf(p + Vec3(0, h, 0)) - sdf(p - Vec3(0, h, 0)),
               sdf(p + Vec3(0, 0, h)) - sdf(p - Vec3(0, 0, h)));
        double len = g.norm();
        return len > 0.0 ? Vec3(g / len) : Vec3::UnitZ();
    }

    /// Whether the segment o + t d, t in [t0, t1], enters the shape. Sphere
    /// tracing on the exact distance function; grazing contacts closer than
    /// `eps` count as hits.
    bool intersects(const Vec3& o, const Vec3& d, double t0, double t1, double eps = 1e-9) const {
        double t = t0;
        for (int it = 0; it < 100000 && t <= t1; ++it) {
            double dist = sdf(o + t * d);
            if (dist < eps) return true;
            t += dist;
        }
        return false;
    }

    /// Composited colour of one ray by midpoint quadrature of the density.
    Vec3 render_ray(const Vec3& o, const Vec3& d, double near, double far, int steps) const {
        const double dt = (far - near) / steps;
        double log_trans = 0.0;
        Vec3 color = Vec3::Zero();
        for (int k = 0; k < steps; ++k) {
            Vec3 p = o + (near + (k + 0.5) * dt) * d;
            double sigma = density(p);
            if (sigma <= 0.0) continue;
            double tau = sigma * dt;
            double w = std::exp(log_trans) * -std::expm1(-tau);
            color += w * radiance(p, d);
            log_trans -= tau;
        }
        return color + std::exp(log_trans) * spec_.background;
    }

private:
    static double shape_sdf(const SphereShape& s, const Vec3& p) { return (p - s.center).norm() - s.radius; }
    static double shape_sdf(const TorusShape& s, const Vec3& p) {
        Vec3 q = p - s.center;
        double ring = std::hypot(q.x(), q.y()) - s.major_radius;
        return std::hypot(ring, q.z()) - s.minor_radius;
    }
    static double shape_sdf(const TwoLobeShape& s, const Vec3& p) {
        return std::min((p - s.center_a).norm() - s.radius_a, (p - s.center_b).norm() - s.radius_b);
    }
    static double shape_sdf(const RodShape& s, const Vec3& p) {
        Vec3 ab = s.b - s.a;
        double h = std::clamp((p - s.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        return (p - s.a - h * ab).norm() - s.radius;
    }

    SceneSpec spec_;
};

/// Camera rig and ray range used for a spec.
struct SyntheticRig {
    double distance;
    double camera_angle_x;
    double near;
    double far;
    Aabb bounds;
};

inline SyntheticRig rig_for(const SceneSpec& spec) {
    const double half = 1.5 * spec.scene_scale;
    const double dist = spec.camera_distance.value_or(4.0 * spec.scene_scale);
    const double frame = spec.frame_half_width.value_or(0.75 * spec.scene_scale);
    const double diag = std::sqrt(3.0) * half;
    if (!(dist > diag)) throw ConfigError("camera_distance must exceed the scene bounds half-diagonal");
    return {dist, 2.0 * std::atan(frame / dist), dist - diag, dist + diag,
            Aabb{Vec3::Constant(-half), Vec3::Constant(half)}};
}

/// Renders a dataset of `n_views` cameras placed at random on the upper
/// hemisphere, all aimed at the origin. Deterministic for a given seed.
inline std::pair<Dataset, SceneOracle> generate_synthetic_scene(const SceneSpec& spec, int n_views, int resolution,
                                                                 std::uint64_t seed,
                                                                 unsigned threads = default_threads(),
                                                                 const std::string& file_prefix = "./train/r_") {
    if (n_views < 2) throw ConfigError("synthetic scene needs at least 2 views");
    if (resolution < 16) throw ConfigError("synthetic scene resolution must be >= 16");
    if (spec.quadrature_steps < 1024) throw ConfigError("quadrature_steps must be >= 1024");
    SceneOracle oracle(spec);
    SyntheticRig rig = rig_for(spec);

    Dataset ds;
    ds.near = rig.near;
    ds.far = rig.far;
    ds.scene_bounds = rig.bounds;
    ds.background = spec.background;
    ds.camera_angle_x = rig.camera_angle_x;

    Rng rng(seed, {0x5ce7e});
    ds.views.resize(n_views);
    for (int i = 0; i < n_views; ++i) {
        double z = rng.uniform(0.1, 0.9);
        double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        double rxy = std::sqrt(1.0 - z * z);
        Vec3 eye = rig.distance * Vec3(rxy * std::cos(phi), rxy * std::sin(phi), z);
        auto& v = ds.views[i];
        v.pose.width = resolution;
        v.pose.height = resolution;
        v.pose.focal = 0.5 * resolution / std::tan(0.5 * rig.camera_angle_x);
        v.pose.principal_point = {0.5 * resolution, 0.5 * resolution};
        v.pose.cam_to_world = look_at(eye, Vec3::Zero());
        v.file_path = file_prefix + std::to_string(i);
    }

    parallel_for(ds.views.size(), threads, [&](std::size_t i) {
        auto& v = ds.views[i];
        v.image = Image(resolution, resolution, 3);
        v.mask = Mask(resolution, resolution);
        const Vec3 o = v.pose.origin();
        for (int r = 0; r < resolution; ++r) {
            for (int c = 0; c < resolution; ++c) {
                Vec3 d = v.pose.direction_through(c + 0.5, r + 0.5);
                v.mask.set(r, c, oracle.intersects(o, d, 0.0, ds.far));
                Vec3 col = oracle.render_ray(o, d, ds.near, ds.far, spec.quadrature_steps);
                for (int k = 0; k < 3; ++k) v.image.at(r, c, k) = static_cast<float>(col[k]);
            }
        }
    });
    return {std::move(ds), std::move(oracle)};
}

namespace detail {

inline Vec3 vec3_or(const nlohmann::json& j, const char* key, const Vec3& fallback) {
    if (!j.contains(key)) return fallback;
    return vec3_from_json(j.at(key), key);
}

}  // namespace detail

/// Parses the scene-spec JSON document (schema in docs/formats.md).
inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    SceneSpec s;
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "sphere") {
            SphereShape sh;
            sh.center = detail::vec3_or(j, "center", sh.center);
            sh.radius = j.value("radius", sh.radius);
            s.shape = sh;
        } else if (kind == "torus") {
            TorusShape sh;
            sh.center = detail::vec3_or(j, "center", sh.center);
            sh.major_radius = j.value("major_radius", sh.major_radius);
            sh.minor_radius = j.value("minor_radius", sh.minor_radius);
            s.shape = sh;
        } else if (kind == "two_lobe") {
            TwoLobeShape sh;
            sh.center_a = detail::vec3_or(j, "center_a", sh.center_a);
            sh.center_b = detail::vec3_or(j, "center_b", sh.center_b);
            sh.radius_a = j.value("radius_a", sh.radius_a);
            sh.radius_b = j.value("radius_b", sh.radius_b);
            s.shape = sh;
        } else if (kind == "rod") {
            RodShape sh;
            sh.a = detail::vec3_or(j, "a", sh.a);
            sh.b = detail::vec3_or(j, "b", sh.b);
            sh.radius = j.value("radius", sh.radius);
            s.shape = sh;
        } else {
            throw ConfigError("unknown scene kind '" + kind + "'");
        }
        s.albedo = detail::vec3_or(j, "albedo", s.albedo);
        s.density = j.value("density", s.density);
        if (j.contains("light_dir")) s.light_dir = detail::vec3_from_json(j["light_dir"], "light_dir").normalized();
        s.ambient = j.value("ambient", s.ambient);
        s.background = detail::vec3_or(j, "background", s.background);
        s.scene_scale = j.value("scene_scale", s.scene_scale);
        if (j.contains("camera_distance")) s.camera_distance = j["camera_distance"].get<double>();
        if (j.contains("frame_half_width")) s.frame_half_width = j["frame_half_width"].get<double>();
        s.quadrature_steps = j.value("quadrature_steps", s.quadrature_steps);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad scene spec: ") + e.what());
    } catch (const DatasetFormatError& e) {
        throw ConfigError(std::string("bad scene spec: ") + e.what());
    }
    if (!(s.density > 0.0)) throw ConfigError("scene density must be > 0");
    if (!(s.scene_scale > 0.0)) throw ConfigError("scene_scale must be > 0");
    return s;
}

}  // namespace vaxnerf

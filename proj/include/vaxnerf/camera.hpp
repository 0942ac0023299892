#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>

#include "vaxnerf/error.hpp"

namespace vaxnerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Axis-aligned box in world units.
struct Aabb {
    Vec3 min = Vec3::Constant(-1.5);
    Vec3 max = Vec3::Constant(1.5);

    Vec3 extent() const { return max - min; }
    Vec3 center() const { return 0.5 * (min + max); }
    bool valid() const { return (min.array() < max.array()).all(); }
    bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
    friend bool operator==(const Aabb& a, const Aabb& b) { return a.min == b.min && a.max == b.max; }
};

/// Pinhole camera. Camera space follows the OpenGL/Blender convention used by
/// NeRF-synthetic manifests: +x right, +y up, looking down -z. Pixel rows grow
/// downward.
struct CameraPose {
    int width = 1;
    int height = 1;
    double focal = 1.0;
    Eigen::Vector2d principal_point{0.5, 0.5};  // (cx, cy) in pixels
    Mat4 cam_to_world = Mat4::Identity();

    Mat3 rotation() const { return cam_to_world.topLeftCorner<3, 3>(); }
    Vec3 origin() const { return cam_to_world.topRightCorner<3, 1>(); }
    Vec3 forward() const { return -rotation().col(2); }

    /// Throws ValidationError when the intrinsics or the rigid transform are invalid.
    void validate(double tol = 1e-6) const {
        if (width < 1 || height < 1) throw ValidationError("camera width/height must be >= 1");
        if (!(focal > 0.0) || !std::isfinite(focal)) throw ValidationError("camera focal must be > 0");
        if (!cam_to_world.allFinite()) throw ValidationError("pose matrix has non-finite entries");
        if (std::abs(cam_to_world.determinant()) < 1e-12) throw ValidationError("pose matrix is not invertible");
        Eigen::RowVector4d last = cam_to_world.row(3);
        if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tol)
            throw ValidationError("pose matrix last row must be (0, 0, 0, 1)");
        Mat3 r = rotation();
        if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
            throw ValidationError("pose rotation is not orthonormal");
        if (std::abs(r.determinant() - 1.0) > tol) throw ValidationError("pose rotation determinant is not +1");
    }

    /// Unit world-space direction of the ray through image position (u, v),
    /// where u is the column coordinate and v the row coordinate in pixels.
    Vec3 direction_through(double u, double v) const {
        Vec3 d_cam((u - principal_point.x()) / focal, -(v - principal_point.y()) / focal, -1.0);
        return (rotation() * d_cam).normalized();
    }

    /// Projects a world point to continuous pixel coordinates (u, v).
    /// Points on or behind the image plane's origin return nullopt.
    std::optional<Eigen::Vector2d> project(const Vec3& p) const {
        Vec3 pc = rotation().transpose() * (p - origin());
        double depth = -pc.z();
        if (!(depth > 0.0)) return std::nullopt;
        return Eigen::Vector2d(principal_point.x() + focal * pc.x() / depth,
                               principal_point.y() - focal * pc.y() / depth);
    }
};

/// Camera-to-world transform for a camera at `eye` looking at `target`.
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& world_up = Vec3::UnitZ()) {
    Vec3 back = (eye - target).normalized();
    Vec3 up_hint = std::abs(back.dot(world_up)) > 0.999 ? Vec3::UnitY() : world_up;
    Vec3 right = up_hint.cross(back).normalized();
    Vec3 up = back.cross(right);
    Mat4 m = Mat4::Identity();
    m.block<3, 1>(0, 0) = right;
    m.block<3, 1>(0, 1) = up;
    m.block<3, 1>(0, 2) = back;
    m.block<3, 1>(0, 3) = eye;
    return m;
}

}  // namespace vaxnerf

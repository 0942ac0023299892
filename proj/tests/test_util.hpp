#pragma once

#include <gtest/gtest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include "vaxnerf.hpp"

namespace vaxnerf::test {

/// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("vaxnerf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline VoxelGrid full_grid(const Aabb& bounds, std::uint32_t n = 8) { return VoxelGrid({n, n, n}, bounds, true); }

/// Bounds that contain every ray segment of a dataset, so a full grid keeps everything.
inline Aabb enclosing_bounds(const Dataset& ds) {
    Aabb b{Vec3::Constant(1e300), Vec3::Constant(-1e300)};
    for (const auto& v : ds.views) {
        const Vec3 o = v.pose.origin();
        b.min = b.min.cwiseMin(o - Vec3::Constant(ds.far + 1.0));
        b.max = b.max.cwiseMax(o + Vec3::Constant(ds.far + 1.0));
    }
    return b;
}

inline MlpConfig tiny_mlp(int depth = 2, int width = 16) {
    MlpConfig c;
    c.depth = depth;
    c.width = width;
    c.color_width = width;
    c.pos_levels = 3;
    c.dir_levels = 2;
    return c;
}

inline SceneSpec sphere_spec(double radius = 0.5) {
    SceneSpec s;
    s.shape = SphereShape{Vec3::Zero(), radius};
    return s;
}

}  // namespace vaxnerf::test

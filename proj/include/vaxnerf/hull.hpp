#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "vaxnerf/camera.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/parallel.hpp"
#include "vaxnerf/scene_io.hpp"

namespace vaxnerf {

/// Axis-aligned binary occupancy grid. Bit (i, j, k) lives at linear index
/// i + nx * (j + ny * k), x fastest.
class VoxelGrid {
public:
    VoxelGrid() = default;

    VoxelGrid(std::array<std::uint32_t, 3> resolution, const Aabb& bounds, bool fill) : res_(resolution), bounds_(bounds) {
        if (res_[0] == 0 || res_[1] == 0 || res_[2] == 0) throw ValidationError("grid resolution must be >= 1");
        if (!bounds.valid()) throw ValidationError("grid bounds min must be < max componentwise");
        bits_.assign((size() + 63) / 64, fill ? ~0ULL : 0ULL);
        trim();
    }

    const std::array<std::uint32_t, 3>& resolution() const { return res_; }
    const Aabb& bounds() const { return bounds_; }
    std::size_t size() const { return std::size_t(res_[0]) * res_[1] * res_[2]; }
    Vec3 cell_size() const {
        return bounds_.extent().cwiseQuotient(Vec3(res_[0], res_[1], res_[2]));
    }

    std::size_t index(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
        return i + std::size_t(res_[0]) * (j + std::size_t(res_[1]) * k);
    }
    bool get(std::size_t idx) const { return (bits_[idx >> 6] >> (idx & 63)) & 1ULL; }
    bool get(std::uint32_t i, std::uint32_t j, std::uint32_t k) const { return get(index(i, j, k)); }
    void set(std::size_t idx, bool v) {
        if (v) bits_[idx >> 6] |= 1ULL << (idx & 63);
        else bits_[idx >> 6] &= ~(1ULL << (idx & 63));
    }
    void set(std::uint32_t i, std::uint32_t j, std::uint32_t k, bool v) { set(index(i, j, k), v); }

    Vec3 cell_center(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
        return bounds_.min + cell_size().cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5));
    }

    /// Membership of a world point. Outside the bounds is never occupied; a
    /// point on a max face belongs to the last cell along that axis.
    bool contains(const Vec3& p) const {
        std::size_t idx = 0, stride = 1;
        for (int a = 0; a < 3; ++a) {
            double lo = bounds_.min[a], hi = bounds_.max[a];
            if (!(p[a] >= lo && p[a] <= hi)) return false;
            auto cell = static_cast<std::int64_t>(std::floor((p[a] - lo) / ((hi - lo) / res_[a])));
            cell = std::clamp<std::int64_t>(cell, 0, res_[a] - 1);
            idx += static_cast<std::size_t>(cell) * stride;
            stride *= res_[a];
        }
        return get(idx);
    }

    std::size_t occupied_count() const {
        std::size_t n = 0;
        for (auto w : bits_) n += static_cast<std::size_t>(std::popcount(w));
        return n;
    }

    const std::vector<std::uint64_t>& words() const { return bits_; }

    friend bool operator==(const VoxelGrid& a, const VoxelGrid& b) {
        return a.res_ == b.res_ && a.bounds_ == b.bounds_ && a.bits_ == b.bits_;
    }

private:
    void trim() {
        if (size() % 64 != 0 && !bits_.empty()) bits_.back() &= (1ULL << (size() % 64)) - 1;
    }

    std::array<std::uint32_t, 3> res_{0, 0, 0};
    Aabb bounds_;
    std::vector<std::uint64_t> bits_;
};

inline double occupancy_fraction(const VoxelGrid& grid) {
    return grid.size() == 0 ? 0.0 : static_cast<double>(grid.occupied_count()) / static_cast<double>(grid.size());
}

inline bool contains(const VoxelGrid& grid, const Vec3& p) { return grid.contains(p); }

struct CarveOptions {
    unsigned threads = default_threads();
    bool warn_empty_masks = true;
};

/// Visual hull by silhouette carving. A voxel is removed when, in some view,
/// its centre and all 8 corners project inside the image onto background
/// pixels. Voxels no view can see stay occupied.
inline VoxelGrid carve(const Dataset& dataset, std::array<std::uint32_t, 3> resolution, const CarveOptions& opts = {}) {
    if (dataset.views.empty()) throw ConfigError("carve needs at least one view");
    for (auto r : resolution)
        if (r < 2) throw ConfigError("carve resolution must be >= 2 per axis");
    VoxelGrid grid(resolution, dataset.scene_bounds, true);
    const auto [nx, ny, nz] = resolution;
    const Vec3 cell = grid.cell_size();
    const Vec3 lo = dataset.scene_bounds.min;

    // Per view, pixel status of every lattice vertex: 0 background, 1 other.
    const std::size_t vx = nx + 1, vy = ny + 1, vz = nz + 1;
    std::vector<std::uint8_t> carved(grid.size(), 0);

    for (const auto& view : dataset.views) {
        const Mask& mask = view.mask;
        if (mask.width != view.pose.width || mask.height != view.pose.height)
            throw ValidationError("carve: mask size does not match camera");
        if (opts.warn_empty_masks && mask.count() == 0)
            std::cerr << "warning: view " << view.file_path << " has an all-background mask\n";

        const Mat3 rt = view.pose.rotation().transpose();
        const Vec3 origin = view.pose.origin();
        auto is_background = [&](const Vec3& p) {
            Vec3 pc = rt * (p - origin);
            double depth = -pc.z();
            if (!(depth > 0.0)) return false;
            double u = view.pose.principal_point.x() + view.pose.focal * pc.x() / depth;
            double v = view.pose.principal_point.y() - view.pose.focal * pc.y() / depth;
            if (!(u >= 0.0 && v >= 0.0 && u < mask.width && v < mask.height)) return false;
            return !mask.at(static_cast<int>(v), static_cast<int>(u));
        };

        std::vector<std::uint8_t> vertex_bg(vx * vy * vz);
        parallel_for(vz, opts.threads, [&](std::size_t k) {
            for (std::size_t j = 0; j < vy; ++j)
                for (std::size_t i = 0; i < vx; ++i)
                    vertex_bg[i + vx * (j + vy * k)] =
                        is_background(lo + cell.cwiseProduct(Vec3(double(i), double(j), double(k)))) ? 1 : 0;
        });

        parallel_for(nz, opts.threads, [&](std::size_t k) {
            for (std::size_t j = 0; j < ny; ++j) {
                for (std::size_t i = 0; i < nx; ++i) {
                    std::size_t idx = i + nx * (j + ny * k);
                    if (carved[idx]) continue;
                    bool all_bg = true;
                    for (int c = 0; c < 8 && all_bg; ++c) {
                        std::size_t ci = i + (c & 1), cj = j + ((c >> 1) & 1), ck = k + ((c >> 2) & 1);
                        all_bg = vertex_bg[ci + vx * (cj + vy * ck)] != 0;
                    }
                    if (all_bg && is_background(lo + cell.cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5))))
                        carved[idx] = 1;
                }
            }
        });
    }
    for (std::size_t idx = 0; idx < grid.size(); ++idx)
        if (carved[idx]) grid.set(idx, false);
    return grid;
}

/// Chebyshev-radius max-pool of the occupancy (separable box max filter).
inline VoxelGrid dilate(const VoxelGrid& grid, std::uint32_t radius_cells) {
    if (radius_cells == 0) return grid;
    const auto res = grid.resolution();
    std::vector<std::uint8_t> cur(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) cur[i] = grid.get(i) ? 1 : 0;
    std::vector<std::uint8_t> next(grid.size());
    const std::int64_t r = radius_cells;
    for (int axis = 0; axis < 3; ++axis) {
        const std::int64_t n = res[axis];
        const std::size_t stride = axis == 0 ? 1 : axis == 1 ? res[0] : std::size_t(res[0]) * res[1];
        const std::size_t lines = grid.size() / n;
        for (std::size_t line = 0; line < lines; ++line) {
            // Base index of this line: decompose `line` over the two other axes.
            std::size_t base;
            if (axis == 0) base = line * res[0];
            else if (axis == 1) base = (line % res[0]) + (line / res[0]) * std::size_t(res[0]) * res[1];
            else base = line;
            // Running count of occupied cells inside the window [x - r, x + r].
            std::int64_t count = 0;
            for (std::int64_t x = 0; x < std::min(r, n); ++x) count += cur[base + x * stride];
            for (std::int64_t x = 0; x < n; ++x) {
                if (x + r < n) count += cur[base + (x + r) * stride];
                if (x - r - 1 >= 0) count -= cur[base + (x - r - 1) * stride];
                next[base + x * stride] = count > 0 ? 1 : 0;
            }
        }
        std::swap(cur, next);
    }
    VoxelGrid out(res, grid.bounds(), false);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (cur[i]) out.set(i, true);
    return out;
}

/// Cells per ray-sample spacing: ceil(grid / samples) when the ray is
/// sampled more coarsely than the grid, else 0.
inline std::uint32_t dilation_radius(std::uint32_t grid_resolution, std::uint32_t n_samples_per_ray) {
    if (grid_resolution < 1 || n_samples_per_ray < 1) throw ValidationError("dilation_radius arguments must be >= 1");
    if (n_samples_per_ray >= grid_resolution) return 0;
    return (grid_resolution + n_samples_per_ray - 1) / n_samples_per_ray;
}

inline constexpr char kGridMagic[8] = {'V', 'A', 'X', 'G', 'R', 'I', 'D', '1'};
inline constexpr std::size_t kGridHeaderBytes = 8 + 3 * 4 + 6 * 8;

namespace detail {

template <class T>
void put_le(std::vector<char>& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T get_le(const char* p) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline std::vector<char> encode_grid(const VoxelGrid& grid) {
    std::vector<char> out(kGridMagic, kGridMagic + 8);
    for (auto r : grid.resolution()) detail::put_le<std::uint32_t>(out, r);
    for (int a = 0; a < 3; ++a) detail::put_le<double>(out, grid.bounds().min[a]);
    for (int a = 0; a < 3; ++a) detail::put_le<double>(out, grid.bounds().max[a]);
    const std::size_t nbytes = (grid.size() + 7) / 8;
    for (std::size_t b = 0; b < nbytes; ++b) {
        auto word = grid.words()[b / 8];
        out.push_back(static_cast<char>((word >> (8 * (b % 8))) & 0xff));
    }
    return out;
}

inline VoxelGrid decode_grid(const std::vector<char>& buf) {
    if (buf.size() < kGridHeaderBytes || std::memcmp(buf.data(), kGridMagic, 8) != 0)
        throw FormatError("not a VAXGRID1 file");
    std::array<std::uint32_t, 3> res;
    for (int a = 0; a < 3; ++a) res[a] = detail::get_le<std::uint32_t>(buf.data() + 8 + 4 * a);
    Aabb b;
    for (int a = 0; a < 3; ++a) b.min[a] = detail::get_le<double>(buf.data() + 20 + 8 * a);
    for (int a = 0; a < 3; ++a) b.max[a] = detail::get_le<double>(buf.data() + 44 + 8 * a);
    if (res[0] == 0 || res[1] == 0 || res[2] == 0 || !b.valid()) throw FormatError("grid header is invalid");
    const std::size_t cells = std::size_t(res[0]) * res[1] * res[2];
    if (buf.size() != kGridHeaderBytes + (cells + 7) / 8) throw FormatError("grid payload is truncated or oversized");
    VoxelGrid grid(res, b, false);
    for (std::size_t idx = 0; idx < cells; ++idx) {
        auto byte = static_cast<unsigned char>(buf[kGridHeaderBytes + idx / 8]);
        if ((byte >> (idx % 8)) & 1) grid.set(idx, true);
    }
    return grid;
}

inline void save_grid(const VoxelGrid& grid, const std::filesystem::path& path) {
    auto bytes = encode_grid(grid);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline VoxelGrid load_grid(const std::filesystem::path& path) { return decode_grid(detail::read_file(path)); }

}  // namespace vaxnerf

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "vaxnerf/camera.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/image.hpp"

namespace vaxnerf {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

struct ViewRecord {
    Image image;  // 3 channels, composited over the dataset background
    Mask mask;
    CameraPose pose;
    std::string file_path;  // manifest-relative, as written in the manifest
};

struct Dataset {
    std::vector<ViewRecord> views;
    double near = 2.0;
    double far = 6.0;
    Aabb scene_bounds;
    Vec3 background = Vec3::Ones();
    double camera_angle_x = 0.0;

    void validate() const {
        if (!(near > 0.0 && near < far)) throw ValidationError("dataset requires 0 < near < far");
        if (!scene_bounds.valid()) throw ValidationError("scene_bounds min must be < max componentwise");
        for (const auto& v : views) {
            v.pose.validate();
            if (v.image.width != v.pose.width || v.image.height != v.pose.height || v.image.channels != 3)
                throw ValidationError("view image does not match pose dimensions");
            if (v.mask.width != v.pose.width || v.mask.height != v.pose.height)
                throw ValidationError("view mask does not match pose dimensions");
        }
    }

    std::size_t pixel_count() const {
        std::size_t n = 0;
        for (const auto& v : views) n += v.image.pixel_count();
        return n;
    }
};

struct MaskPolicy {
    enum class Kind { alpha, luminance };
    Kind kind = Kind::alpha;
    double threshold = 0.99;  // luminance only: min(rgb) below this is foreground

    static MaskPolicy alpha() { return {Kind::alpha, 0.99}; }
    static MaskPolicy luminance(double threshold = 0.99) { return {Kind::luminance, threshold}; }
};

/// Binary foreground mask from an RGBA (or RGB, luminance only) image.
inline Mask extract_mask(const Image& image, const MaskPolicy& policy) {
    if (policy.kind == MaskPolicy::Kind::luminance && !(policy.threshold > 0.0 && policy.threshold <= 1.0))
        throw ConfigError("luminance threshold must lie in (0, 1]");
    if (policy.kind == MaskPolicy::Kind::alpha && image.channels != 4)
        throw ValidationError("alpha mask policy requires an RGBA image");
    if (image.channels < 3) throw ValidationError("mask extraction requires at least 3 channels");
    Mask mask(image.width, image.height);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            bool fg;
            if (policy.kind == MaskPolicy::Kind::alpha) {
                fg = image.at(r, c, 3) > 0.0f;
            } else {
                float m = std::min({image.at(r, c, 0), image.at(r, c, 1), image.at(r, c, 2)});
                fg = m < policy.threshold;
            }
            mask.set(r, c, fg);
        }
    }
    return mask;
}

struct LoadOptions {
    double scene_scale = 1.0;     // default bounds are [-1.5, 1.5]^3 * scene_scale
    bool force_luminance = false;  // ignore alpha even when present
    double luminance_threshold = 0.99;
};

namespace detail {

inline nlohmann::json matrix_to_json(const Mat4& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    return rows;
}

inline Mat4 matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw DatasetFormatError("transform_matrix must be 4x4");
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
        if (!j[r].is_array() || j[r].size() != 4) throw DatasetFormatError("transform_matrix must be 4x4");
        for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

inline Vec3 vec3_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw DatasetFormatError(std::string(what) + " must be a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline std::filesystem::path resolve_image(const std::filesystem::path& root, const std::string& file_path) {
    std::filesystem::path p = root / file_path;
    if (!p.has_extension()) p += ".png";
    return p.lexically_normal();
}

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& root, Split split) {
    return root / (std::string("transforms_") + to_string(split) + ".json");
}

/// Parses a manifest without loading images. Each returned view has its pose
/// and file_path set; image/mask are empty. Used by load_dataset and by
/// commands that only need camera poses.
inline Dataset read_manifest(const std::filesystem::path& manifest_file, const LoadOptions& opts = {}) {
    std::ifstream in(manifest_file);
    if (!in) throw DatasetFormatError("missing manifest " + manifest_file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetFormatError("malformed manifest " + manifest_file.string() + ": " + e.what());
    }
    Dataset ds;
    try {
        if (!j.contains("camera_angle_x") || !j.contains("frames"))
            throw DatasetFormatError("manifest needs camera_angle_x and frames");
        ds.camera_angle_x = j.at("camera_angle_x").get<double>();
        ds.near = j.value("near", 2.0);
        ds.far = j.value("far", 6.0);
        ds.scene_bounds = Aabb{Vec3::Constant(-1.5 * opts.scene_scale), Vec3::Constant(1.5 * opts.scene_scale)};
        if (j.contains("scene_bounds")) {
            ds.scene_bounds.min = detail::vec3_from_json(j["scene_bounds"].at("min"), "scene_bounds.min");
            ds.scene_bounds.max = detail::vec3_from_json(j["scene_bounds"].at("max"), "scene_bounds.max");
        }
        if (j.contains("background")) ds.background = detail::vec3_from_json(j["background"], "background");
        for (const auto& f : j.at("frames")) {
            ViewRecord v;
            v.file_path = f.at("file_path").get<std::string>();
            v.pose.cam_to_world = detail::matrix_from_json(f.at("transform_matrix"));
            if (f.contains("w")) v.pose.width = f["w"].get<int>();
            else if (j.contains("w")) v.pose.width = j["w"].get<int>();
            else v.pose.width = 0;
            if (f.contains("h")) v.pose.height = f["h"].get<int>();
            else if (j.contains("h")) v.pose.height = j["h"].get<int>();
            else v.pose.height = 0;
            ds.views.push_back(std::move(v));
        }
        if (j.contains("cx") && j.contains("cy")) {
            for (auto& v : ds.views) v.pose.principal_point = {j["cx"].get<double>(), j["cy"].get<double>()};
        } else {
            for (auto& v : ds.views) v.pose.principal_point = {-1.0, -1.0};  // centre, filled in once sizes are known
        }
    } catch (const nlohmann::json::exception& e) {
        throw DatasetFormatError("malformed manifest " + manifest_file.string() + ": " + e.what());
    }
    return ds;
}

/// Fills focal and default principal point once the image width is known.
inline void finalize_intrinsics(Dataset& ds) {
    for (auto& v : ds.views) {
        v.pose.focal = 0.5 * v.pose.width / std::tan(0.5 * ds.camera_angle_x);
        if (v.pose.principal_point.x() < 0.0) v.pose.principal_point = {0.5 * v.pose.width, 0.5 * v.pose.height};
    }
}

/// Loads one split of a NeRF-synthetic style dataset rooted at `root`.
inline Dataset load_dataset(const std::filesystem::path& root, Split split, const LoadOptions& opts = {}) {
    Dataset ds = read_manifest(manifest_path(root, split), opts);
    for (auto& v : ds.views) {
        auto file = detail::resolve_image(root, v.file_path);
        if (!std::filesystem::exists(file)) throw DatasetFormatError("missing image " + file.string());
        Image raw = read_png(file);
        if ((v.pose.width != 0 && raw.width != v.pose.width) || (v.pose.height != 0 && raw.height != v.pose.height))
            throw ValidationError("image " + file.string() + " size does not match manifest");
        v.pose.width = raw.width;
        v.pose.height = raw.height;
        bool use_alpha = raw.channels == 4 && !opts.force_luminance;
        v.mask = extract_mask(raw, use_alpha ? MaskPolicy::alpha() : MaskPolicy::luminance(opts.luminance_threshold));
        v.image = Image(raw.width, raw.height, 3);
        for (int r = 0; r < raw.height; ++r) {
            for (int c = 0; c < raw.width; ++c) {
                float a = raw.channels == 4 ? raw.at(r, c, 3) : 1.0f;
                for (int k = 0; k < 3; ++k)
                    v.image.at(r, c, k) = raw.at(r, c, k) * a + static_cast<float>(ds.background[k]) * (1.0f - a);
            }
        }
    }
    finalize_intrinsics(ds);
    ds.validate();
    return ds;
}

/// Serialises the manifest for `ds` (poses at full double precision).
inline nlohmann::json manifest_json(const Dataset& ds) {
    nlohmann::json j;
    j["camera_angle_x"] = ds.camera_angle_x;
    j["near"] = ds.near;
    j["far"] = ds.far;
    j["scene_bounds"] = {{"min", {ds.scene_bounds.min.x(), ds.scene_bounds.min.y(), ds.scene_bounds.min.z()}},
                         {"max", {ds.scene_bounds.max.x(), ds.scene_bounds.max.y(), ds.scene_bounds.max.z()}}};
    j["background"] = {ds.background.x(), ds.background.y(), ds.background.z()};
    if (!ds.views.empty()) {
        j["w"] = ds.views.front().pose.width;
        j["h"] = ds.views.front().pose.height;
        j["cx"] = ds.views.front().pose.principal_point.x();
        j["cy"] = ds.views.front().pose.principal_point.y();
    }
    j["frames"] = nlohmann::json::array();
    for (const auto& v : ds.views)
        j["frames"].push_back({{"file_path", v.file_path}, {"transform_matrix", detail::matrix_to_json(v.pose.cam_to_world)}});
    return j;
}

/// Writes `ds` as split `split` under `root`: the manifest plus one 16-bit
/// RGBA PNG per view whose alpha channel is the mask.
inline void save_dataset(const std::filesystem::path& root, Split split, const Dataset& ds) {
    std::filesystem::create_directories(root);
    for (const auto& v : ds.views) {
        auto file = detail::resolve_image(root, v.file_path);
        std::filesystem::create_directories(file.parent_path());
        Image rgba(v.image.width, v.image.height, 4);
        for (int r = 0; r < v.image.height; ++r) {
            for (int c = 0; c < v.image.width; ++c) {
                for (int k = 0; k < 3; ++k) rgba.at(r, c, k) = v.image.at(r, c, k);
                rgba.at(r, c, 3) = v.mask.at(r, c) ? 1.0f : 0.0f;
            }
        }
        write_png(file, rgba, 16);
    }
    std::ofstream out(manifest_path(root, split));
    if (!out) throw DatasetFormatError("cannot write manifest under " + root.string());
    out << manifest_json(ds).dump(2) << '\n';
}

}  // namespace vaxnerf

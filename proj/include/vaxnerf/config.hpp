#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/training.hpp"

namespace vaxnerf {

using Json = nlohmann::json;

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
}

/// Applies a `dotted.key=value` override. The value is read as JSON when it
/// parses as JSON and as a plain string otherwise.
inline void apply_override(Json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    Json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("empty component in override key: " + key);
        if (node->is_null()) *node = Json::object();
        if (!node->is_object()) throw ConfigError("override key descends into a non-object: " + key);
        if (dot == std::string::npos) {
            (*node)[part] = std::move(value);
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

namespace detail {

inline void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read_key(const Json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

}  // namespace detail

inline MlpConfig mlp_config_from_json(const Json& j) {
    detail::reject_unknown(j, {"depth", "width", "color_width", "pos_levels", "dir_levels", "include_input",
                               "density_activation", "density_shift"},
                           "mlp");
    MlpConfig c;
    detail::read_key(j, "depth", c.depth);
    detail::read_key(j, "width", c.width);
    detail::read_key(j, "color_width", c.color_width);
    detail::read_key(j, "pos_levels", c.pos_levels);
    detail::read_key(j, "dir_levels", c.dir_levels);
    detail::read_key(j, "include_input", c.include_input);
    detail::read_key(j, "density_shift", c.density_shift);
    if (j.contains("density_activation")) {
        std::string a;
        detail::read_key(j, "density_activation", a);
        if (a == "softplus") c.density_activation = DensityActivation::softplus;
        else if (a == "relu") c.density_activation = DensityActivation::relu;
        else throw ConfigError("density_activation must be softplus or relu");
    }
    c.validate();
    return c;
}

inline Json mlp_config_to_json(const MlpConfig& c) {
    return {{"depth", c.depth},
            {"width", c.width},
            {"color_width", c.color_width},
            {"pos_levels", c.pos_levels},
            {"dir_levels", c.dir_levels},
            {"include_input", c.include_input},
            {"density_activation", c.density_activation == DensityActivation::relu ? "relu" : "softplus"},
            {"density_shift", c.density_shift}};
}

/// Training configuration; absent keys keep their defaults, unknown keys are errors.
inline TrainConfig train_config_from_json(const Json& j) {
    detail::reject_unknown(j, {"mode", "n_coarse", "n_fine", "batch_rays", "iterations", "lr_init", "lr_final", "grid",
                               "capacity_safety", "probe_iters", "seed", "log_every", "checkpoint_every",
                               "checkpoint_dir", "mlp", "density_noise_std", "shard_rays", "threads", "val_views",
                               "val_stride", "validate_at_log"},
                           "training config");
    TrainConfig c;
    if (j.contains("mode")) {
        std::string m;
        detail::read_key(j, "mode", m);
        c.mode = parse_mode(m);
    }
    detail::read_key(j, "n_coarse", c.n_coarse);
    detail::read_key(j, "n_fine", c.n_fine);
    detail::read_key(j, "batch_rays", c.batch_rays);
    detail::read_key(j, "iterations", c.iterations);
    detail::read_key(j, "lr_init", c.lr_init);
    detail::read_key(j, "lr_final", c.lr_final);
    detail::read_key(j, "capacity_safety", c.capacity_safety);
    detail::read_key(j, "probe_iters", c.probe_iters);
    detail::read_key(j, "seed", c.seed);
    detail::read_key(j, "log_every", c.log_every);
    detail::read_key(j, "checkpoint_every", c.checkpoint_every);
    detail::read_key(j, "density_noise_std", c.density_noise_std);
    detail::read_key(j, "shard_rays", c.shard_rays);
    detail::read_key(j, "threads", c.threads);
    detail::read_key(j, "val_views", c.val_views);
    detail::read_key(j, "val_stride", c.val_stride);
    detail::read_key(j, "validate_at_log", c.validate_at_log);
    if (j.contains("grid") && !j["grid"].is_null()) c.grid_path = j["grid"].get<std::string>();
    if (j.contains("checkpoint_dir") && !j["checkpoint_dir"].is_null())
        c.checkpoint_dir = j["checkpoint_dir"].get<std::string>();
    if (j.contains("mlp")) c.mlp = mlp_config_from_json(j["mlp"]);
    if (c.threads == 0) c.threads = default_threads();
    c.validate();
    return c;
}

inline Json train_config_to_json(const TrainConfig& c) {
    Json j = {{"mode", to_string(c.mode)},
              {"n_coarse", c.n_coarse},
              {"n_fine", c.n_fine},
              {"batch_rays", c.batch_rays},
              {"iterations", c.iterations},
              {"lr_init", c.lr_init},
              {"lr_final", c.lr_final},
              {"capacity_safety", c.capacity_safety},
              {"probe_iters", c.probe_iters},
              {"seed", c.seed},
              {"log_every", c.log_every},
              {"checkpoint_every", c.checkpoint_every},
              {"density_noise_std", c.density_noise_std},
              {"shard_rays", c.shard_rays},
              {"threads", c.threads},
              {"val_views", c.val_views},
              {"val_stride", c.val_stride},
              {"validate_at_log", c.validate_at_log},
              {"mlp", mlp_config_to_json(c.mlp)}};
    j["grid"] = c.grid_path ? Json(c.grid_path->string()) : Json(nullptr);
    j["checkpoint_dir"] = c.checkpoint_dir ? Json(c.checkpoint_dir->string()) : Json(nullptr);
    return j;
}

}  // namespace vaxnerf

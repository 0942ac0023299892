#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include "vaxnerf/adam.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/hull.hpp"
#include "vaxnerf/model.hpp"

namespace vaxnerf {

inline constexpr char kCheckpointMagic[8] = {'V', 'A', 'X', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Optimizer-side state needed to continue training exactly. The random
/// stream of step i is derived from (seed, i), so `iteration` is also the
/// rng cursor.
struct TrainingState {
    std::uint64_t iteration = 0;
    std::uint64_t seed = 0;
    std::vector<AdamState<float>> adam;  // one per network
    SampleCapacity capacity;
    std::uint32_t recalibrations = 0;
    double wall_seconds = 0.0;
    std::uint64_t cumulative_points = 0;

    friend bool operator==(const TrainingState& a, const TrainingState& b) {
        return a.iteration == b.iteration && a.seed == b.seed && a.adam == b.adam &&
               a.capacity.coarse == b.capacity.coarse && a.capacity.fine == b.capacity.fine &&
               a.recalibrations == b.recalibrations && a.cumulative_points == b.cumulative_points;
    }
};

struct Checkpoint {
    NerfModel<float> model;
    std::optional<TrainingState> state;
};

namespace detail {

class ByteReader {
public:
    explicit ByteReader(const std::vector<char>& buf) : buf_(buf) {}
    template <class T>
    T get() {
        if (pos_ + sizeof(T) > buf_.size()) throw FormatError("checkpoint is truncated");
        T v = get_le<T>(buf_.data() + pos_);
        pos_ += sizeof(T);
        return v;
    }
    void floats(std::vector<float>& out, std::size_t n) {
        out.resize(n);
        for (auto& f : out) f = get<float>();
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    const std::vector<char>& buf_;
    std::size_t pos_ = 8;
};

}  // namespace detail

/// Binary layout (all little-endian), see docs/formats.md:
///   "VAXCKPT1", u32 version, u32 mode, u32 n_coarse, u32 n_fine,
///   u32 depth, width, color_width, pos_levels, dir_levels, include_input,
///   density_activation, f64 density_shift, u32 network count,
///   per network: u64 n, n x f32 parameters (declaration order),
///   u32 has_state, then optionally: u64 iteration, u64 seed,
///   u64 coarse capacity, u64 fine capacity, u32 recalibrations,
///   f64 wall seconds, u64 cumulative points, per network: u64 adam step,
///   n x f32 first moment, n x f32 second moment.
inline std::vector<char> encode_checkpoint(const NerfModel<float>& model, const TrainingState* state) {
    using detail::put_le;
    std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 8);
    const MlpConfig& cfg = model.nets.at(0).config();
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.mode));
    put_le<std::uint32_t>(out, model.n_coarse);
    put_le<std::uint32_t>(out, model.n_fine);
    for (int v : {cfg.depth, cfg.width, cfg.color_width, cfg.pos_levels, cfg.dir_levels, cfg.include_input ? 1 : 0})
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.density_activation));
    put_le<double>(out, cfg.density_shift);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.nets.size()));
    for (const auto& net : model.nets) {
        put_le<std::uint64_t>(out, net.size());
        for (float v : net.values()) put_le<float>(out, v);
    }
    put_le<std::uint32_t>(out, state ? 1 : 0);
    if (state) {
        put_le<std::uint64_t>(out, state->iteration);
        put_le<std::uint64_t>(out, state->seed);
        put_le<std::uint64_t>(out, state->capacity.coarse);
        put_le<std::uint64_t>(out, state->capacity.fine);
        put_le<std::uint32_t>(out, state->recalibrations);
        put_le<double>(out, state->wall_seconds);
        put_le<std::uint64_t>(out, state->cumulative_points);
        if (state->adam.size() != model.nets.size()) throw ValidationError("one optimizer state per network expected");
        for (const auto& a : state->adam) {
            put_le<std::uint64_t>(out, a.step);
            for (float v : a.m) put_le<float>(out, v);
            for (float v : a.v) put_le<float>(out, v);
        }
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& buf) {
    if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) throw FormatError("not a VAXCKPT1 checkpoint");
    detail::ByteReader in(buf);
    if (in.get<std::uint32_t>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    Checkpoint ck;
    auto mode = in.get<std::uint32_t>();
    if (mode > 2) throw FormatError("checkpoint has an unknown training mode");
    ck.model.mode = static_cast<TrainMode>(mode);
    ck.model.n_coarse = in.get<std::uint32_t>();
    ck.model.n_fine = in.get<std::uint32_t>();
    MlpConfig cfg;
    cfg.depth = static_cast<int>(in.get<std::uint32_t>());
    cfg.width = static_cast<int>(in.get<std::uint32_t>());
    cfg.color_width = static_cast<int>(in.get<std::uint32_t>());
    cfg.pos_levels = static_cast<int>(in.get<std::uint32_t>());
    cfg.dir_levels = static_cast<int>(in.get<std::uint32_t>());
    cfg.include_input = in.get<std::uint32_t>() != 0;
    auto act = in.get<std::uint32_t>();
    if (act > 1) throw FormatError("checkpoint has an unknown density activation");
    cfg.density_activation = static_cast<DensityActivation>(act);
    cfg.density_shift = in.get<double>();
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint architecture is invalid: ") + e.what());
    }
    auto nets = in.get<std::uint32_t>();
    if (nets != (ck.model.n_fine > 0 ? 2u : 1u)) throw FormatError("checkpoint network count does not match n_fine");
    for (std::uint32_t k = 0; k < nets; ++k) {
        MlpParams<float> p(cfg);
        if (in.get<std::uint64_t>() != p.size()) throw FormatError("checkpoint parameter count does not match architecture");
        in.floats(p.values(), p.size());
        ck.model.nets.push_back(std::move(p));
    }
    if (in.get<std::uint32_t>() != 0) {
        TrainingState st;
        st.iteration = in.get<std::uint64_t>();
        st.seed = in.get<std::uint64_t>();
        st.capacity.coarse = in.get<std::uint64_t>();
        st.capacity.fine = in.get<std::uint64_t>();
        st.recalibrations = in.get<std::uint32_t>();
        st.wall_seconds = in.get<double>();
        st.cumulative_points = in.get<std::uint64_t>();
        for (const auto& net : ck.model.nets) {
            AdamState<float> a;
            a.step = in.get<std::uint64_t>();
            in.floats(a.m, net.size());
            in.floats(a.v, net.size());
            st.adam.push_back(std::move(a));
        }
        ck.state = std::move(st);
    }
    if (!in.at_end()) throw FormatError("checkpoint has trailing bytes");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const NerfModel<float>& model,
                            const TrainingState* state = nullptr) {
    auto bytes = encode_checkpoint(model, state);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw FormatError("cannot write " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw FormatError("checkpoint not found: " + path.string());
    return decode_checkpoint(detail::read_file(path));
}

}  // namespace vaxnerf

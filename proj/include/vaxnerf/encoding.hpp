#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "vaxnerf/camera.hpp"

namespace vaxnerf {

inline int encoded_size(int levels, bool include_input) { return 3 * ((include_input ? 1 : 0) + 2 * levels); }

/// Writes [v, sin(2^k pi v), cos(2^k pi v)] for k = 0..levels-1 (each a
/// 3-vector block) into out[0 .. encoded_size). Higher octaves come from
/// double-angle recurrences in double precision.
template <class Out>
void positional_encoding_into(const Vec3& v, int levels, bool include_input, Out* out) {
    int o = 0;
    if (include_input)
        for (int a = 0; a < 3; ++a) out[o++] = static_cast<Out>(v[a]);
    double s[3], c[3];
    for (int a = 0; a < 3; ++a) {
        s[a] = std::sin(std::numbers::pi * v[a]);
        c[a] = std::cos(std::numbers::pi * v[a]);
    }
    for (int k = 0; k < levels; ++k) {
        for (int a = 0; a < 3; ++a) out[o + a] = static_cast<Out>(s[a]);
        for (int a = 0; a < 3; ++a) out[o + 3 + a] = static_cast<Out>(c[a]);
        o += 6;
        for (int a = 0; a < 3; ++a) {
            double s2 = 2.0 * s[a] * c[a];
            double c2 = (c[a] - s[a]) * (c[a] + s[a]);
            s[a] = s2;
            c[a] = c2;
        }
    }
}

inline std::vector<double> positional_encoding(const Vec3& v, int levels, bool include_input) {
    std::vector<double> out(encoded_size(levels, include_input));
    positional_encoding_into(v, levels, include_input, out.data());
    return out;
}

}  // namespace vaxnerf

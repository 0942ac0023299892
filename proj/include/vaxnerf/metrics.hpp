#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "vaxnerf/error.hpp"
#include "vaxnerf/image.hpp"

namespace vaxnerf {

/// Reported PSNR when the two images are identical.
inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) {
    if (!(mse > 0.0)) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ValidationError("mse: image shapes differ");
    if (a.data.empty()) throw ValidationError("mse: empty image");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

/// PSNR in dB for images with values in [0, 1].
inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Gaussian-window SSIM averaged over channels and all fully-inside window
/// positions. Images smaller than the window use a window clipped to the image.
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
    if (!a.same_shape(b)) throw ValidationError("ssim: image shapes differ");
    if (a.data.empty()) throw ValidationError("ssim: empty image");
    const int W = a.width, H = a.height, C = a.channels;
    const int wx = std::min(opt.window, W), wy = std::min(opt.window, H);

    auto kernel = [&](int n) {
        std::vector<double> k(n);
        double sum = 0.0, c = 0.5 * (n - 1);
        for (int i = 0; i < n; ++i) sum += k[i] = std::exp(-0.5 * ((i - c) / opt.sigma) * ((i - c) / opt.sigma));
        for (double& v : k) v /= sum;
        return k;
    };
    const auto kx = kernel(wx), ky = kernel(wy);
    const double c1 = (opt.k1 * opt.dynamic_range) * (opt.k1 * opt.dynamic_range);
    const double c2 = (opt.k2 * opt.dynamic_range) * (opt.k2 * opt.dynamic_range);

    const int ox = W - wx + 1, oy = H - wy + 1;
    // Separable filtering of the five moment images, horizontal pass then vertical.
    std::array<std::vector<double>, 5> hx;
    for (auto& h : hx) h.assign(static_cast<std::size_t>(H) * ox, 0.0);
    double total = 0.0;
    for (int ch = 0; ch < C; ++ch) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < ox; ++x) {
                double m[5] = {0, 0, 0, 0, 0};
                for (int i = 0; i < wx; ++i) {
                    double p = a.at(y, x + i, ch), q = b.at(y, x + i, ch);
                    m[0] += kx[i] * p;
                    m[1] += kx[i] * q;
                    m[2] += kx[i] * p * p;
                    m[3] += kx[i] * q * q;
                    m[4] += kx[i] * p * q;
                }
                for (int k = 0; k < 5; ++k) hx[k][static_cast<std::size_t>(y) * ox + x] = m[k];
            }
        for (int y = 0; y < oy; ++y)
            for (int x = 0; x < ox; ++x) {
                double m[5] = {0, 0, 0, 0, 0};
                for (int j = 0; j < wy; ++j)
                    for (int k = 0; k < 5; ++k) m[k] += ky[j] * hx[k][static_cast<std::size_t>(y + j) * ox + x];
                const double mu1 = m[0], mu2 = m[1];
                const double s11 = m[2] - mu1 * mu1, s22 = m[3] - mu2 * mu2, s12 = m[4] - mu1 * mu2;
                total += ((2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)) /
                         ((mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2));
            }
    }
    return total / (static_cast<double>(C) * ox * oy);
}

}  // namespace vaxnerf

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vaxnerf/error.hpp"

namespace vaxnerf {

/// Interleaved row-major image with float samples, nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    float& at(int row, int col, int ch) {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
    float at(int row, int col, int ch) const {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    friend bool operator==(const Image&, const Image&) = default;
};

/// Row-major binary mask, true = foreground.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h, bool fill = false)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

    bool at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col] != 0; }
    void set(int row, int col, bool v) { data[static_cast<std::size_t>(row) * width + col] = v ? 1 : 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }
    friend bool operator==(const Mask&, const Mask&) = default;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_fn(png_structp, png_const_charp msg) { throw DatasetFormatError(msg); }
inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8- or 16-bit PNG (gray, gray+alpha, RGB, RGBA or palette) into
/// an Image with 3 or 4 channels scaled to [0, 1]. No gamma conversion.
inline Image read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DatasetFormatError("cannot open image " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw DatasetFormatError("not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                             detail::png_warning_fn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int ch = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buf(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (int r = 0; r < h; ++r) rows[r] = buf.data() + rowbytes * r;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);

    Image img(w, h, ch);
    const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w * ch; ++c) {
            unsigned v = depth == 16 ? (unsigned(rows[r][2 * c]) << 8) | rows[r][2 * c + 1] : rows[r][c];
            img.data[static_cast<std::size_t>(r) * w * ch + c] = static_cast<float>(v * scale);
        }
    }
    return img;
}

/// Writes a 3- or 4-channel image as an 8- or 16-bit PNG, clamping to [0, 1].
inline void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8) {
    if (img.channels != 3 && img.channels != 4) throw ValidationError("write_png expects 3 or 4 channels");
    if (bit_depth != 8 && bit_depth != 16) throw ValidationError("write_png bit depth must be 8 or 16");
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw DatasetFormatError("cannot create image " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                              detail::png_warning_fn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, bit_depth,
                 img.channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const int bytes = bit_depth / 8;
    const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * img.channels * bytes);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width * img.channels; ++c) {
            double v = std::clamp<double>(img.data[static_cast<std::size_t>(r) * img.width * img.channels + c], 0.0, 1.0);
            auto q = static_cast<unsigned>(std::lround(v * maxv));
            if (bytes == 2) {
                row[2 * c] = static_cast<png_byte>(q >> 8);
                row[2 * c + 1] = static_cast<png_byte>(q & 0xff);
            } else {
                row[c] = static_cast<png_byte>(q);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
}

}  // namespace vaxnerf

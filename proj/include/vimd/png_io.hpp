#pragma once

// Thin libpng wrappers: 16-bit single-channel (disparity encoding) and
// 8-bit RGB. Writes use fixed filter/compression settings so identical
// inputs produce byte-identical files.

#include "vimd/core.hpp"
#include "vimd/encoder.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace vimd {

using Gray16 = Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw FormatError("png: cannot open " + path);
    return f;
}

}  // namespace detail

inline void write_png_gray16(const std::string& path, const Gray16& image) {
    auto f = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("png: write failed for " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.cols()),
                 static_cast<png_uint_32>(image.rows()), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.cols()) * 2);
    for (Eigen::Index r = 0; r < image.rows(); ++r) {
        for (Eigen::Index c = 0; c < image.cols(); ++c) {
            row[static_cast<std::size_t>(c) * 2] = static_cast<std::uint8_t>(image(r, c) >> 8);
            row[static_cast<std::size_t>(c) * 2 + 1] = static_cast<std::uint8_t>(image(r, c) & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Gray16 read_png_gray16(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: read failed for " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    if (png_get_bit_depth(png, info) != 16 ||
        png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: " + path + " is not 16-bit single-channel");
    }
    const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    Gray16 image(h, w);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 2);
    for (png_uint_32 r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 c = 0; c < w; ++c)
            image(r, c) = static_cast<std::uint16_t>((row[c * 2] << 8) | row[c * 2 + 1]);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

// rgb: (h*w) x 3 in [0, 1], row-major raster
inline void write_png_rgb8(const std::string& path, const Matrix& rgb, int h, int w) {
    require_dims(rgb.rows() == static_cast<Eigen::Index>(h) * w && rgb.cols() == 3,
                 "write_png_rgb8: expected (h*w) x 3");
    auto f = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("png: write failed for " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c)
            for (int k = 0; k < 3; ++k) {
                double v = std::clamp(rgb(static_cast<Eigen::Index>(r) * w + c, k), 0.0, 1.0);
                row[static_cast<std::size_t>(c) * 3 + k] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline ImageTensor read_png_rgb8(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: read failed for " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    ImageTensor img;
    img.h = static_cast<int>(h);
    img.w = static_cast<int>(w);
    img.data.resize(static_cast<Eigen::Index>(h) * w, 3);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (png_uint_32 r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 c = 0; c < w; ++c)
            for (int k = 0; k < 3; ++k)
                img.data(static_cast<Eigen::Index>(r) * w + c, k) =
                    row[static_cast<std::size_t>(c) * 3 + k] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace vimd

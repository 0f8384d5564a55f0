#pragma once

#include <cstdint>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "gsloc/common.hpp"

namespace gsloc {

/// Reads a single-channel 8- or 16-bit grayscale PNG into 16-bit counts.
inline Image<std::uint16_t> read_png16(const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw Error(ErrorKind::Io, "cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::Io, "libpng init failed");
    }
    Image<std::uint16_t> img;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::Parse, "corrupt PNG " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (depth != 16 && depth != 8)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::Parse, path + " is not an 8/16-bit grayscale PNG");
    }
    if (depth == 16) png_set_swap(png);  // to host little-endian
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * std::size_t(h));
    rows.resize(std::size_t(h));
    for (int y = 0; y < h; ++y) rows[std::size_t(y)] = buffer.data() + stride * std::size_t(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img = Image<std::uint16_t>(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (depth == 16) {
                std::uint16_t val;
                std::memcpy(&val, rows[std::size_t(y)] + 2 * x, 2);
                img(x, y) = val;
            } else {
                img(x, y) = rows[std::size_t(y)][x];
            }
        }
    }
    return img;
}

inline void write_png16(const std::string& path, const Image<std::uint16_t>& img) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw Error(ErrorKind::Io, "cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::Io, "libpng init failed");
    }
    std::vector<std::uint8_t> row(std::size_t(img.width) * 2);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::Io, "PNG write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::uint16_t v = img(x, y);
            row[std::size_t(2 * x)] = std::uint8_t(v >> 8);  // PNG is big-endian
            row[std::size_t(2 * x + 1)] = std::uint8_t(v & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace gsloc

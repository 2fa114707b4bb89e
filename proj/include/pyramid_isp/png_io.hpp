#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pyramid_isp/bayer.hpp"
#include "pyramid_isp/image.hpp"

namespace pyramid_isp::png {

/// Decoded PNG samples, interleaved, widened to 16 bits.
struct PngData {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint16_t> samples;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void write_png(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
                      const std::vector<png_bytep>& rows) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed for '" + path.string() + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing '" + path.string() + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(fp.get()) != 0) throw IoError("failed flushing '" + path.string() + "'");
}

struct ReadContext {
    PngData out;
    std::vector<png_byte> buffer;
    std::vector<png_bytep> rows;
};

/// Keeps the setjmp frame free of objects modified after setjmp; all state
/// lives in the caller-owned context.
inline bool read_into(std::FILE* fp, ReadContext& ctx) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int in_depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && in_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (in_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);

    ctx.out.width = static_cast<int>(png_get_image_width(png, info));
    ctx.out.height = static_cast<int>(png_get_image_height(png, info));
    ctx.out.channels = png_get_channels(png, info);
    ctx.out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    ctx.buffer.resize(rowbytes * static_cast<std::size_t>(ctx.out.height));
    ctx.rows.resize(static_cast<std::size_t>(ctx.out.height));
    for (int y = 0; y < ctx.out.height; ++y) ctx.rows[static_cast<std::size_t>(y)] = ctx.buffer.data() + rowbytes * y;
    png_read_image(png, ctx.rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

}  // namespace detail

inline PngData read(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open '" + path.string() + "'");
    unsigned char sig[8] = {};
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError("'" + path.string() + "' is not a PNG file");
    detail::ReadContext ctx;
    if (!detail::read_into(fp.get(), ctx)) throw IoError("corrupt PNG '" + path.string() + "'");

    PngData out = std::move(ctx.out);
    const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
    out.samples.resize(n);
    if (out.bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i)
            out.samples[i] = static_cast<std::uint16_t>(ctx.buffer[2 * i] | (ctx.buffer[2 * i + 1] << 8));
    } else {
        for (std::size_t i = 0; i < n; ++i) out.samples[i] = ctx.buffer[i];
    }
    return out;
}

/// Writes a mosaic as single-channel 16-bit PNG holding the raw codes.
inline void write_mosaic(const std::filesystem::path& path, const RawMosaic& raw) {
    std::vector<std::uint16_t> buf(raw.pixels);
    std::vector<png_bytep> rows(static_cast<std::size_t>(raw.height));
    for (int y = 0; y < raw.height; ++y)
        rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(buf.data() + static_cast<std::size_t>(y) * raw.width);
    detail::write_png(path, raw.width, raw.height, PNG_COLOR_TYPE_GRAY, 16, rows);
}

inline RawMosaic read_mosaic(const std::filesystem::path& path, int bit_depth, BayerPattern pattern) {
    PngData d = read(path);
    if (d.channels != 1) throw IoError("'" + path.string() + "' is not a single-channel mosaic");
    RawMosaic raw{d.height, d.width, bit_depth, pattern, std::move(d.samples)};
    try {
        raw.validate();
    } catch (const Error& e) {
        throw IoError("'" + path.string() + "': " + e.what());
    }
    return raw;
}

inline void write_rgb8(const std::filesystem::path& path, const Rgb8Image& img) {
    std::vector<std::uint8_t> buf(img.data);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * img.width * 3;
    detail::write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 8, rows);
}

inline Rgb8Image read_rgb8(const std::filesystem::path& path) {
    PngData d = read(path);
    if (d.bit_depth != 8) throw IoError("'" + path.string() + "' is not an 8-bit image");
    Rgb8Image img{d.height, d.width, std::vector<std::uint8_t>(static_cast<std::size_t>(d.width) * d.height * 3)};
    for (std::size_t p = 0; p < static_cast<std::size_t>(d.width) * d.height; ++p)
        for (int c = 0; c < 3; ++c)
            img.data[p * 3 + c] = static_cast<std::uint8_t>(d.channels == 1 ? d.samples[p] : d.samples[p * d.channels + c]);
    return img;
}

}  // namespace pyramid_isp::png

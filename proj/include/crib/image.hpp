#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "crib/errors.hpp"

namespace crib {

// Interleaved 8-bit RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> px; // size = width * height * 3

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), px(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::uint8_t* row(int y) { return px.data() + static_cast<std::size_t>(y) * width * 3; }
    const std::uint8_t* row(int y) const { return px.data() + static_cast<std::size_t>(y) * width * 3; }
    std::uint8_t& at(int x, int y, int c) { return px[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return px[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool empty() const { return px.empty(); }
};

// Single-channel 8-bit raster (tissue masks, annotation masks).
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> px; // size = width * height

    Mask() = default;
    Mask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), px(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return px[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return px[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const { return px.empty(); }

    std::size_t count_nonzero() const {
        std::size_t n = 0;
        for (auto v : px) n += (v != 0);
        return n;
    }
};

// Rec. 601 integer luma, 0..255.
inline int luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return (299 * r + 587 * g + 114 * b + 500) / 1000;
}

inline std::vector<std::uint8_t> luma_plane(const Image& img) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(img.width) * img.height);
    const std::uint8_t* p = img.px.data();
    for (std::size_t i = 0; i < out.size(); ++i, p += 3)
        out[i] = static_cast<std::uint8_t>(luma(p[0], p[1], p[2]));
    return out;
}

// --- PNG ------------------------------------------------------------------

namespace detail {

struct PngWriteSink {
    std::vector<std::uint8_t>* out;
};

inline void png_vec_write(png_structp png, png_bytep data, png_size_t len) {
    auto* sink = static_cast<PngWriteSink*>(png_get_io_ptr(png));
    sink->out->insert(sink->out->end(), data, data + len);
}

inline void png_noop_flush(png_structp) {}

struct PngReadSource {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

inline void png_mem_read(png_structp png, png_bytep out, png_size_t len) {
    auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
    if (src->pos + len > src->size) png_error(png, "png: truncated stream");
    std::memcpy(out, src->data + src->pos, len);
    src->pos += len;
}

template <typename RowFn>
std::vector<std::uint8_t> encode_png(int width, int height, int color_type, int level, RowFn row_of) {
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw InvariantError("png: write struct alloc failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw InvariantError("png: info struct alloc failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw InvariantError("png: encode failed");
    }
    PngWriteSink sink{&out};
    png_set_write_fn(png, &sink, png_vec_write, png_noop_flush);
    png_set_compression_level(png, level);
    png_set_filter(png, 0, PNG_FILTER_SUB);
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(row_of(y)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

} // namespace detail

inline std::vector<std::uint8_t> encode_png(const Image& img, int level = 3) {
    return detail::encode_png(img.width, img.height, PNG_COLOR_TYPE_RGB, level,
                              [&](int y) { return img.row(y); });
}

inline std::vector<std::uint8_t> encode_png(const Mask& mask, int level = 3) {
    return detail::encode_png(mask.width, mask.height, PNG_COLOR_TYPE_GRAY, level,
                              [&](int y) { return mask.px.data() + static_cast<std::size_t>(y) * mask.width; });
}

namespace detail {

template <typename Out>
Out decode_png_impl(const std::uint8_t* data, std::size_t size, bool want_rgb) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw InvariantError("png: read struct alloc failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw InvariantError("png: info struct alloc failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InvariantError("png: decode failed");
    }
    PngReadSource src{data, size, 0};
    png_set_read_fn(png, &src, png_mem_read);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_strip_alpha(png);
    if (want_rgb) {
        png_set_palette_to_rgb(png);
        png_set_gray_to_rgb(png);
    } else {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    Out out(width, height);
    const std::size_t stride = static_cast<std::size_t>(width) * (want_rgb ? 3 : 1);
    for (int y = 0; y < height; ++y)
        png_read_row(png, out.px.data() + static_cast<std::size_t>(y) * stride, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

} // namespace detail

inline Image decode_png_rgb(const std::vector<std::uint8_t>& bytes) {
    return detail::decode_png_impl<Image>(bytes.data(), bytes.size(), true);
}

inline Mask decode_png_gray(const std::vector<std::uint8_t>& bytes) {
    return detail::decode_png_impl<Mask>(bytes.data(), bytes.size(), false);
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw MissingInputError("cannot write " + path);
    if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw InvariantError("short write: " + path);
    }
    std::fclose(f);
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw MissingInputError("cannot open " + path);
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0 && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw InvariantError("short read: " + path);
    }
    std::fclose(f);
    return bytes;
}

inline void save_png(const Image& img, const std::string& path, int level = 3) {
    write_bytes(path, encode_png(img, level));
}

inline void save_png(const Mask& mask, const std::string& path, int level = 3) {
    write_bytes(path, encode_png(mask, level));
}

inline Image load_png_rgb(const std::string& path) { return decode_png_rgb(read_bytes(path)); }
inline Mask load_png_gray(const std::string& path) { return decode_png_gray(read_bytes(path)); }

// --- JPEG (augmentation round trip) ----------------------------------------

inline std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality) {
    jpeg_compress_struct cinfo{};
    jpeg_error_mgr jerr{};
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_compress(&cinfo);
    unsigned char* buf = nullptr;
    unsigned long buf_size = 0;
    jpeg_mem_dest(&cinfo, &buf, &buf_size);
    cinfo.image_width = static_cast<JDIMENSION>(img.width);
    cinfo.image_height = static_cast<JDIMENSION>(img.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(img.row(static_cast<int>(cinfo.next_scanline)));
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    std::vector<std::uint8_t> out(buf, buf + buf_size);
    jpeg_destroy_compress(&cinfo);
    free(buf);
    return out;
}

inline Image decode_jpeg(const std::vector<std::uint8_t>& bytes) {
    jpeg_decompress_struct cinfo{};
    jpeg_error_mgr jerr{};
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, const_cast<unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    Image out(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.row(static_cast<int>(cinfo.output_scanline));
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

// --- Geometry helpers -------------------------------------------------------

// out(x, y) = in(x - dx, y - dy); vacated pixels take `fill`.
inline Image translate(const Image& img, int dx, int dy, std::uint8_t fr, std::uint8_t fg, std::uint8_t fb) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        const int sy = y - dy;
        for (int x = 0; x < img.width; ++x) {
            const int sx = x - dx;
            std::uint8_t* o = out.px.data() + (static_cast<std::size_t>(y) * img.width + x) * 3;
            if (sx >= 0 && sx < img.width && sy >= 0 && sy < img.height) {
                const std::uint8_t* s = img.px.data() + (static_cast<std::size_t>(sy) * img.width + sx) * 3;
                o[0] = s[0];
                o[1] = s[1];
                o[2] = s[2];
            } else {
                o[0] = fr;
                o[1] = fg;
                o[2] = fb;
            }
        }
    }
    return out;
}

inline Mask translate(const Mask& mask, int dx, int dy) {
    Mask out(mask.width, mask.height, 0);
    for (int y = 0; y < mask.height; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= mask.height) continue;
        for (int x = 0; x < mask.width; ++x) {
            const int sx = x - dx;
            if (sx >= 0 && sx < mask.width) out.at(x, y) = mask.at(sx, sy);
        }
    }
    return out;
}

inline Image crop(const Image& img, int x0, int y0, int w, int h) {
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        std::memcpy(out.row(y), img.row(y0 + y) + static_cast<std::size_t>(x0) * 3,
                    static_cast<std::size_t>(w) * 3);
    return out;
}

} // namespace crib

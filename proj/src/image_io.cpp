#include "disagg/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

namespace disagg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.string().c_str(), mode));
    if (!f) throw LoadError("cannot open '" + path.string() + "'");
    return f;
}

void write_png(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
               const std::vector<png_bytep>& rows, bool swap16) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw LoadError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw LoadError("failed to write PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (swap16) png_set_swap(png);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

bool host_little_endian() {
    const std::uint16_t probe = 1;
    return *reinterpret_cast<const std::uint8_t*>(&probe) == 1;
}

// Reads a PNG, letting `configure` install transforms; returns row bytes.
// No objects with destructors are created between a setjmp and the libpng calls it guards.
template <typename Configure>
std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int& width, int& height, Configure configure) {
    FilePtr f = open_file(path, "rb");
    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw LoadError("'" + path.string() + "' is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw LoadError("libpng initialization failed");
    }
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
    std::string error;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw LoadError("failed to decode PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    error = configure(png, info);
    if (!error.empty()) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw LoadError("'" + path.string() + "': " + error);
    }
    png_read_update_info(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    pixels.resize(rowbytes * static_cast<std::size_t>(height));
    rows.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + rowbytes * static_cast<std::size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

}  // namespace

void write_png_rgb8(const std::filesystem::path& path, const Rgb8Image& image) {
    if (image.rgb.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
        throw ShapeError("RGB image buffer does not match its dimensions");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(image.rgb.data()) + static_cast<std::size_t>(y) * image.width * 3;
    }
    write_png(path, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, rows, false);
}

Rgb8Image read_png_rgb8(const std::filesystem::path& path) {
    Rgb8Image out;
    out.rgb = read_png(path, out.width, out.height, [](png_structp png, png_infop info) {
        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
        return std::string();
    });
    if (out.rgb.size() != static_cast<std::size_t>(out.height) * out.width * 3) {
        throw LoadError("'" + path.string() + "': unexpected RGB layout");
    }
    return out;
}

void write_png_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& image) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(image.data.data()) +
                                                                        static_cast<std::size_t>(y) * image.width);
    }
    write_png(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows, host_little_endian());
}

Grid<std::uint16_t> read_png_gray16(const std::filesystem::path& path) {
    int w = 0;
    int h = 0;
    const auto bytes = read_png(path, w, h, [](png_structp png, png_infop info) {
        if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 16) {
            return std::string("expected a 16-bit grayscale PNG");
        }
        if (host_little_endian()) png_set_swap(png);
        return std::string();
    });
    Grid<std::uint16_t> out(h, w);
    if (bytes.size() != out.size() * 2) throw LoadError("'" + path.string() + "': unexpected 16-bit layout");
    std::memcpy(out.data.data(), bytes.data(), bytes.size());
    return out;
}

}  // namespace disagg

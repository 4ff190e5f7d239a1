#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "gsem/error.hpp"
#include "gsem/io.hpp"

namespace gsem::io {

namespace {

void write_rows(const std::filesystem::path& path, int width, int height, int color_type,
                const std::vector<std::uint8_t>& pixels, int channels) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!fp) throw UsageError("cannot open '" + path.string() + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng failed writing '" + path.string() + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < height; ++r) {
        png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r) * width * channels));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::filesystem::path& path, const FeatureImage& rgb) {
    if (rgb.channels != 3) throw ShapeError("write_png: expected 3 channels, got " + std::to_string(rgb.channels));
    if (rgb.height <= 0 || rgb.width <= 0) throw ShapeError("write_png: empty image");
    std::vector<std::uint8_t> px(rgb.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double v = std::isfinite(rgb.data[i]) ? std::clamp(rgb.data[i], 0.0, 1.0) : 0.0;
        px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    write_rows(path, rgb.width, rgb.height, PNG_COLOR_TYPE_RGB, px, 3);
}

void write_png(const std::filesystem::path& path, const Mask& mask) {
    if (mask.height <= 0 || mask.width <= 0) throw ShapeError("write_png: empty mask");
    std::vector<std::uint8_t> px(mask.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.data[i] ? 255 : 0;
    write_rows(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, px, 1);
}

}  // namespace gsem::io

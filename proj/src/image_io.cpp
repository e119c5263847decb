#include "osad/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace osad {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageIoError("cannot open " + path);
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw ImageIoError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("libpng initialisation failed for " + path);
    }
    Image8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.pixels.resize(img.width * img.height * img.channels);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    if (img.channels != 1 && img.channels != 3) throw ImageIoError("unsupported channel layout in " + path);
    return img;
}

void write_png(const std::string& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3) throw ImageIoError("write_png: need 1 or 3 channels");
    if (img.pixels.size() != img.width * img.height * img.channels) throw ImageIoError("write_png: size mismatch");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageIoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError("libpng initialisation failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError("failed writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor<float> image_to_tensor(const Image8& img) {
    const std::size_t H = img.height, W = img.width, C = img.channels;
    Tensor<float> t({3, H, W});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                t.at(c, y, x) = static_cast<float>(img.pixels[(y * W + x) * C + (C == 1 ? 0 : c)]) / 255.f;
    return t;
}

Tensor<float> mask_to_tensor(const Image8& img) {
    Tensor<float> t({1, img.height, img.width});
    for (std::size_t i = 0; i < img.height * img.width; ++i) t[i] = img.pixels[i * img.channels] > 127 ? 1.f : 0.f;
    return t;
}

Image8 probability_to_gray(const Tensor<float>& p) {
    require_rank(p.shape(), 3, "probability_to_gray");
    Image8 img{p.dim(2), p.dim(1), 1, {}};
    img.pixels.resize(img.width * img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(static_cast<double>(p[i]), 0.0, 1.0)));
    return img;
}

Image8 tensor_to_rgb(const Tensor<float>& t) {
    require_rank(t.shape(), 3, "tensor_to_rgb");
    const std::size_t H = t.dim(1), W = t.dim(2);
    Image8 img{W, H, 3, std::vector<std::uint8_t>(W * H * 3)};
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.pixels[(y * W + x) * 3 + c] = static_cast<std::uint8_t>(
                    std::lround(255.0 * std::clamp(static_cast<double>(t.at(c % t.dim(0), y, x)), 0.0, 1.0)));
    return img;
}

}  // namespace osad

#include "dynsurf/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

namespace dynsurf {

double srgb_to_linear(double s) {
    if (s <= 0.04045) return s / 12.92;
    return std::pow((s + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double l) {
    l = std::clamp(l, 0.0, 1.0);
    if (l <= 0.0031308) return l * 12.92;
    return 1.055 * std::pow(l, 1.0 / 2.4) - 0.055;
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

namespace {

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* f = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (f) std::fclose(f);
    }
};

// Decodes any 8/16-bit PNG to 8-bit RGB rows.
std::vector<std::uint8_t> decode_png_rgb(const std::string& path, int* width, int* height) {
    PngReadCloser ctx;
    ctx.f = std::fopen(path.c_str(), "rb");
    if (!ctx.f) throw MissingFile("cannot open PNG: " + path);
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw IoError("libpng init failed for " + path);
    if (setjmp(png_jmpbuf(ctx.png))) throw IoError("PNG decode failed: " + path);
    png_init_io(ctx.png, ctx.f);
    png_read_info(ctx.png, ctx.info);
    png_set_expand(ctx.png);
    png_set_strip_16(ctx.png);
    png_set_strip_alpha(ctx.png);
    png_set_gray_to_rgb(ctx.png);
    png_read_update_info(ctx.png, ctx.info);
    *width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
    *height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
    std::vector<std::uint8_t> data(static_cast<std::size_t>(*width) * *height * 3);
    std::vector<png_bytep> rows(*height);
    for (int y = 0; y < *height; ++y) rows[y] = data.data() + static_cast<std::size_t>(y) * *width * 3;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);
    return data;
}

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* f = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (f) std::fclose(f);
    }
};

void encode_png(const std::string& path, const std::uint8_t* data, int width, int height, int channels) {
    PngWriteCloser ctx;
    ctx.f = std::fopen(path.c_str(), "wb");
    if (!ctx.f) throw IoError("cannot open for write: " + path);
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw IoError("libpng init failed for " + path);
    if (setjmp(png_jmpbuf(ctx.png))) throw IoError("PNG encode failed: " + path);
    png_init_io(ctx.png, ctx.f);
    png_set_IHDR(ctx.png, ctx.info, width, height, 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels);
    png_write_image(ctx.png, rows.data());
    png_write_end(ctx.png, nullptr);
}

}  // namespace

ImageD read_png_linear(const std::string& path) {
    int w = 0, h = 0;
    const auto bytes = decode_png_rgb(path, &w, &h);
    ImageD img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = srgb_to_linear(bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0);
    return img;
}

void write_png_srgb(const ImageD& img, const std::string& path) {
    if (img.channels() != 3) throw ShapeMismatch("write_png_srgb: expected 3 channels");
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.height()) * img.width() * 3);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c)
                bytes[(static_cast<std::size_t>(y) * img.width() + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(linear_to_srgb(img.at(y, x, c)) * 255.0));
    encode_png(path, bytes.data(), img.width(), img.height(), 3);
}

ImageD read_png_mask(const std::string& path) {
    int w = 0, h = 0;
    const auto bytes = decode_png_rgb(path, &w, &h);
    ImageD mask(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            mask.at(y, x) = bytes[(static_cast<std::size_t>(y) * w + x) * 3] / 255.0 >= 0.5 ? 1.0 : 0.0;
    return mask;
}

void write_png_mask(const ImageD& mask, const std::string& path) {
    if (mask.channels() != 1) throw ShapeMismatch("write_png_mask: expected 1 channel");
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(mask.height()) * mask.width());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            bytes[static_cast<std::size_t>(y) * mask.width() + x] = mask.at(y, x) >= 0.5 ? 255 : 0;
    encode_png(path, bytes.data(), mask.width(), mask.height(), 1);
}

// ---------------------------------------------------------------------------
// Raw float maps and flow files (little-endian)
// ---------------------------------------------------------------------------

namespace {

void write_u32(std::FILE* f, std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

std::uint32_t read_u32(std::FILE* f) {
    std::uint8_t b[4];
    if (std::fread(b, 1, 4, f) != 4) throw IoError("unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::FILE* f, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(f, bits);
}

float read_f32(std::FILE* f) {
    const std::uint32_t bits = read_u32(f);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_fmap(const ImageD& img, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_fmap: cannot open " + path);
    std::fwrite("FMP1", 1, 4, f);
    write_u32(f, static_cast<std::uint32_t>(img.width()));
    write_u32(f, static_cast<std::uint32_t>(img.height()));
    write_u32(f, static_cast<std::uint32_t>(img.channels()));
    for (const double v : img.raw()) write_f32(f, static_cast<float>(v));
    if (std::fclose(f) != 0) throw IoError("write_fmap: write failure on " + path);
}

ImageD read_fmap(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw MissingFile("read_fmap: cannot open " + path);
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "FMP1", 4) != 0) {
        std::fclose(f);
        throw IoError("read_fmap: bad magic in " + path);
    }
    const int w = static_cast<int>(read_u32(f));
    const int h = static_cast<int>(read_u32(f));
    const int c = static_cast<int>(read_u32(f));
    ImageD img(h, w, c);
    for (double& v : img.raw()) v = read_f32(f);
    std::fclose(f);
    return img;
}

void write_flow(const FlowField& flow, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_flow: cannot open " + path);
    std::fwrite("FLO1", 1, 4, f);
    const int W = flow.width(), H = flow.height();
    write_u32(f, static_cast<std::uint32_t>(W));
    write_u32(f, static_cast<std::uint32_t>(H));
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            write_f32(f, static_cast<float>(flow.vectors.at(y, x, 0)));
            write_f32(f, static_cast<float>(flow.vectors.at(y, x, 1)));
        }
    std::uint8_t byte = 0;
    int bit = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (flow.valid.at(y, x)) byte |= static_cast<std::uint8_t>(1u << bit);
            if (++bit == 8) {
                std::fwrite(&byte, 1, 1, f);
                byte = 0;
                bit = 0;
            }
        }
    if (bit != 0) std::fwrite(&byte, 1, 1, f);
    if (std::fclose(f) != 0) throw IoError("write_flow: write failure on " + path);
}

FlowField read_flow(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw MissingFile("read_flow: cannot open " + path);
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "FLO1", 4) != 0) {
        std::fclose(f);
        throw IoError("read_flow: bad magic in " + path);
    }
    const int w = static_cast<int>(read_u32(f));
    const int h = static_cast<int>(read_u32(f));
    FlowField flow(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            flow.vectors.at(y, x, 0) = read_f32(f);
            flow.vectors.at(y, x, 1) = read_f32(f);
        }
    std::uint8_t byte = 0;
    int bit = 8;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (bit == 8) {
                if (std::fread(&byte, 1, 1, f) != 1) {
                    std::fclose(f);
                    throw IoError("read_flow: truncated validity plane in " + path);
                }
                bit = 0;
            }
            flow.valid.at(y, x) = (byte >> bit) & 1u;
            ++bit;
        }
    std::fclose(f);
    return flow;
}

std::string flow_path(const std::string& dataset_dir, int frame_t, int view, bool forward) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "/flow/f%04d_v%02d_%s.flo1", frame_t, view, forward ? "fwd" : "bwd");
    return dataset_dir + buf;
}

}  // namespace dynsurf

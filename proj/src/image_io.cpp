#include "uxmil/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace uxmil {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

GrayImage load_png_file(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: read struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: info struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError("png: malformed file " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const std::size_t w = png_get_image_width(png, info);
    const std::size_t h = png_get_image_height(png, info);
    const std::size_t channels = png_get_channels(png, info);
    std::vector<png_byte> row(w * channels);

    GrayImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(w * h);
    for (std::size_t y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t x = 0; x < w; ++x) {
            float v;
            if (channels >= 3) {
                v = (0.299f * row[x * channels] + 0.587f * row[x * channels + 1] +
                     0.114f * row[x * channels + 2]) /
                    255.0f;
            } else {
                v = row[x * channels] / 255.0f;
            }
            img.pixels[y * w + x] = v;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

GrayImage load_pgm_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw ValidationError("pgm: expected binary P5, got '" + magic + "'");
    auto next_value = [&]() -> long {
        // skip whitespace and '#' comments
        while (true) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        long v;
        if (!(is >> v)) throw ValidationError("pgm: malformed header in " + path);
        return v;
    };
    const long w = next_value(), h = next_value(), maxval = next_value();
    if (w <= 0 || h <= 0 || maxval != 255)
        throw ValidationError("pgm: unsupported dimensions/maxval in " + path);
    is.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw IoError("pgm: truncated pixel data in " + path);
    GrayImage img;
    img.width = static_cast<std::size_t>(w);
    img.height = static_cast<std::size_t>(h);
    img.pixels.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0f;
    return img;
}

}  // namespace

GrayImage load_image(const std::string& path) {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "pgm" || ext == "PGM") return load_pgm_file(path);
    return load_png_file(path);
}

void save_png(const std::string& path, const GrayImage& img) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("png: cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: write struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: info struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: write failure on " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(img.width);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const float v = std::min(1.0f, std::max(0.0f, img.at(y, x)));
            row[x] = static_cast<png_byte>(std::lrint(v * 255.0f));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("pgm: cannot open for writing: " + path);
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    for (float p : img.pixels) {
        const float v = std::min(1.0f, std::max(0.0f, p));
        os.put(static_cast<char>(std::lrint(v * 255.0f)));
    }
    if (!os) throw IoError("pgm: write failure: " + path);
}

GrayImage resize_bilinear(const GrayImage& img, std::size_t out_h, std::size_t out_w) {
    if (img.width == out_w && img.height == out_h) return img;
    GrayImage out;
    out.width = out_w;
    out.height = out_h;
    out.pixels.resize(out_w * out_h);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const double cy = std::min(std::max(fy, 0.0), static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(cy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = cy - y0;
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const double cx = std::min(std::max(fx, 0.0), static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(cx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = cx - x0;
            const double top = (1 - wx) * img.at(y0, x0) + wx * img.at(y0, x1);
            const double bot = (1 - wx) * img.at(y1, x0) + wx * img.at(y1, x1);
            out.pixels[y * out_w + x] = static_cast<float>((1 - wy) * top + wy * bot);
        }
    }
    return out;
}

}  // namespace uxmil

#pragma once

#include <string>
#include <vector>

#include "uxmil/common.hpp"

namespace uxmil {

// Grayscale image, values in [0, 1], row-major.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> pixels;

    float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

// Reads a PNG (8-bit gray / RGB / RGBA, 16-bit reduced to 8) or a binary PGM
// (P5). RGB is converted by luminance 0.299 R + 0.587 G + 0.114 B.
GrayImage load_image(const std::string& path);

// Writes an 8-bit grayscale PNG; values are clamped to [0,1].
void save_png(const std::string& path, const GrayImage& img);

void save_pgm(const std::string& path, const GrayImage& img);

// Bilinear resample (half-pixel centers). Identity when sizes already match.
GrayImage resize_bilinear(const GrayImage& img, std::size_t out_h, std::size_t out_w);

}  // namespace uxmil

#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "fseg/image.hpp"

namespace fseg {

// Fixed render palette for the 5 classes: background black, tumor red,
// fat green, mammary yellow, muscle blue.
inline constexpr std::array<std::array<std::uint8_t, 3>, kNumClasses> kClassPalette = {{
    {0, 0, 0},
    {255, 0, 0},
    {0, 255, 0},
    {255, 255, 0},
    {0, 0, 255},
}};

// Grayscale readers accept 8-bit PNG (color converted by luminance) and
// binary PGM (P5). The format is chosen by file extension.
GrayImage read_gray(const std::string& path);
void write_gray_png(const std::string& path, const GrayImage& img);
void write_pgm(const std::string& path, const GrayImage& img);

// Label maps round-trip through indexed PNG with the fixed palette.
LabelMap read_label_png(const std::string& path);
void write_label_png(const std::string& path, const LabelMap& map);

// 50% blend of the input image with the palette color of each label.
void write_overlay_png(const std::string& path, const GrayImage& img, const LabelMap& map);

// Real plane min-max scaled to 8 bits; for membership/uncertainty dumps.
void write_plane_png(const std::string& path, const Plane& plane);

}  // namespace fseg

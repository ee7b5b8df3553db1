#pragma once

#include <cstdint>
#include <vector>

namespace fseg {

// 8-bit grayscale raster, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(std::size_t(w) * std::size_t(h), fill) {}

  std::uint8_t& at(int x, int y) { return pixels[std::size_t(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[std::size_t(y) * width + x]; }
  std::size_t size() const { return pixels.size(); }
};

// Per-pixel class map. 0 background, 1 tumor, 2 fat, 3 mammary, 4 muscle.
inline constexpr int kNumClasses = 5;
inline constexpr int kClassBackground = 0;
inline constexpr int kClassTumor = 1;
inline constexpr int kClassFat = 2;
inline constexpr int kClassMammary = 3;
inline constexpr int kClassMuscle = 4;

struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), labels(std::size_t(w) * std::size_t(h), fill) {}

  std::uint8_t& at(int x, int y) { return labels[std::size_t(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return labels[std::size_t(y) * width + x]; }
  std::size_t size() const { return labels.size(); }
};

// Real-valued plane, row-major. Used for wavelet subbands and network channels.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0)
      : width(w), height(h), values(std::size_t(w) * std::size_t(h), fill) {}

  double& at(int x, int y) { return values[std::size_t(y) * width + x]; }
  double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
  std::size_t size() const { return values.size(); }
};

// Stack of same-extent planes in [0,1]; the network input representation.
struct MultiChannelImage {
  int width = 0;
  int height = 0;
  std::vector<Plane> channels;
};

GrayImage resize_bilinear(const GrayImage& img, int out_w, int out_h);
LabelMap resize_nearest(const LabelMap& map, int out_w, int out_h);

}  // namespace fseg

#include "fseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fseg {

GrayImage resize_bilinear(const GrayImage& img, int out_w, int out_h) {
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("resize_bilinear: empty image");
  if (out_w <= 0 || out_h <= 0) throw std::invalid_argument("resize_bilinear: bad target extents");
  if (out_w == img.width && out_h == img.height) return img;

  GrayImage out(out_w, out_h);
  // Pixel centers at half-integer coordinates so the mapping is symmetric.
  const double sx = double(img.width) / out_w;
  const double sy = double(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, double(img.height - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, double(img.width - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * img.at(x0, y0) + wx * img.at(x1, y0);
      const double bot = (1.0 - wx) * img.at(x0, y1) + wx * img.at(x1, y1);
      const double v = (1.0 - wy) * top + wy * bot;
      out.at(x, y) = std::uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& map, int out_w, int out_h) {
  if (map.width <= 0 || map.height <= 0) throw std::invalid_argument("resize_nearest: empty map");
  if (out_w <= 0 || out_h <= 0) throw std::invalid_argument("resize_nearest: bad target extents");
  if (out_w == map.width && out_h == map.height) return map;

  LabelMap out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    int sy = int((y + 0.5) * map.height / out_h);
    sy = std::min(sy, map.height - 1);
    for (int x = 0; x < out_w; ++x) {
      int sx = int((x + 0.5) * map.width / out_w);
      sx = std::min(sx, map.width - 1);
      out.at(x, y) = map.at(sx, sy);
    }
  }
  return out;
}

}  // namespace fseg

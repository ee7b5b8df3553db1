#include "fseg/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace fseg {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;

Plane to_plane(const GrayImage& img) {
  Plane p(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) p.values[i] = double(img.pixels[i]);
  return p;
}

// Nearest-neighbor 2x upsample of a subband back to full extents.
Plane upsample2(const Plane& p) {
  Plane out(p.width * 2, p.height * 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out.at(x, y) = p.at(x / 2, y / 2);
  }
  return out;
}

void minmax_scale(Plane& p) {
  const auto [mn_it, mx_it] = std::minmax_element(p.values.begin(), p.values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mx > mn) {
    const double inv = 1.0 / (mx - mn);
    for (double& v : p.values) v = (v - mn) * inv;
  } else {
    std::fill(p.values.begin(), p.values.end(), 0.0);
  }
}
}  // namespace

GrayImage histogram_equalize(const GrayImage& img) {
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("histogram_equalize: empty image");

  std::array<std::int64_t, 256> count{};
  for (std::uint8_t v : img.pixels) ++count[v];

  std::array<std::int64_t, 256> cum{};
  std::int64_t running = 0;
  std::int64_t cum_min = 0;
  for (int t = 0; t < 256; ++t) {
    running += count[std::size_t(t)];
    cum[std::size_t(t)] = running;
    if (cum_min == 0 && running > 0) cum_min = running;
  }
  const std::int64_t n = std::int64_t(img.size());

  std::array<std::uint8_t, 256> map{};
  if (n == cum_min) {
    // One occupied level: the formula degenerates to 0/0; whole image to 255.
    map.fill(255);
  } else {
    const std::int64_t denom = n - cum_min;
    for (int t = 0; t < 256; ++t) {
      const std::int64_t num = std::max<std::int64_t>(cum[std::size_t(t)] - cum_min, 0);
      map[std::size_t(t)] = std::uint8_t(num * 255 / denom);
    }
  }

  GrayImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) out.pixels[i] = map[img.pixels[i]];
  return out;
}

HaarSubbands haar_level1(const Plane& input) {
  if (input.width < 2 || input.height < 2 || input.width % 2 != 0 || input.height % 2 != 0) {
    throw std::invalid_argument("haar_level1 needs even extents of at least 2; resize the image first");
  }
  const int hw = input.width / 2, hh_ = input.height / 2;

  // Row pass: per row, non-overlapping pairs to low/high halves.
  Plane row_lo(hw, input.height), row_hi(hw, input.height);
  for (int y = 0; y < input.height; ++y) {
    for (int x = 0; x < hw; ++x) {
      const double a = input.at(2 * x, y), b = input.at(2 * x + 1, y);
      row_lo.at(x, y) = (a + b) * kInvSqrt2;
      row_hi.at(x, y) = (a - b) * kInvSqrt2;
    }
  }

  HaarSubbands out{Plane(hw, hh_), Plane(hw, hh_), Plane(hw, hh_), Plane(hw, hh_)};
  for (int y = 0; y < hh_; ++y) {
    for (int x = 0; x < hw; ++x) {
      const double lo0 = row_lo.at(x, 2 * y), lo1 = row_lo.at(x, 2 * y + 1);
      const double hi0 = row_hi.at(x, 2 * y), hi1 = row_hi.at(x, 2 * y + 1);
      out.ll.at(x, y) = (lo0 + lo1) * kInvSqrt2;
      out.lh.at(x, y) = (lo0 - lo1) * kInvSqrt2;
      out.hl.at(x, y) = (hi0 + hi1) * kInvSqrt2;
      out.hh.at(x, y) = (hi0 - hi1) * kInvSqrt2;
    }
  }
  return out;
}

HaarSubbands haar_level1(const GrayImage& img) { return haar_level1(to_plane(img)); }

Plane haar_inverse(const HaarSubbands& bands) {
  const int hw = bands.ll.width, hh_ = bands.ll.height;
  for (const Plane* p : {&bands.lh, &bands.hl, &bands.hh}) {
    if (p->width != hw || p->height != hh_) {
      throw std::invalid_argument("haar_inverse: subband extents differ");
    }
  }

  Plane row_lo(hw, hh_ * 2), row_hi(hw, hh_ * 2);
  for (int y = 0; y < hh_; ++y) {
    for (int x = 0; x < hw; ++x) {
      row_lo.at(x, 2 * y) = (bands.ll.at(x, y) + bands.lh.at(x, y)) * kInvSqrt2;
      row_lo.at(x, 2 * y + 1) = (bands.ll.at(x, y) - bands.lh.at(x, y)) * kInvSqrt2;
      row_hi.at(x, 2 * y) = (bands.hl.at(x, y) + bands.hh.at(x, y)) * kInvSqrt2;
      row_hi.at(x, 2 * y + 1) = (bands.hl.at(x, y) - bands.hh.at(x, y)) * kInvSqrt2;
    }
  }

  Plane out(hw * 2, hh_ * 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < hw; ++x) {
      out.at(2 * x, y) = (row_lo.at(x, y) + row_hi.at(x, y)) * kInvSqrt2;
      out.at(2 * x + 1, y) = (row_lo.at(x, y) - row_hi.at(x, y)) * kInvSqrt2;
    }
  }
  return out;
}

MultiChannelImage assemble_channels(const GrayImage& equalized) {
  const HaarSubbands bands = haar_level1(equalized);

  Plane gray(equalized.width, equalized.height);
  for (std::size_t i = 0; i < equalized.size(); ++i) gray.values[i] = equalized.pixels[i] / 255.0;

  Plane low = upsample2(bands.ll);
  minmax_scale(low);

  Plane mag(bands.lh.width, bands.lh.height);
  for (std::size_t i = 0; i < mag.size(); ++i) {
    const double lh = bands.lh.values[i], hl = bands.hl.values[i], hh = bands.hh.values[i];
    mag.values[i] = std::sqrt(lh * lh + hl * hl + hh * hh);
  }
  Plane high = upsample2(mag);
  minmax_scale(high);

  MultiChannelImage out;
  out.width = equalized.width;
  out.height = equalized.height;
  out.channels = {std::move(gray), std::move(low), std::move(high)};
  return out;
}

MultiChannelImage preprocess_for_network(const GrayImage& raw, int size) {
  if (size < 2 || size % 2 != 0) {
    throw std::invalid_argument("preprocess_for_network: size must be even and at least 2");
  }
  return assemble_channels(histogram_equalize(resize_bilinear(raw, size, size)));
}

}  // namespace fseg

#pragma once

#include "fseg/image.hpp"

namespace fseg {

// Global histogram equalization over the 256-level range. The mapping is
// monotone and integer-exact: h(t) = floor((cdf(t) - cdf_min) / (1 - cdf_min) * 255)
// evaluated in pixel counts. A single-intensity image maps to 255 everywhere
// (limit of the formula as all mass concentrates on one level).
GrayImage histogram_equalize(const GrayImage& img);

struct HaarSubbands {
  Plane ll, lh, hl, hh;  // half extents of the input
};

// One level of the separable orthonormal Haar transform, rows then columns,
// with filters (1,1)/sqrt(2) and (1,-1)/sqrt(2) over non-overlapping pairs.
// Requires even extents; resize first.
HaarSubbands haar_level1(const Plane& input);
HaarSubbands haar_level1(const GrayImage& img);
Plane haar_inverse(const HaarSubbands& bands);

// Builds the 3-channel network input from an already equalized image:
// channel 0 is the gray plane / 255, channel 1 the nearest-neighbor-upsampled
// low-frequency subband, channel 2 the upsampled magnitude of the three
// high-frequency subbands; channels 1 and 2 are min-max scaled to [0,1].
MultiChannelImage assemble_channels(const GrayImage& equalized);

// Full input path: bilinear resize to size x size, equalize, assemble.
MultiChannelImage preprocess_for_network(const GrayImage& raw, int size);

}  // namespace fseg

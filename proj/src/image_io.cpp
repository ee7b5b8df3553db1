#include "fseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace fseg {

namespace {

bool has_suffix(const std::string& s, const char* suffix) {
  const std::size_t n = std::strlen(suffix);
  if (s.size() < n) return false;
  std::string tail = s.substr(s.size() - n);
  std::transform(tail.begin(), tail.end(), tail.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return tail == suffix;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes any libpng-supported file to packed RGB8.
void read_png_rgb(const std::string& path, int& width, int& height,
                  std::vector<std::uint8_t>& rgb) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path);

  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path);
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG decode error in " + path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalize every input variant to 8-bit RGB.
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  width = int(png_get_image_width(png, info));
  height = int(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != std::size_t(width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unexpected PNG row layout in " + path);
  }

  rgb.assign(std::size_t(width) * height * 3, 0);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[std::size_t(y)] = rgb.data() + std::size_t(y) * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

void write_png_rows(const std::string& path, int width, int height, int color_type,
                    const std::uint8_t* data, std::size_t stride,
                    const png_color* palette, int palette_size) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot create " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode error for " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_PLTE(png, info, const_cast<png_color*>(palette), palette_size);
  }
  png_write_info(png, info);

  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[std::size_t(y)] = const_cast<png_bytep>(data + std::size_t(y) * stride);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);

  auto next_token = [&is, &path]() {
    std::string tok;
    while (is) {
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
    is >> tok;
    if (tok.empty()) throw std::runtime_error("truncated PGM header in " + path);
    return tok;
  };

  if (next_token() != "P5") throw std::runtime_error("unsupported PGM variant in " + path);
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PGM extents in " + path);
  if (maxval <= 0 || maxval > 255) throw std::runtime_error("only 8-bit PGM supported: " + path);
  is.get();  // single whitespace after maxval

  GrayImage img(w, h);
  is.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (std::size_t(is.gcount()) != img.pixels.size()) {
    throw std::runtime_error("truncated PGM data in " + path);
  }
  return img;
}

}  // namespace

GrayImage read_gray(const std::string& path) {
  if (has_suffix(path, ".pgm")) return read_pgm(path);

  int w = 0, h = 0;
  std::vector<std::uint8_t> rgb;
  read_png_rgb(path, w, h, rgb);
  GrayImage img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double r = rgb[i * 3], g = rgb[i * 3 + 1], b = rgb[i * 3 + 2];
    img.pixels[i] = std::uint8_t(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
  }
  return img;
}

void write_gray_png(const std::string& path, const GrayImage& img) {
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("write_gray_png: empty image");
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, img.pixels.data(),
                 std::size_t(img.width), nullptr, 0);
}

void write_pgm(const std::string& path, const GrayImage& img) {
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("write_pgm: empty image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot create " + path);
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (!os) throw std::runtime_error("write failed for " + path);
}

LabelMap read_label_png(const std::string& path) {
  int w = 0, h = 0;
  std::vector<std::uint8_t> rgb;
  read_png_rgb(path, w, h, rgb);

  LabelMap map(w, h);
  for (std::size_t i = 0; i < map.size(); ++i) {
    int cls = -1;
    for (int c = 0; c < kNumClasses; ++c) {
      if (rgb[i * 3] == kClassPalette[std::size_t(c)][0] &&
          rgb[i * 3 + 1] == kClassPalette[std::size_t(c)][1] &&
          rgb[i * 3 + 2] == kClassPalette[std::size_t(c)][2]) {
        cls = c;
        break;
      }
    }
    if (cls < 0) {
      throw std::runtime_error("pixel color outside the 5-class palette in " + path);
    }
    map.labels[i] = std::uint8_t(cls);
  }
  return map;
}

void write_label_png(const std::string& path, const LabelMap& map) {
  if (map.width <= 0 || map.height <= 0) throw std::invalid_argument("write_label_png: empty map");
  for (std::uint8_t v : map.labels) {
    if (v >= kNumClasses) throw std::invalid_argument("write_label_png: label out of range");
  }
  png_color palette[kNumClasses];
  for (int c = 0; c < kNumClasses; ++c) {
    palette[c].red = kClassPalette[std::size_t(c)][0];
    palette[c].green = kClassPalette[std::size_t(c)][1];
    palette[c].blue = kClassPalette[std::size_t(c)][2];
  }
  write_png_rows(path, map.width, map.height, PNG_COLOR_TYPE_PALETTE, map.labels.data(),
                 std::size_t(map.width), palette, kNumClasses);
}

void write_overlay_png(const std::string& path, const GrayImage& img, const LabelMap& map) {
  if (img.width != map.width || img.height != map.height) {
    throw std::invalid_argument("write_overlay_png: image and label extents differ");
  }
  std::vector<std::uint8_t> rgb(img.size() * 3);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const auto& color = kClassPalette[map.labels[i] % kNumClasses];
    for (int c = 0; c < 3; ++c) {
      rgb[i * 3 + std::size_t(c)] = std::uint8_t((int(img.pixels[i]) + int(color[std::size_t(c)])) / 2);
    }
  }
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_RGB, rgb.data(),
                 std::size_t(img.width) * 3, nullptr, 0);
}

void write_plane_png(const std::string& path, const Plane& plane) {
  if (plane.width <= 0 || plane.height <= 0) throw std::invalid_argument("write_plane_png: empty plane");
  const auto [mn_it, mx_it] = std::minmax_element(plane.values.begin(), plane.values.end());
  const double mn = *mn_it, mx = *mx_it;
  GrayImage img(plane.width, plane.height);
  if (mx > mn) {
    for (std::size_t i = 0; i < plane.size(); ++i) {
      img.pixels[i] = std::uint8_t(std::lround((plane.values[i] - mn) / (mx - mn) * 255.0));
    }
  }
  write_gray_png(path, img);
}

}  // namespace fseg

#include "fseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fseg {

namespace {

constexpr char kMagic[5] = {'F', 'S', 'E', 'G', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
      (std::uint32_t(b[3]) << 24);
  return true;
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

bool get_f32(std::istream& is, float& f) {
  std::uint32_t bits;
  if (!get_u32(is, bits)) return false;
  std::memcpy(&f, &bits, 4);
  return true;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  for (const auto& p : params) {
    put_u32(os, std::uint32_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    const Shape& s = p.tensor.shape();
    put_u32(os, std::uint32_t(s.size()));
    for (int d : s) put_u32(os, std::uint32_t(d));
    for (double v : p.tensor.data()) put_f32(os, float(v));
  }
  if (!os) throw std::runtime_error("write failed for checkpoint: " + path);
}

std::vector<NamedParam> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  }
  std::vector<NamedParam> out;
  std::uint32_t name_len;
  while (get_u32(is, name_len)) {
    if (name_len > 4096) throw std::runtime_error("corrupt checkpoint (name length): " + path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw std::runtime_error("truncated checkpoint record in " + path);
    }
    std::uint32_t rank;
    if (!get_u32(is, rank) || rank > 8) {
      throw std::runtime_error("corrupt checkpoint (rank) in " + path);
    }
    Shape shape(rank);
    std::int64_t numel = 1;
    for (auto& d : shape) {
      std::uint32_t e;
      if (!get_u32(is, e) || e == 0) {
        throw std::runtime_error("corrupt checkpoint (extent) in " + path);
      }
      d = int(e);
      numel *= d;
    }
    std::vector<double> values(static_cast<std::size_t>(numel));
    for (auto& v : values) {
      float f;
      if (!get_f32(is, f)) throw std::runtime_error("truncated checkpoint values in " + path);
      v = double(f);
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

}  // namespace fseg

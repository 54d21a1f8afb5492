#include "svdd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace svdd::autograd {
namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

std::uint16_t get_u16(std::istream& is, const std::string& path) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) {
    throw std::runtime_error("checkpoint: truncated file " + path);
  }
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("checkpoint: truncated file " + path);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write("SVDD", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.shape().size()));
    for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (float f : t.value()) put_f32(os, f);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SVDD", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = get_u32(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  }
  const std::uint32_t count = get_u32(is, path);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = get_u16(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw std::runtime_error("checkpoint: truncated file " + path);
    }
    const int rank = is.get();
    if (rank < 0) throw std::runtime_error("checkpoint: truncated file " + path);
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = get_u32(is, path);
    std::vector<float> data(static_cast<std::size_t>(numel(shape)));
    for (auto& f : data) {
      const std::uint32_t bits = get_u32(is, path);
      std::memcpy(&f, &bits, 4);
    }
    out.emplace_back(std::move(name), Tensor::leaf(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace svdd::autograd

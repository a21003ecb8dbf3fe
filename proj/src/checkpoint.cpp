#include "ganimc/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

#include "ganimc/error.hpp"

namespace ganimc::ckpt {
namespace {

constexpr char kMagic[4] = {'N', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* p, size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n)
    throw IoError("failed writing checkpoint " + path);
}

void write_u8(std::FILE* f, uint8_t v, const std::string& path) {
  write_bytes(f, &v, 1, path);
}

void write_u16(std::FILE* f, uint16_t v, const std::string& path) {
  uint8_t b[2] = {uint8_t(v & 0xff), uint8_t(v >> 8)};
  write_bytes(f, b, 2, path);
}

void write_u32(std::FILE* f, uint32_t v, const std::string& path) {
  uint8_t b[4] = {uint8_t(v & 0xff), uint8_t((v >> 8) & 0xff),
                  uint8_t((v >> 16) & 0xff), uint8_t(v >> 24)};
  write_bytes(f, b, 4, path);
}

void write_f32(std::FILE* f, float v, const std::string& path) {
  write_u32(f, std::bit_cast<uint32_t>(v), path);
}

void read_bytes(std::FILE* f, void* p, size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n)
    throw FormatError("checkpoint " + path + " is truncated or corrupt");
}

uint8_t read_u8(std::FILE* f, const std::string& path) {
  uint8_t v;
  read_bytes(f, &v, 1, path);
  return v;
}

uint16_t read_u16(std::FILE* f, const std::string& path) {
  uint8_t b[2];
  read_bytes(f, b, 2, path);
  return uint16_t(b[0] | (uint16_t(b[1]) << 8));
}

uint32_t read_u32(std::FILE* f, const std::string& path) {
  uint8_t b[4];
  read_bytes(f, b, 4, path);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

float read_f32(std::FILE* f, const std::string& path) {
  return std::bit_cast<float>(read_u32(f, path));
}

}  // namespace

void Checkpoint::add(const std::string& name, const TensorPtr& t) {
  if (!t) throw ContractError("null tensor for checkpoint entry " + name);
  if (name.empty() || name.size() > 0xffff)
    throw ContractError("checkpoint entry name must be 1..65535 bytes");
  if (find(name)) throw ContractError("duplicate checkpoint entry " + name);
  tensors.emplace_back(name, t);
}

TensorPtr Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  return nullptr;
}

void save(const Checkpoint& c, const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open " + path + " for writing");
  write_bytes(f.get(), kMagic, 4, path);
  write_u32(f.get(), kVersion, path);
  write_u32(f.get(), uint32_t(c.tensors.size()), path);
  for (const auto& [name, t] : c.tensors) {
    write_u16(f.get(), uint16_t(name.size()), path);
    write_bytes(f.get(), name.data(), name.size(), path);
    write_u8(f.get(), kDtypeF32, path);
    write_u8(f.get(), uint8_t(t->shape.size()), path);
    for (int e : t->shape) write_u32(f.get(), uint32_t(e), path);
    for (float v : t->data) write_f32(f.get(), v, path);
  }
  write_u32(f.get(), c.iteration, path);
  write_u32(f.get(), uint32_t(c.config.size()), path);
  write_bytes(f.get(), c.config.data(), c.config.size(), path);
  if (std::fflush(f.get()) != 0) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  read_bytes(f.get(), magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path + " is not a checkpoint file (bad magic)");
  uint32_t version = read_u32(f.get(), path);
  if (version != kVersion)
    throw FormatError("checkpoint " + path + " has unsupported version " +
                      std::to_string(version));
  Checkpoint c;
  uint32_t count = read_u32(f.get(), path);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = read_u16(f.get(), path);
    std::string name(name_len, '\0');
    read_bytes(f.get(), name.data(), name_len, path);
    uint8_t dtype = read_u8(f.get(), path);
    if (dtype != kDtypeF32)
      throw FormatError("checkpoint " + path + " entry " + name +
                        " has unsupported dtype " + std::to_string(dtype));
    uint8_t rank = read_u8(f.get(), path);
    std::vector<int> shape(rank);
    size_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      shape[d] = int(read_u32(f.get(), path));
      numel *= size_t(shape[d]);
    }
    auto t = make_tensor(shape);
    for (size_t j = 0; j < numel; ++j) t->data[j] = read_f32(f.get(), path);
    c.add(name, t);
  }
  c.iteration = read_u32(f.get(), path);
  uint32_t config_len = read_u32(f.get(), path);
  c.config.resize(config_len);
  read_bytes(f.get(), c.config.data(), config_len, path);
  return c;
}

}  // namespace ganimc::ckpt

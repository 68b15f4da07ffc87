#include "textpolicy/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace textpolicy {

namespace {

constexpr char kMagic[5] = {'N', 'T', 'C', 'K', '1'};

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("checkpoint " + path + ": truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_checkpoint(const std::string& path,
                      const std::vector<std::pair<std::string, const Matrix*>>& entries) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint " + path + ": cannot open for write");
    out.write(kMagic, 5);
    put_u32(out, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, m] : entries) {
      put_u32(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(out, 2);
      put_u32(out, static_cast<uint32_t>(m->rows()));
      put_u32(out, static_cast<uint32_t>(m->cols()));
      out.write(reinterpret_cast<const char*>(m->data()),
                static_cast<std::streamsize>(sizeof(float) * m->size()));
    }
    if (!out) throw DataError("checkpoint " + path + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

void write_checkpoint(const std::string& path,
                      const std::vector<const Parameter*>& params) {
  std::vector<std::pair<std::string, const Matrix*>> entries;
  entries.reserve(params.size());
  for (const Parameter* p : params) entries.emplace_back(p->name, &p->value);
  write_checkpoint(path, entries);
}

std::vector<std::pair<std::string, Matrix>> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint " + path + ": cannot open");
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, kMagic, 5) != 0) {
    throw DataError("checkpoint " + path + ": bad magic");
  }
  uint32_t count = get_u32(in, path);
  std::vector<std::pair<std::string, Matrix>> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = get_u32(in, path);
    if (name_len > (1u << 20)) throw DataError("checkpoint " + path + ": absurd name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw DataError("checkpoint " + path + ": truncated");
    uint32_t rank = get_u32(in, path);
    if (rank < 1 || rank > 2) {
      throw DataError("checkpoint " + path + ": entry " + name + " has rank " +
                      std::to_string(rank));
    }
    uint32_t rows = 1, cols;
    if (rank == 2) {
      rows = get_u32(in, path);
      cols = get_u32(in, path);
    } else {
      cols = get_u32(in, path);
    }
    if (static_cast<uint64_t>(rows) * cols > (1ull << 28)) {
      throw DataError("checkpoint " + path + ": entry " + name + " too large");
    }
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * m.size()));
    if (!in) throw DataError("checkpoint " + path + ": truncated payload for " + name);
    entries.emplace_back(std::move(name), std::move(m));
  }
  return entries;
}

void load_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
  auto entries = read_checkpoint(path);
  std::map<std::string, const Matrix*> by_name;
  for (const auto& [name, m] : entries) by_name[name] = &m;
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw DataError("checkpoint " + path + ": missing entry " + p->name);
    }
    const Matrix& m = *it->second;
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
      throw DataError("checkpoint " + path + ": shape mismatch for " + p->name);
    }
    p->value = m;
    p->zero_grad();
  }
}

}  // namespace textpolicy

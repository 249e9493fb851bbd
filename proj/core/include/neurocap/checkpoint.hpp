#pragma once

#include "neurocap/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace neurocap {

// Single-file container of named blobs.
//
// Layout (all integers little-endian):
//   magic    "NCAPCKPT"            8 bytes
//   version  u32                   currently 1
//   count    u32                   number of blobs
//   blobs    count x {
//              name_len u32, name bytes,
//              kind u8 (0 = f64 tensor, 1 = raw bytes),
//              [tensor] rows u64, cols u64, rows*cols f64 row-major
//              [bytes]  len u64, bytes
//            }
//   crc32    u32 over every preceding byte
//
// Blobs are written in name order, so identical contents give identical files.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put_tensor(const std::string& name, const ag::Matrix& value);
  void put_bytes(const std::string& name, std::string bytes);

  bool has(const std::string& name) const;
  const ag::Matrix& tensor(const std::string& name) const;
  const std::string& bytes(const std::string& name) const;
  std::vector<std::string> names() const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& data);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, ag::Matrix> tensors_;
  std::map<std::string, std::string> bytes_;
};

// CRC-32 (zlib polynomial) of a file's contents, as 8 lowercase hex digits.
std::string file_crc32_hex(const std::filesystem::path& path);
std::uint32_t crc32_of(const std::string& data);

}  // namespace neurocap

#include "neurocap/checkpoint.hpp"

#include "neurocap/error.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace neurocap {

namespace {

constexpr char kMagic[8] = {'N', 'C', 'A', 'P', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  void need(std::size_t n) const {
    if (pos_ + n > end_) throw DataError("corrupt checkpoint: unexpected end of data");
  }
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(const std::string& data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* bytes = reinterpret_cast<const Bytef*>(data.data());
  std::size_t left = data.size();
  while (left > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, bytes, chunk);
    bytes += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string file_crc32_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::ostringstream hex;
  hex << std::hex << std::setw(8) << std::setfill('0') << crc32_of(buf.str());
  return hex.str();
}

void Checkpoint::put_tensor(const std::string& name, const ag::Matrix& value) {
  bytes_.erase(name);
  tensors_[name] = value;
}

void Checkpoint::put_bytes(const std::string& name, std::string bytes) {
  tensors_.erase(name);
  bytes_[name] = std::move(bytes);
}

bool Checkpoint::has(const std::string& name) const {
  return tensors_.count(name) != 0 || bytes_.count(name) != 0;
}

const ag::Matrix& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DataError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::bytes(const std::string& name) const {
  auto it = bytes_.find(name);
  if (it == bytes_.end()) throw DataError("checkpoint has no blob '" + name + "'");
  return it->second;
}

std::vector<std::string> Checkpoint::names() const {
  std::map<std::string, int> all;
  for (const auto& [k, v] : tensors_) all[k] = 0;
  for (const auto& [k, v] : bytes_) all[k] = 1;
  std::vector<std::string> out;
  for (const auto& [k, v] : all) out.push_back(k);
  return out;
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors_.size() + bytes_.size()));
  for (const auto& name : names()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    if (auto it = tensors_.find(name); it != tensors_.end()) {
      out.push_back(0);
      put_u64(out, static_cast<std::uint64_t>(it->second.rows()));
      put_u64(out, static_cast<std::uint64_t>(it->second.cols()));
      for (Eigen::Index i = 0; i < it->second.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, it->second.data() + i, sizeof(bits));
        put_u64(out, bits);
      }
    } else {
      const std::string& b = bytes_.at(name);
      out.push_back(1);
      put_u64(out, b.size());
      out += b;
    }
  }
  put_u32(out, crc32_of(out));
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& data) {
  if (data.size() < sizeof(kMagic) + 12) throw DataError("corrupt checkpoint: file too short");
  if (std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("corrupt checkpoint: bad magic");
  }
  const std::size_t body = data.size() - 4;
  Reader tail(data, data.size());
  tail.take(body);
  const auto stored = static_cast<std::uint32_t>(tail.uint(4));
  if (stored != crc32_of(data.substr(0, body))) {
    throw DataError("corrupt checkpoint: checksum mismatch");
  }

  Reader r(data, body);
  r.take(sizeof(kMagic));
  const auto version = r.uint(4);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.uint(4);
  Checkpoint ckpt;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.uint(4);
    std::string name = r.take(name_len);
    const auto kind = r.uint(1);
    if (kind == 0) {
      const auto rows = r.uint(8), cols = r.uint(8);
      if (cols != 0 && rows > (body - r.pos()) / 8 / cols) {
        throw DataError("corrupt checkpoint: tensor '" + name + "' exceeds file size");
      }
      ag::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index k = 0; k < m.size(); ++k) {
        const std::uint64_t bits = r.uint(8);
        std::memcpy(m.data() + k, &bits, sizeof(bits));
      }
      ckpt.tensors_[name] = std::move(m);
    } else if (kind == 1) {
      const auto len = r.uint(8);
      ckpt.bytes_[name] = r.take(len);
    } else {
      throw DataError("corrupt checkpoint: unknown blob kind for '" + name + "'");
    }
  }
  if (r.pos() != body) throw DataError("corrupt checkpoint: trailing bytes");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    const std::string data = serialize();
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace neurocap

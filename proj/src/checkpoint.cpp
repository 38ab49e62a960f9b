#include "paid/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "paid/errors.hpp"

namespace paid {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes little-endian");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    out_.insert(out_.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError("checkpoint: truncated data");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(std::span<const Tensor> tensors) {
  if (tensors.size() > std::numeric_limits<std::uint32_t>::max())
    throw IoError("checkpoint: too many tensors");
  Writer w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw IoError("checkpoint: tensor name too long: " + t.name.substr(0, 32));
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max())
      throw IoError("checkpoint: rank too large for " + t.name);
    std::size_t count = 1;
    for (std::size_t d : t.shape) count *= d;
    if (count != t.values.size())
      throw IoError("checkpoint: payload size does not match shape for " + t.name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.put<std::uint64_t>(d);
    w.put_bytes(t.values.data(), t.values.size() * sizeof(double));
  }
  const std::uint32_t crc = crc32_of(w.bytes());
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

std::vector<Tensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 12) throw IoError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw IoError("checkpoint: bad magic");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32_of(body) != stored) throw IoError("checkpoint: CRC mismatch");

  Reader r(body);
  char magic[8];
  r.get_bytes(magic, 8);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<Tensor> out;
  out.reserve(std::min<std::size_t>(count, 4096));
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    const auto len = r.get<std::uint16_t>();
    t.name.resize(len);
    r.get_bytes(t.name.data(), len);
    const auto rank = r.get<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>();
      if (d != 0 && n > r.remaining() / d) throw IoError("checkpoint: truncated data");
      n *= d;
      t.shape.push_back(static_cast<std::size_t>(d));
    }
    if (n > r.remaining() / sizeof(double)) throw IoError("checkpoint: truncated data");
    t.values.resize(n);
    r.get_bytes(t.values.data(), n * sizeof(double));
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw IoError("checkpoint: trailing bytes");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  write_file_bytes(path, encode_checkpoint(tensors));
}

std::vector<Tensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace paid

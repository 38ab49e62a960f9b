#pragma once

// Binary checkpoint format, all integers little-endian:
//
//   "PAIDCKPT"            8 bytes
//   version               u32 (= 1)
//   tensor count          u32
//   per tensor:
//     name length         u16, then the UTF-8 name
//     rank                u8, then rank x u64 dims
//     payload             f64 x prod(dims), row-major
//   CRC32                 u32 over every preceding byte

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "paid/nnmodel.hpp"

namespace paid {

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'I', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Tensor = Network::Tensor;

std::vector<std::uint8_t> encode_checkpoint(std::span<const Tensor> tensors);
// Throws IoError on bad magic, unknown version, truncation, trailing bytes
// or CRC mismatch.
std::vector<Tensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace paid

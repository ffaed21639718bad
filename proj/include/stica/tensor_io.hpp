#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stica/tensor.hpp"

namespace stica {

// Binary tensor container shared by checkpoints and data exports.
//
//   "STCA"  u16 version  u32 count
//   per tensor: u16 name length, UTF-8 name, u8 rank, u32 extent × rank,
//               float32 little-endian × numel
//   u64 step  u64 epoch  u32 rng-state length, rng-state bytes
//   32-byte config digest
//
// Values are stored as 32-bit floats; reading widens them back to doubles.
struct TensorFile {
  static constexpr std::uint16_t kVersion = 1;

  std::vector<std::pair<std::string, Tensor>> tensors;
  std::uint64_t step = 0, epoch = 0;
  std::string rng_state;
  std::array<std::uint8_t, 32> digest{};

  const Tensor& find(const std::string& name) const;
};

void write_tensor_file(const std::string& path, const TensorFile& file);
// Throws IoError naming the defect: missing file, bad magic, unsupported
// version, truncation or trailing bytes.
TensorFile read_tensor_file(const std::string& path);

std::array<std::uint8_t, 32> sha256(const std::string& text);
std::string hex(std::span<const std::uint8_t> bytes);

// Rounds every value through float32, the precision files store.
void round_to_float32(std::span<double> values);

}  // namespace stica

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crcfp/memory_bank.hpp"
#include "crcfp/tensor.hpp"

namespace crcfp {

/// Contents of a checkpoint file.
///
/// Binary layout, all integers little-endian:
///   magic "CRCFPCKP" (8 bytes), u32 schema, i64 epoch, i64 step,
///   string config_yaml,
///   u32 count, then count x named tensor  (model parameters)
///   u32 count, then count x named tensor  (optimizer state)
///   u8 has_bank, [u64 capacity, u32 count, count x bank entry]
/// where string = u32 length + bytes, named tensor = string name,
/// 4 x i32 shape (n,h,w,c), numel x f64 values, and bank entry =
/// i32 label, f64 confidence, i64 step, u32 dim, dim x f64.
struct Checkpoint {
  static constexpr std::uint32_t kSchema = 1;

  std::uint32_t schema = kSchema;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  std::string config_yaml;
  std::vector<std::pair<std::string, Tensor>> parameters;
  std::vector<std::pair<std::string, Tensor>> optimizer_state;
  std::optional<std::size_t> bank_capacity;
  std::vector<BankEntry> bank;
};

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace crcfp

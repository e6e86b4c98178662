#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "vlpd/array.hpp"

namespace vlpd {

// Binary tensor container:
//   "VLPD" | u8 rank | rank x u32 LE dims | u8 dtype (0=f32, 1=f64) | LE payload
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

using AnyArray = std::variant<DenseArray, DenseArrayF64>;

std::vector<std::uint8_t> encode_tensor(const DenseArray& arr);
std::vector<std::uint8_t> encode_tensor(const DenseArrayF64& arr);
AnyArray decode_tensor(std::span<const std::uint8_t> bytes);

void save_tensor_container(const DenseArray& arr, const std::filesystem::path& path);
void save_tensor_container(const DenseArrayF64& arr, const std::filesystem::path& path);
AnyArray load_tensor_container(const std::filesystem::path& path);

// Loads and converts to T regardless of the stored dtype.
template <typename T>
Array<T> load_tensor_as(const std::filesystem::path& path) {
  return std::visit([](const auto& a) { return a.template cast<T>(); }, load_tensor_container(path));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vlpd

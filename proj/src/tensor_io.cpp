#include "vlpd/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace vlpd {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor container I/O assumes a little-endian host");

constexpr char kMagic[4] = {'V', 'L', 'P', 'D'};

template <typename T>
std::vector<std::uint8_t> encode_impl(const Array<T>& arr, DType dtype) {
  if (arr.rank() > std::numeric_limits<std::uint8_t>::max()) {
    throw ShapeError("tensor rank " + std::to_string(arr.rank()) + " exceeds 255");
  }
  std::vector<std::uint8_t> out;
  out.reserve(4 + 1 + 4 * arr.rank() + 1 + sizeof(T) * arr.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(static_cast<std::uint8_t>(arr.rank()));
  for (auto d : arr.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw ShapeError("tensor dim " + std::to_string(d) + " exceeds u32");
    }
    const auto v = static_cast<std::uint32_t>(d);
    std::uint8_t b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
  }
  out.push_back(static_cast<std::uint8_t>(dtype));
  const auto* p = reinterpret_cast<const std::uint8_t*>(arr.data());
  out.insert(out.end(), p, p + sizeof(T) * arr.size());
  return out;
}

template <typename T>
Array<T> decode_payload(const Dims& dims, std::span<const std::uint8_t> payload) {
  const std::size_t n = dims_product(dims);
  const std::size_t need = n * sizeof(T);
  if (payload.size() < need) {
    throw FormatError("payload", "truncated: expected " + std::to_string(need) + " bytes, found " +
                                     std::to_string(payload.size()));
  }
  if (payload.size() > need) {
    throw FormatError("payload", std::to_string(payload.size() - need) + " trailing bytes");
  }
  std::vector<T> values(n);
  if (need) std::memcpy(values.data(), payload.data(), need);
  return Array<T>(dims, std::move(values));
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const DenseArray& arr) { return encode_impl(arr, DType::kF32); }
std::vector<std::uint8_t> encode_tensor(const DenseArrayF64& arr) { return encode_impl(arr, DType::kF64); }

AnyArray decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("magic", "expected \"VLPD\"");
  }
  std::size_t pos = 4;
  if (bytes.size() < pos + 1) throw FormatError("rank", "missing rank byte");
  const std::size_t rank = bytes[pos++];
  Dims dims(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (bytes.size() < pos + 4) throw FormatError("dims", "truncated at dim " + std::to_string(i));
    std::uint32_t d;
    std::memcpy(&d, bytes.data() + pos, 4);
    pos += 4;
    if (d == 0) throw FormatError("dims", "dim " + std::to_string(i) + " is zero");
    dims[i] = d;
  }
  if (bytes.size() < pos + 1) throw FormatError("dtype", "missing dtype code");
  const std::uint8_t code = bytes[pos++];
  const auto payload = bytes.subspan(pos);
  switch (static_cast<DType>(code)) {
    case DType::kF32:
      return decode_payload<float>(dims, payload);
    case DType::kF64:
      return decode_payload<double>(dims, payload);
  }
  throw FormatError("dtype", "unknown dtype code " + std::to_string(code));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

void save_tensor_container(const DenseArray& arr, const std::filesystem::path& path) {
  write_file_bytes(path, encode_tensor(arr));
}

void save_tensor_container(const DenseArrayF64& arr, const std::filesystem::path& path) {
  write_file_bytes(path, encode_tensor(arr));
}

AnyArray load_tensor_container(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_tensor(bytes);
}

}  // namespace vlpd

/**
 * @file checkpoint.hpp
 * @brief Self-describing binary parameter container.
 *
 * Layout (all integers little-endian):
 *   magic "FSCK" | u32 version (1) | u64 entry count
 *   per entry: u32 name length | name bytes | u32 ndim | i32 dims...
 *              | u8 dtype (4 = float32, 8 = float64) | u64 numel | raw values
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fewshot/nn.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void require_little_endian() {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  if constexpr (std::endian::native != std::endian::little)
    throw TensorError("checkpoint I/O requires a little-endian host");
}

template <class V>
void write_pod(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw TensorError("checkpoint file truncated");
  return v;
}

}  // namespace detail

template <class T>
void save_state(const std::string& path, const StateDict<T>& state) {
  detail::require_little_endian();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TensorError("cannot open checkpoint file for writing: " + path);
  os.write("FSCK", 4);
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::write_pod<std::uint64_t>(os, state.size());
  for (const auto& e : state) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) detail::write_pod<std::int32_t>(os, d);
    detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T)));
    detail::write_pod<std::uint64_t>(os, e.data.size());
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(T)));
  }
  if (!os) throw TensorError("failed writing checkpoint: " + path);
}

template <class T>
StateDict<T> load_state(const std::string& path) {
  detail::require_little_endian();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("cannot open checkpoint file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FSCK", 4) != 0)
    throw TensorError("not a checkpoint file: " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw TensorError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const auto count = detail::read_pod<std::uint64_t>(is);
  StateDict<T> state;
  state.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    StateEntry<T> e;
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const auto ndim = detail::read_pod<std::uint32_t>(is);
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = detail::read_pod<std::int32_t>(is);
    const auto dtype = detail::read_pod<std::uint8_t>(is);
    const auto numel = detail::read_pod<std::uint64_t>(is);
    if (numel != shape_numel(e.shape))
      throw TensorError("corrupt checkpoint entry '" + e.name + "': " + std::to_string(numel) +
                        " values for shape " + shape_str(e.shape));
    e.data.resize(numel);
    if (dtype == sizeof(T)) {
      is.read(reinterpret_cast<char*>(e.data.data()),
              static_cast<std::streamsize>(numel * sizeof(T)));
    } else if (dtype == 4) {
      std::vector<float> tmp(numel);
      is.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(numel * 4));
      for (std::uint64_t j = 0; j < numel; ++j) e.data[j] = static_cast<T>(tmp[j]);
    } else if (dtype == 8) {
      std::vector<double> tmp(numel);
      is.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(numel * 8));
      for (std::uint64_t j = 0; j < numel; ++j) e.data[j] = static_cast<T>(tmp[j]);
    } else {
      throw TensorError("unknown dtype tag " + std::to_string(dtype) + " in " + path);
    }
    if (!is) throw TensorError("checkpoint file truncated: " + path);
    state.push_back(std::move(e));
  }
  return state;
}

}  // namespace fewshot

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/io.hpp"
#include "slotalign/nn.hpp"

namespace slotalign::nn {

// Checkpoint container: "SFAW", u32 version, u32 tensor count, then per
// tensor u16 name length, UTF-8 name, u8 rank, rank x u32 dims, float32
// payload. All little-endian. Tensors here are always rank 2.
inline constexpr char kCheckpointMagic[4] = {'S', 'F', 'A', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::string encode_checkpoint(const ParameterSet<T>& params) {
  std::string buf(kCheckpointMagic, 4);
  le::put<std::uint32_t>(buf, kCheckpointVersion);
  le::put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > UINT16_MAX) throw Error(ErrorKind::kIo, "tensor name too long");
    le::put<std::uint16_t>(buf, static_cast<std::uint16_t>(p.name.size()));
    buf += p.name;
    le::put<std::uint8_t>(buf, 2);
    le::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.rows()));
    le::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.cols()));
    for (T v : p.value.flat()) le::put_f32(buf, static_cast<float>(v));
  }
  return buf;
}

/// Loads every tensor into the same-named parameter; names and shapes must
/// match the model exactly.
template <typename T>
void decode_checkpoint(std::string_view bytes, ParameterSet<T>& params, const std::string& what) {
  le::Reader r(bytes, what);
  if (r.get_bytes(4) != std::string_view(kCheckpointMagic, 4))
    throw Error(ErrorKind::kParse, what + ": bad checkpoint magic");
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion)
    throw Error(ErrorKind::kParse, what + ": unsupported checkpoint version " + std::to_string(v));
  const auto count = r.get<std::uint32_t>();
  if (count != params.size())
    throw Error(ErrorKind::kParse, what + ": tensor count " + std::to_string(count) +
                                       " does not match model (" + std::to_string(params.size()) + ")");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    const std::string name = r.get_bytes(len);
    if (!params.contains(name)) throw Error(ErrorKind::kParse, what + ": unknown tensor " + name);
    auto& p = params.at(name);
    const auto rank = r.get<std::uint8_t>();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    std::size_t total = 1;
    for (auto d : dims) total *= d;
    const std::size_t rows = rank == 0 ? 1 : dims[0];
    if (total != p.value.size() || (rank >= 1 && rows != p.value.rows()))
      throw Error(ErrorKind::kParse, what + ": shape mismatch for " + name);
    r.need(total * 4);
    for (auto& v : p.value.flat()) v = static_cast<T>(r.get_f32());
  }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params) {
  write_file_atomic(path, encode_checkpoint(params));
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params) {
  decode_checkpoint(read_file(path), params, path.string());
}

}  // namespace slotalign::nn

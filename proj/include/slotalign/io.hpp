#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slotalign/corpus.hpp"
#include "slotalign/error.hpp"

namespace slotalign {

namespace fs = std::filesystem;

namespace le {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  } else {
    return v;
  }
}

template <typename U>
void put(std::string& buf, U v) {
  v = byteswap_if_big(v);
  char raw[sizeof(U)];
  std::memcpy(raw, &v, sizeof(U));
  buf.append(raw, sizeof(U));
}

inline void put_f32(std::string& buf, float f) { put(buf, std::bit_cast<std::uint32_t>(f)); }

/// Bounds-checked little-endian cursor over a byte buffer.
class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return byteswap_if_big(v);
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n)
      throw Error(ErrorKind::kIo, what_ + ": truncated (need " + std::to_string(n) +
                                      " bytes at offset " + std::to_string(pos_) + ")");
  }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace le

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary sibling and rename, so readers never observe a
/// partially written file.
inline void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::kIo, "rename to " + path.string() + " failed: " + ec.message());
}

// Feature file: "SFA1", u32 version=1, u32 num_frames, u32 feat_dim, then
// num_frames*feat_dim little-endian float32, frame-major.
inline constexpr char kFeatureMagic[4] = {'S', 'F', 'A', '1'};
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::string encode_features(const Matrix<float>& frames) {
  std::string buf(kFeatureMagic, 4);
  le::put<std::uint32_t>(buf, kFeatureVersion);
  le::put<std::uint32_t>(buf, static_cast<std::uint32_t>(frames.rows()));
  le::put<std::uint32_t>(buf, static_cast<std::uint32_t>(frames.cols()));
  buf.reserve(buf.size() + frames.size() * 4);
  for (float v : frames.flat()) le::put_f32(buf, v);
  return buf;
}

inline Matrix<float> decode_features(std::string_view bytes, const std::string& what) {
  le::Reader r(bytes, what);
  if (r.get_bytes(4) != std::string_view(kFeatureMagic, 4))
    throw Error(ErrorKind::kParse, what + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kFeatureVersion)
    throw Error(ErrorKind::kParse, what + ": unsupported version " + std::to_string(version));
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  r.need(static_cast<std::size_t>(rows) * cols * 4);
  Matrix<float> m(rows, cols);
  for (auto& v : m.flat()) v = r.get_f32();
  return m;
}

inline void write_features(const fs::path& path, const Matrix<float>& frames) {
  write_file_atomic(path, encode_features(frames));
}

inline Matrix<float> read_features(const fs::path& path) {
  return decode_features(read_file(path), path.string());
}

namespace detail {

inline nlohmann::json spans_to_json(const std::vector<TokenSpan>& spans) {
  auto arr = nlohmann::json::array();
  for (const auto& s : spans) arr.push_back({s.token_id, s.start_ms, s.end_ms});
  return arr;
}

inline std::vector<TokenSpan> spans_from_json(const nlohmann::json& arr) {
  std::vector<TokenSpan> out;
  for (const auto& e : arr) {
    if (!e.is_array() || e.size() != 3) throw std::invalid_argument("span must be [tok,start,end]");
    out.push_back({e.at(0).get<std::int32_t>(), e.at(1).get<Millis>(), e.at(2).get<Millis>()});
  }
  return out;
}

}  // namespace detail

/// One manifest line without the frame payload.
struct ManifestRecord {
  std::string id;
  std::string feat_path;
  std::size_t num_frames = 0;
  Millis frame_period_ms = 0;
  std::vector<std::int32_t> tokens;
  std::vector<TokenSpan> gold;
  std::vector<TokenSpan> pseudo;
};

inline std::string manifest_line(const ManifestRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["feat_path"] = r.feat_path;
  j["num_frames"] = r.num_frames;
  j["frame_period_ms"] = r.frame_period_ms;
  j["tokens"] = r.tokens;
  j["gold"] = detail::spans_to_json(r.gold);
  j["pseudo"] = detail::spans_to_json(r.pseudo);
  return j.dump();
}

inline ManifestRecord parse_manifest_line(const std::string& line, std::size_t line_no) {
  try {
    const auto j = nlohmann::json::parse(line);
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.feat_path = j.at("feat_path").get<std::string>();
    r.num_frames = j.at("num_frames").get<std::size_t>();
    r.frame_period_ms = j.at("frame_period_ms").get<Millis>();
    r.tokens = j.at("tokens").get<std::vector<std::int32_t>>();
    r.gold = detail::spans_from_json(j.at("gold"));
    r.pseudo = detail::spans_from_json(j.at("pseudo"));
    return r;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kParse, "manifest line " + std::to_string(line_no) + ": " + e.what());
  }
}

/// Writes `<dir>/<manifest name>` plus one feature file per utterance
/// (`<id>.sfa`) next to it. Feature paths are stored relative to the
/// manifest directory.
inline void write_manifest(const fs::path& manifest_path, const std::vector<Utterance>& utts) {
  const fs::path dir = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
  fs::create_directories(dir);
  std::string out;
  for (const auto& u : utts) {
    ManifestRecord r{u.id, u.id + ".sfa", u.num_frames(), u.frame_period_ms,
                     u.tokens, u.gold_spans, u.pseudo_spans};
    write_features(dir / r.feat_path, u.frames);
    out += manifest_line(r);
    out += '\n';
  }
  write_file_atomic(manifest_path, out);
}

inline std::vector<Utterance> read_manifest(const fs::path& manifest_path) {
  const std::string text = read_file(manifest_path);
  const fs::path dir = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
  std::vector<Utterance> utts;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestRecord r = parse_manifest_line(line, line_no);
    const fs::path feat = fs::path(r.feat_path).is_absolute() ? fs::path(r.feat_path) : dir / r.feat_path;
    if (!fs::exists(feat)) throw Error(ErrorKind::kIo, "missing feature file " + feat.string());
    Utterance u;
    u.id = std::move(r.id);
    u.frames = read_features(feat);
    if (u.frames.rows() != r.num_frames)
      throw Error(ErrorKind::kParse, "manifest line " + std::to_string(line_no) +
                                         ": num_frames disagrees with " + feat.string());
    u.frame_period_ms = r.frame_period_ms;
    u.tokens = std::move(r.tokens);
    u.gold_spans = std::move(r.gold);
    u.pseudo_spans = std::move(r.pseudo);
    if (const auto problem = check_utterance(u); !problem.empty())
      throw Error(ErrorKind::kParse, "manifest line " + std::to_string(line_no) + ": " + problem);
    utts.push_back(std::move(u));
  }
  return utts;
}

}  // namespace slotalign

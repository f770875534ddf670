#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/matrix.hpp"
#include "slotalign/rng.hpp"
#include "slotalign/timegrid.hpp"

namespace slotalign {

struct TokenSpan {
  std::int32_t token_id = 0;
  Millis start_ms = 0;
  Millis end_ms = 0;

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct Utterance {
  std::string id;
  Matrix<float> frames;  // [num_frames x feat_dim]
  Millis frame_period_ms = 80;
  std::vector<std::int32_t> tokens;
  std::vector<TokenSpan> gold_spans;
  std::vector<TokenSpan> pseudo_spans;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t feat_dim() const { return frames.cols(); }
  Millis duration_ms() const {
    return static_cast<Millis>(frames.rows()) * frame_period_ms;
  }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

template <typename T>
struct Range {
  T min{};
  T max{};
  bool valid() const { return min <= max; }
  friend bool operator==(const Range&, const Range&) = default;
};

/// Synthetic corpus parameters. The text vocabulary is split into
/// `num_languages` disjoint ranges of `vocab_size` ids each; an utterance
/// draws all of its tokens from one range.
struct CorpusConfig {
  std::int32_t vocab_size = 32;
  std::int32_t num_languages = 2;
  std::int32_t feat_dim = 32;
  double noise_sigma = 0.3;
  Millis frame_period_ms = 80;
  Range<Millis> token_duration_range_ms{80, 320};
  Range<std::int32_t> tokens_per_utt_range{3, 7};
  Range<Millis> mix_target_range_ms{2000, 20000};
  Millis max_duration_ms = 30000;
  std::uint64_t rng_seed = 1234;

  std::int32_t text_vocab_size() const { return vocab_size * num_languages; }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, m); };
    if (vocab_size < 2) fail("vocab_size must be >= 2");
    if (num_languages < 1) fail("num_languages must be >= 1");
    if (feat_dim < 1) fail("feat_dim must be >= 1");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
    if (frame_period_ms <= 0) fail("frame_period_ms must be positive");
    if (!token_duration_range_ms.valid() || token_duration_range_ms.min <= 0)
      fail("token duration range must be non-empty and positive");
    if (!tokens_per_utt_range.valid() || tokens_per_utt_range.min < 1)
      fail("tokens per utterance range must be non-empty and >= 1");
    if (!mix_target_range_ms.valid() || mix_target_range_ms.min <= 0)
      fail("mix target range must be non-empty and positive");
    if (max_duration_ms <= 0) fail("max_duration_ms must be positive");
  }
};

/// Per-vocabulary-entry feature prototypes. Drawn once from the corpus seed,
/// so every utterance of a corpus shares them.
class PrototypeTable {
 public:
  explicit PrototypeTable(const CorpusConfig& cfg)
      : table_(static_cast<std::size_t>(cfg.text_vocab_size()),
               static_cast<std::size_t>(cfg.feat_dim)) {
    Rng rng(derive_seed(cfg.rng_seed, 0xC0FFEEull));
    for (auto& v : table_.flat()) v = static_cast<float>(rng.normal());
  }

  std::span<const float> operator[](std::int32_t token_id) const {
    return table_.row(static_cast<std::size_t>(token_id));
  }
  const Matrix<float>& matrix() const { return table_; }

 private:
  Matrix<float> table_;
};

namespace detail {

inline Millis round_to_frames(Millis ms, Millis frame) {
  const Millis n = (ms + frame / 2) / frame;
  return std::max<Millis>(1, n) * frame;
}

inline void render_frames(Utterance& u, const PrototypeTable& protos, double sigma,
                          Rng& rng) {
  const std::size_t dim = protos.matrix().cols();
  u.frames.resize(static_cast<std::size_t>(u.gold_spans.empty() ? 0 : u.gold_spans.back().end_ms / u.frame_period_ms), dim);
  std::size_t f = 0;
  for (const auto& span : u.gold_spans) {
    const auto proto = protos[span.token_id];
    for (Millis t = span.start_ms; t < span.end_ms; t += u.frame_period_ms, ++f) {
      auto row = u.frames.row(f);
      for (std::size_t d = 0; d < dim; ++d)
        row[d] = proto[d] + static_cast<float>(sigma * rng.normal());
    }
  }
}

}  // namespace detail

/// Generates an utterance from an explicit token/duration schedule.
/// Durations are rounded to whole frames (minimum one frame).
inline Utterance make_utterance(const CorpusConfig& cfg, const PrototypeTable& protos,
                                const std::vector<std::int32_t>& tokens,
                                const std::vector<Millis>& durations_ms, Rng& rng,
                                std::string id = "utt") {
  if (tokens.size() != durations_ms.size())
    throw Error(ErrorKind::kConfig, "token and duration counts differ");
  Utterance u;
  u.id = std::move(id);
  u.frame_period_ms = cfg.frame_period_ms;
  u.tokens = tokens;
  Millis t = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg.text_vocab_size())
      throw Error(ErrorKind::kConfig, "token id outside vocabulary");
    const Millis d = detail::round_to_frames(durations_ms[i], cfg.frame_period_ms);
    u.gold_spans.push_back({tokens[i], t, t + d});
    t += d;
  }
  u.pseudo_spans = u.gold_spans;
  detail::render_frames(u, protos, cfg.noise_sigma, rng);
  return u;
}

/// Draws one synthetic utterance. The language (vocabulary range) is chosen
/// uniformly unless `language` is given; adjacent tokens never repeat, since
/// a repeated prototype leaves no acoustic boundary between them.
inline Utterance gen_utterance(const CorpusConfig& cfg, const PrototypeTable& protos,
                               Rng& rng, std::string id = "utt", int language = -1) {
  cfg.validate();
  if (language < 0) language = static_cast<int>(rng.uniform_int(0, cfg.num_languages - 1));
  const auto n = rng.uniform_int(cfg.tokens_per_utt_range.min, cfg.tokens_per_utt_range.max);
  const std::int32_t base = language * cfg.vocab_size;
  std::vector<std::int32_t> tokens;
  std::vector<Millis> durations;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int32_t tok;
    do {
      tok = base + static_cast<std::int32_t>(rng.uniform_int(0, cfg.vocab_size - 1));
    } while (!tokens.empty() && tok == tokens.back());
    tokens.push_back(tok);
    durations.push_back(rng.uniform_int(cfg.token_duration_range_ms.min,
                                        cfg.token_duration_range_ms.max));
  }
  return make_utterance(cfg, protos, tokens, durations, rng, std::move(id));
}

inline int language_of(const Utterance& u, const CorpusConfig& cfg) {
  return u.tokens.empty() ? 0 : u.tokens.front() / cfg.vocab_size;
}

/// Simulated pseudo-label noise: every boundary point is moved by
/// `bias_ms + round(N(0, jitter_sigma_ms))`, then repaired so spans stay
/// ordered, at least one frame long and inside the audio. Gold is untouched.
inline Utterance corrupt_labels(Utterance u, Millis bias_ms, double jitter_sigma_ms, Rng& rng) {
  const std::size_t n = u.gold_spans.size();
  if (n == 0) return u;
  const Millis frame = u.frame_period_ms;
  const Millis total = u.duration_ms();

  // Boundary k is the start of span k; boundary n is the end of the last span.
  std::vector<Millis> b(n + 1);
  for (std::size_t k = 0; k < n; ++k) b[k] = u.gold_spans[k].start_ms;
  b[n] = u.gold_spans.back().end_ms;
  for (auto& x : b) {
    const double j = jitter_sigma_ms > 0.0 ? rng.normal(0.0, jitter_sigma_ms) : 0.0;
    x += bias_ms + static_cast<Millis>(std::llround(j));
  }
  std::sort(b.begin(), b.end());
  b[0] = std::clamp<Millis>(b[0], 0, total - static_cast<Millis>(n) * frame);
  for (std::size_t k = 1; k <= n; ++k) {
    const Millis hi = total - static_cast<Millis>(n - k) * frame;
    b[k] = std::min(std::max(b[k], b[k - 1] + frame), hi);
  }
  for (std::size_t k = 0; k < n; ++k)
    u.pseudo_spans[k] = {u.gold_spans[k].token_id, b[k], b[k + 1]};
  return u;
}

/// Stacks the parts in order; spans are offset by the running duration.
inline Utterance concatenate(const std::vector<const Utterance*>& parts, std::string id) {
  if (parts.empty()) throw Error(ErrorKind::kMix, "nothing to concatenate");
  const Utterance& first = *parts.front();
  std::size_t frames = 0;
  for (const auto* u : parts) {
    if (u->feat_dim() != first.feat_dim())
      throw Error(ErrorKind::kMix, "feat_dim mismatch (" + u->id + ")");
    if (u->frame_period_ms != first.frame_period_ms)
      throw Error(ErrorKind::kMix, "frame period mismatch (" + u->id + ")");
    frames += u->num_frames();
  }
  Utterance out;
  out.id = std::move(id);
  out.frame_period_ms = first.frame_period_ms;
  out.frames.resize(frames, first.feat_dim());
  Millis offset = 0;
  std::size_t row = 0;
  for (const auto* u : parts) {
    std::copy(u->frames.data(), u->frames.data() + u->frames.size(),
              out.frames.data() + row * first.feat_dim());
    row += u->num_frames();
    out.tokens.insert(out.tokens.end(), u->tokens.begin(), u->tokens.end());
    for (auto s : u->gold_spans) out.gold_spans.push_back({s.token_id, s.start_ms + offset, s.end_ms + offset});
    for (auto s : u->pseudo_spans) out.pseudo_spans.push_back({s.token_id, s.start_ms + offset, s.end_ms + offset});
    offset += u->duration_ms();
  }
  return out;
}

/// Concatenates randomly drawn pool members until the duration reaches
/// `target_ms`, stopping early if the next member would push the total past
/// `max_duration_ms`.
inline Utterance mix_long_form(const std::vector<const Utterance*>& pool, Millis target_ms,
                               Millis max_duration_ms, Rng& rng, std::string id) {
  if (pool.empty()) throw Error(ErrorKind::kMix, "empty pool");
  const Utterance& first = *pool.front();
  for (const auto* u : pool) {
    if (u->feat_dim() != first.feat_dim())
      throw Error(ErrorKind::kMix, "feat_dim mismatch in pool (" + u->id + ")");
    if (u->frame_period_ms != first.frame_period_ms)
      throw Error(ErrorKind::kMix, "frame period mismatch in pool (" + u->id + ")");
  }

  std::vector<const Utterance*> parts;
  Millis total = 0;
  do {
    const auto* u = pool[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
    if (!parts.empty() && total + u->duration_ms() > max_duration_ms) break;
    parts.push_back(u);
    total += u->duration_ms();
  } while (total < target_ms);
  return concatenate(parts, std::move(id));
}

inline Utterance mix_long_form(const std::vector<Utterance>& pool, Millis target_ms,
                               Millis max_duration_ms, Rng& rng, std::string id) {
  std::vector<const Utterance*> ptrs;
  ptrs.reserve(pool.size());
  for (const auto& u : pool) ptrs.push_back(&u);
  return mix_long_form(ptrs, target_ms, max_duration_ms, rng, std::move(id));
}

/// Structural checks on an utterance: span counts, ordering, positive
/// lengths, gold tiling and coverage by frames. Returns an empty string when
/// valid, otherwise the first problem found.
inline std::string check_utterance(const Utterance& u) {
  if (u.tokens.size() != u.gold_spans.size() || u.tokens.size() != u.pseudo_spans.size())
    return "token/span count mismatch";
  Millis prev_gold = 0, prev_pseudo = 0;
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    const auto& g = u.gold_spans[i];
    const auto& p = u.pseudo_spans[i];
    if (g.token_id != u.tokens[i] || p.token_id != u.tokens[i]) return "span token mismatch";
    if (g.start_ms != prev_gold) return "gold spans do not tile";
    if (!(g.start_ms < g.end_ms) || !(p.start_ms < p.end_ms)) return "non-positive span";
    if (p.start_ms < prev_pseudo || p.start_ms < 0) return "pseudo spans out of order";
    prev_gold = g.end_ms;
    prev_pseudo = p.end_ms;
  }
  if (!u.gold_spans.empty() && u.duration_ms() < u.gold_spans.back().end_ms)
    return "frames shorter than gold spans";
  if (prev_pseudo > u.duration_ms()) return "pseudo spans past end of audio";
  for (float v : u.frames.flat())
    if (!std::isfinite(v)) return "non-finite frame value";
  return {};
}

}  // namespace slotalign

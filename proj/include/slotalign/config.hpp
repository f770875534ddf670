#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "slotalign/aligner.hpp"
#include "slotalign/corpus.hpp"
#include "slotalign/ctc.hpp"
#include "slotalign/error.hpp"
#include "slotalign/metrics.hpp"
#include "slotalign/training.hpp"

namespace slotalign {

/// Training corpus recipe on top of the generator settings.
struct TrainCorpusConfig {
  std::int32_t count = 2000;
  // Fraction of training utterances that are long-form mixtures.
  double mix_fraction = 0.5;
  Millis label_bias_ms = 0;
  double label_jitter_ms = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (count < 0) throw Error(ErrorKind::kConfig, "train.count must be >= 0");
    if (!(mix_fraction >= 0.0 && mix_fraction <= 1.0)) throw Error(ErrorKind::kConfig, "train.mix_fraction must lie in [0, 1]");
    if (!(label_jitter_ms >= 0.0)) throw Error(ErrorKind::kConfig, "train.label_jitter_ms must be >= 0");
  }
};

struct RunConfig {
  CorpusConfig corpus;
  TrainCorpusConfig train;
  AlignerConfig aligner;
  TrainSchedule schedule;
  CtcConfig ctc;
  TrainSchedule ctc_schedule;
  SuiteConfig suites;
  // Also train a no-insertion aligner (p_dynamic = 0) for the ablation.
  bool ablation = true;

  /// Copies corpus-derived fields into the model configs and validates all.
  void resolve() {
    corpus.validate();
    aligner.feat_dim = corpus.feat_dim;
    aligner.text_vocab_size = corpus.text_vocab_size();
    aligner.frame_period_ms = corpus.frame_period_ms;
    ctc.feat_dim = corpus.feat_dim;
    ctc.text_vocab_size = corpus.text_vocab_size();
    train.validate();
    aligner.validate();
    schedule.validate();
    ctc.validate();
    ctc_schedule.validate();
    suites.validate(corpus);
    const Millis longest = std::max({corpus.max_duration_ms, suites.mixed_long_range_ms.max});
    if (longest > aligner.grid.max_duration_ms())
      throw Error(ErrorKind::kConfig, "timestamp grid shorter than the longest utterance");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(std::string_view key, std::string_view text) {
  V v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw Error(ErrorKind::kParse, "bad value for " + std::string(key) + ": '" + std::string(text) + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorKind::kParse, "bad boolean for " + std::string(key) + ": '" + std::string(text) + "'");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Binding {
  std::function<void(std::string_view key, std::string_view value)> set;
  std::function<std::string()> get;
};

template <typename V>
Binding bind(V& field) {
  Binding b;
  if constexpr (std::is_same_v<V, bool>) {
    b.set = [&field](std::string_view k, std::string_view v) { field = parse_bool(k, v); };
    b.get = [&field] { return std::string(field ? "true" : "false"); };
  } else if constexpr (std::is_floating_point_v<V>) {
    b.set = [&field](std::string_view k, std::string_view v) { field = parse_number<V>(k, v); };
    b.get = [&field] { return format_double(field); };
  } else {
    b.set = [&field](std::string_view k, std::string_view v) { field = parse_number<V>(k, v); };
    b.get = [&field] { return std::to_string(field); };
  }
  return b;
}

inline Binding bind_list(std::vector<double>& field) {
  Binding b;
  b.set = [&field](std::string_view k, std::string_view v) {
    field.clear();
    while (!v.empty()) {
      const auto comma = v.find(',');
      field.push_back(parse_number<double>(k, trim(v.substr(0, comma))));
      if (comma == std::string_view::npos) break;
      v.remove_prefix(comma + 1);
    }
  };
  b.get = [&field] {
    std::string s;
    for (std::size_t i = 0; i < field.size(); ++i) s += (i ? "," : "") + format_double(field[i]);
    return s;
  };
  return b;
}

inline Binding bind_grid(TimeGrid& grid, bool step) {
  Binding b;
  b.set = [&grid, step](std::string_view k, std::string_view v) {
    const auto x = parse_number<Millis>(k, v);
    grid = step ? TimeGrid(x, grid.max_duration_ms()) : TimeGrid(grid.step_ms(), x);
  };
  b.get = [&grid, step] { return std::to_string(step ? grid.step_ms() : grid.max_duration_ms()); };
  return b;
}

inline void bind_schedule(std::map<std::string, Binding>& m, const std::string& p, TrainSchedule& s) {
  m[p + ".steps"] = bind(s.steps);
  m[p + ".batch_size"] = bind(s.batch_size);
  m[p + ".warmup_steps"] = bind(s.warmup_steps);
  m[p + ".peak_lr"] = bind(s.peak_lr);
  m[p + ".p_dynamic"] = bind(s.p_dynamic);
  m[p + ".p_token"] = bind(s.p_token);
  m[p + ".log_every"] = bind(s.log_every);
  m[p + ".seed"] = bind(s.seed);
  m[p + ".curriculum_steps"] = bind(s.curriculum_steps);
  m[p + ".curriculum_max_frames"] = bind(s.curriculum_max_frames);
  m[p + ".bucket_batches"] = bind(s.bucket_batches);
}

inline std::map<std::string, Binding> bindings(RunConfig& c) {
  std::map<std::string, Binding> m;
  m["corpus.vocab_size"] = bind(c.corpus.vocab_size);
  m["corpus.num_languages"] = bind(c.corpus.num_languages);
  m["corpus.feat_dim"] = bind(c.corpus.feat_dim);
  m["corpus.noise_sigma"] = bind(c.corpus.noise_sigma);
  m["corpus.frame_period_ms"] = bind(c.corpus.frame_period_ms);
  m["corpus.token_duration_min_ms"] = bind(c.corpus.token_duration_range_ms.min);
  m["corpus.token_duration_max_ms"] = bind(c.corpus.token_duration_range_ms.max);
  m["corpus.tokens_min"] = bind(c.corpus.tokens_per_utt_range.min);
  m["corpus.tokens_max"] = bind(c.corpus.tokens_per_utt_range.max);
  m["corpus.mix_target_min_ms"] = bind(c.corpus.mix_target_range_ms.min);
  m["corpus.mix_target_max_ms"] = bind(c.corpus.mix_target_range_ms.max);
  m["corpus.max_duration_ms"] = bind(c.corpus.max_duration_ms);
  m["corpus.seed"] = bind(c.corpus.rng_seed);

  m["train.count"] = bind(c.train.count);
  m["train.mix_fraction"] = bind(c.train.mix_fraction);
  m["train.label_bias_ms"] = bind(c.train.label_bias_ms);
  m["train.label_jitter_ms"] = bind(c.train.label_jitter_ms);
  m["train.seed"] = bind(c.train.seed);

  m["aligner.model_dim"] = bind(c.aligner.model_dim);
  m["aligner.n_layers"] = bind(c.aligner.n_layers);
  m["aligner.n_heads"] = bind(c.aligner.n_heads);
  m["aligner.grid_step_ms"] = bind_grid(c.aligner.grid, true);
  m["aligner.grid_max_ms"] = bind_grid(c.aligner.grid, false);
  m["aligner.max_seq_len"] = bind(c.aligner.max_seq_len);
  m["aligner.frame_delta"] = bind(c.aligner.frame_delta);
  m["aligner.encoder_layers"] = bind(c.aligner.encoder_layers);
  m["aligner.encoder_slopes"] = bind_list(c.aligner.encoder_slopes);
  m["aligner.recency_slopes"] = bind_list(c.aligner.recency_slopes);
  m["aligner.position_init_scale"] = bind(c.aligner.position_init_scale);
  m["aligner.fixed_positions"] = bind(c.aligner.fixed_positions);
  m["aligner.text_positions"] = bind(c.aligner.text_positions);
  m["aligner.tied_head"] = bind(c.aligner.tied_head);
  m["aligner.head_from_positions"] = bind(c.aligner.head_from_positions);
  m["aligner.mask_beyond_audio"] = bind(c.aligner.mask_beyond_audio);
  m["aligner.init_seed"] = bind(c.aligner.init_seed);
  bind_schedule(m, "schedule", c.schedule);

  m["ctc.model_dim"] = bind(c.ctc.model_dim);
  m["ctc.n_layers"] = bind(c.ctc.n_layers);
  m["ctc.n_heads"] = bind(c.ctc.n_heads);
  m["ctc.max_frames"] = bind(c.ctc.max_frames);
  m["ctc.init_seed"] = bind(c.ctc.init_seed);
  bind_schedule(m, "ctc_schedule", c.ctc_schedule);

  m["suites.raw_count"] = bind(c.suites.raw_count);
  m["suites.mixed_short_count"] = bind(c.suites.mixed_short_count);
  m["suites.mixed_long_count"] = bind(c.suites.mixed_long_count);
  m["suites.crossvocab_count"] = bind(c.suites.crossvocab_count);
  m["suites.pool_size"] = bind(c.suites.pool_size);
  m["suites.noisy_sigma"] = bind(c.suites.noisy_sigma);
  m["suites.mixed_short_min_ms"] = bind(c.suites.mixed_short_range_ms.min);
  m["suites.mixed_short_max_ms"] = bind(c.suites.mixed_short_range_ms.max);
  m["suites.mixed_long_min_ms"] = bind(c.suites.mixed_long_range_ms.min);
  m["suites.mixed_long_max_ms"] = bind(c.suites.mixed_long_range_ms.max);
  m["suites.label_bias_ms"] = bind(c.suites.label_bias_ms);
  m["suites.label_jitter_ms"] = bind(c.suites.label_jitter_ms);
  m["suites.seed"] = bind(c.suites.seed);

  m["bench.ablation"] = bind(c.ablation);
  return m;
}

}  // namespace detail

/// Parses `key = value` lines over the defaults. Blank lines and lines
/// starting with '#' are skipped. Malformed lines and bad values are parse
/// errors; unknown or repeated keys are config errors.
inline RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  auto table = detail::bindings(cfg);
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorKind::kParse, "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end())
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    it->second.set(key, value);
  }
  cfg.resolve();
  return cfg;
}

/// Every key with its resolved value, sorted by key; parses back to an
/// equal configuration.
inline std::string format_run_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out;
  for (const auto& [key, b] : detail::bindings(copy)) out += key + " = " + b.get() + "\n";
  return out;
}

/// Training corpus: `count` utterances, of which a `mix_fraction` share are
/// mixtures drawn from a separate raw pool; pseudo labels are corrupted with
/// the configured bias and jitter.
inline std::vector<Utterance> build_train_corpus(const CorpusConfig& cfg, const PrototypeTable& protos,
                                                 const TrainCorpusConfig& tc) {
  cfg.validate();
  tc.validate();
  const auto n_mix = static_cast<std::int32_t>(std::llround(tc.mix_fraction * tc.count));
  const std::int32_t n_raw = tc.count - n_mix;
  std::vector<Utterance> out;
  out.reserve(static_cast<std::size_t>(tc.count));
  for (std::int32_t i = 0; i < n_raw; ++i) {
    Rng rng(derive_seed(derive_seed(tc.seed, 1), static_cast<std::uint64_t>(i)));
    out.push_back(gen_utterance(cfg, protos, rng, "train-" + std::to_string(i)));
  }
  if (n_mix > 0) {
    std::vector<Utterance> pool;
    for (std::int32_t i = 0; i < std::max(n_mix, 64); ++i) {
      Rng rng(derive_seed(derive_seed(tc.seed, 2), static_cast<std::uint64_t>(i)));
      pool.push_back(gen_utterance(cfg, protos, rng, "train-part-" + std::to_string(i)));
    }
    for (std::int32_t i = 0; i < n_mix; ++i) {
      Rng rng(derive_seed(derive_seed(tc.seed, 3), static_cast<std::uint64_t>(i)));
      const Millis target = rng.uniform_int(cfg.mix_target_range_ms.min, cfg.mix_target_range_ms.max);
      out.push_back(mix_long_form(pool, target, cfg.max_duration_ms, rng, "train-mix-" + std::to_string(i)));
    }
  }
  Rng rng(derive_seed(tc.seed, 4));
  for (auto& u : out) u = corrupt_labels(std::move(u), tc.label_bias_ms, tc.label_jitter_ms, rng);
  return out;
}

}  // namespace slotalign

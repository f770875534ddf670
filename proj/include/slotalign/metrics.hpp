#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slotalign/aligner.hpp"
#include "slotalign/corpus.hpp"
#include "slotalign/error.hpp"
#include "slotalign/rng.hpp"

namespace slotalign {

/// Mean absolute boundary shift over K paired boundaries.
inline double aas(const std::vector<Millis>& predicted, const std::vector<Millis>& reference) {
  if (predicted.size() != reference.size())
    throw Error(ErrorKind::kMetric, "boundary count mismatch: " + std::to_string(predicted.size()) + " vs " +
                                        std::to_string(reference.size()));
  if (predicted.empty()) throw Error(ErrorKind::kMetric, "no boundaries to score");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    sum += static_cast<double>(std::llabs(predicted[i] - reference[i]));
  return sum / static_cast<double>(predicted.size());
}

inline double rtf(double elapsed_ms, double audio_ms) {
  if (!(audio_ms > 0.0)) throw Error(ErrorKind::kMetric, "audio duration must be positive");
  return elapsed_ms / audio_ms;
}

struct MonotonicityStats {
  std::int64_t violations = 0;
  std::int64_t checks = 0;
  double rate() const { return checks ? static_cast<double>(violations) / static_cast<double>(checks) : 0.0; }
};

/// Checks start_i <= end_i and end_i <= start_{i+1} over the result's
/// tokens in index order.
inline MonotonicityStats monotonicity_violations(const AlignmentResult& r) {
  MonotonicityStats s;
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    ++s.checks;
    if (r.tokens[i].end_ms < r.tokens[i].start_ms) ++s.violations;
    if (i + 1 < r.tokens.size()) {
      ++s.checks;
      if (r.tokens[i + 1].start_ms < r.tokens[i].end_ms) ++s.violations;
    }
  }
  return s;
}

/// One scored boundary: its ordinal within the utterance (2*token + 0/1)
/// and the signed shift predicted - reference.
struct BoundaryShift {
  std::int64_t ordinal = 0;
  Millis shift_ms = 0;
};

enum class Reference { kGold, kPseudo };

inline std::vector<BoundaryShift> boundary_shifts(const AlignmentResult& r, const Utterance& u, Reference ref) {
  const auto& spans = ref == Reference::kGold ? u.gold_spans : u.pseudo_spans;
  std::vector<BoundaryShift> out;
  out.reserve(2 * r.tokens.size());
  for (const auto& t : r.tokens) {
    if (t.token_index < 0 || static_cast<std::size_t>(t.token_index) >= spans.size())
      throw Error(ErrorKind::kMetric, "aligned token index " + std::to_string(t.token_index) + " outside " + u.id);
    const auto& s = spans[static_cast<std::size_t>(t.token_index)];
    out.push_back({2 * std::int64_t{t.token_index}, t.start_ms - s.start_ms});
    out.push_back({2 * std::int64_t{t.token_index} + 1, t.end_ms - s.end_ms});
  }
  return out;
}

struct ShiftCurvePoint {
  std::int64_t ordinal = 0;  // first ordinal of the bucket
  double mean_abs_shift_ms = 0.0;
  std::int64_t n = 0;
};

/// Mean |shift| bucketed by ordinal.
inline std::vector<ShiftCurvePoint> shift_curve(const std::vector<BoundaryShift>& shifts, std::int64_t bucket) {
  if (bucket < 1) throw Error(ErrorKind::kMetric, "bucket width must be >= 1");
  std::map<std::int64_t, std::pair<double, std::int64_t>> acc;
  for (const auto& s : shifts) {
    auto& [sum, n] = acc[s.ordinal / bucket];
    sum += static_cast<double>(std::llabs(s.shift_ms));
    ++n;
  }
  std::vector<ShiftCurvePoint> out;
  for (const auto& [b, v] : acc) out.push_back({b * bucket, v.first / static_cast<double>(v.second), v.second});
  return out;
}

/// Least-squares slope of |shift| against ordinal, in ms per ordinal,
/// fitted over individual boundaries. Zero when ordinals do not vary.
inline double shift_slope(const std::vector<BoundaryShift>& shifts) {
  if (shifts.size() < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (const auto& s : shifts) {
    mx += static_cast<double>(s.ordinal);
    my += static_cast<double>(std::llabs(s.shift_ms));
  }
  mx /= static_cast<double>(shifts.size());
  my /= static_cast<double>(shifts.size());
  double sxy = 0.0, sxx = 0.0;
  for (const auto& s : shifts) {
    const double dx = static_cast<double>(s.ordinal) - mx;
    sxy += dx * (static_cast<double>(std::llabs(s.shift_ms)) - my);
    sxx += dx * dx;
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

struct SuiteReport {
  std::string name;
  std::int64_t utterances = 0;
  std::int64_t slots = 0;  // K
  double aas_ms = 0.0;
  double mean_signed_shift_ms = 0.0;
  MonotonicityStats monotonicity;
  std::int64_t max_forward_passes = 0;
  bool structure_ok = true;  // one (start,end) per requested token everywhere
  double slope_ms_per_10 = 0.0;
  std::vector<ShiftCurvePoint> curve;
  // Timing; excluded from determinism checks.
  double elapsed_ms = 0.0;
  double audio_ms = 0.0;
  double rtf = 0.0;
};

using AlignFn = std::function<AlignmentResult(const Utterance&)>;

inline constexpr std::int64_t kCurveBucket = 10;

/// Scores alignment results against their utterances. With `expect_all`,
/// structure_ok additionally requires one entry per token in index order.
inline SuiteReport score_suite(const std::string& name, const std::vector<Utterance>& suite,
                               const std::vector<AlignmentResult>& results, Reference ref, bool expect_all) {
  if (suite.size() != results.size())
    throw Error(ErrorKind::kMetric, "suite " + name + ": result count differs from utterance count");
  SuiteReport rep;
  rep.name = name;
  std::vector<BoundaryShift> shifts;
  for (std::size_t k = 0; k < suite.size(); ++k) {
    const Utterance& u = suite[k];
    const AlignmentResult& r = results[k];
    ++rep.utterances;
    bool ok = !expect_all || r.tokens.size() == u.tokens.size();
    for (std::size_t i = 0; ok && i < r.tokens.size(); ++i) {
      ok = expect_all ? r.tokens[i].token_index == static_cast<std::int32_t>(i)
                      : (i == 0 || r.tokens[i].token_index > r.tokens[i - 1].token_index);
    }
    rep.structure_ok = rep.structure_ok && ok;
    rep.max_forward_passes = std::max<std::int64_t>(rep.max_forward_passes, r.forward_passes);
    const auto m = monotonicity_violations(r);
    rep.monotonicity.violations += m.violations;
    rep.monotonicity.checks += m.checks;
    rep.elapsed_ms += r.elapsed_ms;
    rep.audio_ms += static_cast<double>(u.duration_ms());
    const auto s = boundary_shifts(r, u, ref);
    shifts.insert(shifts.end(), s.begin(), s.end());
  }
  rep.slots = static_cast<std::int64_t>(shifts.size());
  if (rep.slots == 0) throw Error(ErrorKind::kMetric, "suite " + name + " has no slots");
  std::vector<Millis> pred, zero(shifts.size(), 0);
  double signed_sum = 0.0;
  for (const auto& s : shifts) {
    pred.push_back(s.shift_ms);
    signed_sum += static_cast<double>(s.shift_ms);
  }
  rep.aas_ms = aas(pred, zero);
  rep.mean_signed_shift_ms = signed_sum / static_cast<double>(rep.slots);
  rep.curve = shift_curve(shifts, kCurveBucket);
  rep.slope_ms_per_10 = 10.0 * shift_slope(shifts);
  rep.rtf = rep.audio_ms > 0.0 ? rtf(rep.elapsed_ms, rep.audio_ms) : 0.0;
  return rep;
}

/// Aligns every utterance of a suite (all tokens requested) and scores it.
inline SuiteReport evaluate_suite(const std::string& name, const std::vector<Utterance>& suite,
                                  const AlignFn& align, Reference ref) {
  std::vector<AlignmentResult> results;
  results.reserve(suite.size());
  for (const auto& u : suite) results.push_back(align(u));
  return score_suite(name, suite, results, ref, /*expect_all=*/true);
}

inline nlohmann::json to_json(const SuiteReport& r, bool with_timing = true) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.curve) curve.push_back({p.ordinal, p.mean_abs_shift_ms, p.n});
  nlohmann::json j = {{"name", r.name},
                      {"utterances", r.utterances},
                      {"slots", r.slots},
                      {"aas_ms", r.aas_ms},
                      {"mean_signed_shift_ms", r.mean_signed_shift_ms},
                      {"monotonicity_violations", r.monotonicity.violations},
                      {"monotonicity_checks", r.monotonicity.checks},
                      {"monotonicity_rate", r.monotonicity.rate()},
                      {"max_forward_passes", r.max_forward_passes},
                      {"structure_ok", r.structure_ok},
                      {"shift_slope_ms_per_10_ordinals", r.slope_ms_per_10},
                      {"shift_curve", curve}};
  if (with_timing) j["timing"] = {{"elapsed_ms", r.elapsed_ms}, {"audio_ms", r.audio_ms}, {"rtf", r.rtf}};
  return j;
}

/// Shift curve as TSV: ordinal, mean_abs_shift_ms, n.
inline std::string curve_tsv(const std::vector<ShiftCurvePoint>& curve) {
  std::ostringstream os;
  os << "ordinal\tmean_abs_shift_ms\tn\n";
  for (const auto& p : curve) os << p.ordinal << '\t' << p.mean_abs_shift_ms << '\t' << p.n << '\n';
  return os.str();
}

struct EvalReport {
  std::string reference = "gold";
  std::vector<SuiteReport> suites;
};

inline nlohmann::json to_json(const EvalReport& r, bool with_timing = true) {
  nlohmann::json suites = nlohmann::json::array();
  for (const auto& s : r.suites) suites.push_back(to_json(s, with_timing));
  return {{"reference", r.reference}, {"suites", suites}};
}

/// Evaluation suite sizes and scales. Mixed suites concatenate utterances
/// from a fresh raw pool.
struct SuiteConfig {
  std::int32_t raw_count = 100;
  std::int32_t mixed_short_count = 30;
  std::int32_t mixed_long_count = 30;
  std::int32_t crossvocab_count = 30;
  std::int32_t pool_size = 300;
  double noisy_sigma = 0.6;
  Range<Millis> mixed_short_range_ms{2000, 5000};
  Range<Millis> mixed_long_range_ms{10000, 20000};
  Millis label_bias_ms = 0;
  double label_jitter_ms = 0.0;
  std::uint64_t seed = 2024;

  void validate(const CorpusConfig& corpus) const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, m); };
    if (raw_count < 0 || mixed_short_count < 0 || mixed_long_count < 0 || crossvocab_count < 0)
      fail("suite counts must be >= 0");
    if (pool_size < 1) fail("suite pool_size must be >= 1");
    if (!(noisy_sigma >= 0.0)) fail("noisy_sigma must be >= 0");
    if (!mixed_short_range_ms.valid() || !mixed_long_range_ms.valid() || mixed_short_range_ms.min <= 0 ||
        mixed_long_range_ms.min <= 0)
      fail("mixed suite ranges must be non-empty and positive");
    if (mixed_long_range_ms.max > corpus.max_duration_ms || mixed_short_range_ms.max > corpus.max_duration_ms)
      fail("mixed suite range exceeds max_duration_ms");
    if (!(label_jitter_ms >= 0.0)) fail("label jitter must be >= 0");
    if (crossvocab_count > 0 && corpus.num_languages < 2) fail("crossvocab suite needs two languages");
  }
};

struct Suites {
  std::vector<Utterance> raw, raw_noisy, mixed_short, mixed_long, mixed_crossvocab;

  std::vector<std::pair<std::string, const std::vector<Utterance>*>> named() const {
    return {{"raw", &raw},
            {"raw_noisy", &raw_noisy},
            {"mixed_short", &mixed_short},
            {"mixed_long", &mixed_long},
            {"mixed_crossvocab", &mixed_crossvocab}};
  }
};

namespace detail {

inline std::vector<Utterance> raw_pool(const CorpusConfig& cfg, const PrototypeTable& protos, std::int32_t n,
                                       std::uint64_t seed, const std::string& prefix, int language = -1) {
  std::vector<Utterance> out;
  for (std::int32_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(gen_utterance(cfg, protos, rng, prefix + std::to_string(i), language));
  }
  return out;
}

inline Utterance with_pseudo(Utterance u, const SuiteConfig& sc, std::uint64_t seed) {
  if (sc.label_bias_ms == 0 && sc.label_jitter_ms == 0.0) return u;
  Rng rng(seed);
  return corrupt_labels(std::move(u), sc.label_bias_ms, sc.label_jitter_ms, rng);
}

}  // namespace detail

/// Builds the held-out suites. Every suite uses seeds derived from
/// `sc.seed`, never the training seed.
inline Suites build_suites(const CorpusConfig& cfg, const PrototypeTable& protos, const SuiteConfig& sc) {
  cfg.validate();
  sc.validate(cfg);
  Suites s;
  const auto seed = [&](std::uint64_t tag) { return derive_seed(sc.seed, tag); };

  s.raw = detail::raw_pool(cfg, protos, sc.raw_count, seed(1), "raw-");
  CorpusConfig noisy = cfg;
  noisy.noise_sigma = sc.noisy_sigma;
  s.raw_noisy = detail::raw_pool(noisy, protos, sc.raw_count, seed(2), "raw_noisy-");

  auto mixed = [&](std::int32_t count, Range<Millis> range, std::uint64_t tag, const std::string& prefix) {
    const auto pool = detail::raw_pool(cfg, protos, sc.pool_size, seed(tag), prefix + "part-");
    std::vector<Utterance> out;
    for (std::int32_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed(tag + 1), static_cast<std::uint64_t>(i)));
      const Millis target = rng.uniform_int(range.min, range.max);
      out.push_back(mix_long_form(pool, target, range.max, rng, prefix + std::to_string(i)));
    }
    return out;
  };
  s.mixed_short = mixed(sc.mixed_short_count, sc.mixed_short_range_ms, 10, "mixed_short-");
  s.mixed_long = mixed(sc.mixed_long_count, sc.mixed_long_range_ms, 20, "mixed_long-");

  if (sc.crossvocab_count > 0) {
    std::vector<std::vector<Utterance>> by_lang;
    for (int l = 0; l < 2; ++l)
      by_lang.push_back(detail::raw_pool(cfg, protos, sc.pool_size, seed(30 + static_cast<std::uint64_t>(l)),
                                         "cross-part" + std::to_string(l) + "-", l));
    for (std::int32_t i = 0; i < sc.crossvocab_count; ++i) {
      // Alternate languages part by part, starting with a random one.
      Rng rng(derive_seed(seed(40), static_cast<std::uint64_t>(i)));
      const Millis target = rng.uniform_int(sc.mixed_short_range_ms.min, sc.mixed_long_range_ms.max);
      std::size_t lang = static_cast<std::size_t>(rng.uniform_int(0, 1));
      std::vector<const Utterance*> parts;
      Millis total = 0;
      while (parts.size() < 2 || total < target) {
        const auto& pool = by_lang[lang];
        const auto* u = &pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        if (parts.size() >= 2 && total + u->duration_ms() > sc.mixed_long_range_ms.max) break;
        parts.push_back(u);
        total += u->duration_ms();
        lang = 1 - lang;
      }
      s.mixed_crossvocab.push_back(concatenate(parts, "mixed_crossvocab-" + std::to_string(i)));
    }
  }

  std::uint64_t k = 0;
  for (auto* suite : {&s.raw, &s.raw_noisy, &s.mixed_short, &s.mixed_long, &s.mixed_crossvocab})
    for (auto& u : *suite) u = detail::with_pseudo(std::move(u), sc, derive_seed(seed(50), k++));
  return s;
}

}  // namespace slotalign

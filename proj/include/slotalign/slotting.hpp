#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "slotalign/corpus.hpp"
#include "slotalign/error.hpp"
#include "slotalign/rng.hpp"
#include "slotalign/timegrid.hpp"

namespace slotalign {

/// Label value for positions that carry no timestamp. Lies outside every
/// grid's class range.
inline constexpr TimeIndex kIgnore = -1;

enum class Boundary : std::uint8_t { kStart, kEnd };

struct SlotInfo {
  std::int32_t position = 0;     // index into input_ids
  std::int32_t token_index = 0;  // owning token in the original transcript
  Boundary boundary = Boundary::kStart;

  friend bool operator==(const SlotInfo&, const SlotInfo&) = default;
};

/// Transcript with [time] slots: token, then (start, end) slot pair for
/// every token selected for alignment. Labels are aligned to input_ids
/// position-for-position (no next-token shift).
struct SlotSequence {
  std::int32_t time_id = 0;
  std::vector<std::int32_t> input_ids;
  std::vector<TimeIndex> labels;
  std::vector<std::int32_t> slot_positions;
  std::vector<SlotInfo> slots;

  std::size_t size() const { return input_ids.size(); }
  bool has_slots() const { return !slot_positions.empty(); }
};

namespace detail {

inline void push_token(SlotSequence& seq, std::int32_t tok) {
  seq.input_ids.push_back(tok);
  seq.labels.push_back(kIgnore);
}

inline void push_slot_pair(SlotSequence& seq, std::int32_t token_index, TimeIndex start,
                           TimeIndex end) {
  for (auto [b, label] : {std::pair{Boundary::kStart, start}, std::pair{Boundary::kEnd, end}}) {
    const auto pos = static_cast<std::int32_t>(seq.input_ids.size());
    seq.input_ids.push_back(seq.time_id);
    seq.labels.push_back(label);
    seq.slot_positions.push_back(pos);
    seq.slots.push_back({pos, token_index, b});
  }
}

}  // namespace detail

inline SlotSequence build_slot_sequence(const std::vector<std::int32_t>& tokens,
                                        const std::vector<TokenSpan>& spans,
                                        const std::vector<bool>& mask, const TimeGrid& grid,
                                        std::int32_t time_id) {
  if (tokens.size() != spans.size() || tokens.size() != mask.size())
    throw Error(ErrorKind::kRequest, "tokens, spans and mask lengths differ");
  SlotSequence seq;
  seq.time_id = time_id;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == time_id) throw Error(ErrorKind::kRequest, "transcript contains the time id");
    detail::push_token(seq, tokens[i]);
    if (mask[i]) {
      detail::push_slot_pair(seq, static_cast<std::int32_t>(i), discretize(spans[i].start_ms, grid),
                             discretize(spans[i].end_ms, grid));
    }
  }
  return seq;
}

/// Dynamic slot insertion. One sample-level draw decides whether the sample
/// is thinned at all; thinned samples keep each token's slot pair with
/// probability `p_token`, the rest get full insertion.
inline std::vector<bool> dynamic_insertion_mask(std::size_t n_tokens, Rng& rng,
                                                double p_dynamic = 0.5, double p_token = 0.5) {
  if (!(p_dynamic >= 0.0 && p_dynamic <= 1.0) || !(p_token >= 0.0 && p_token <= 1.0))
    throw Error(ErrorKind::kConfig, "insertion probabilities must lie in [0, 1]");
  std::vector<bool> mask(n_tokens, true);
  if (!rng.bernoulli(p_dynamic)) return mask;
  for (std::size_t i = 0; i < n_tokens; ++i) mask[i] = rng.bernoulli(p_token);
  return mask;
}

inline double expected_slot_fraction(double p_dynamic, double p_token) {
  return 1.0 - p_dynamic + p_dynamic * p_token;
}

/// Inference-time layout: slot pairs only after the requested tokens, all
/// labels IGNORE.
inline SlotSequence build_inference_sequence(const std::vector<std::int32_t>& tokens,
                                             std::vector<std::int32_t> requested,
                                             std::int32_t time_id) {
  std::sort(requested.begin(), requested.end());
  if (std::adjacent_find(requested.begin(), requested.end()) != requested.end())
    throw Error(ErrorKind::kRequest, "duplicate token index in request");
  if (!requested.empty() &&
      (requested.front() < 0 || requested.back() >= static_cast<std::int32_t>(tokens.size())))
    throw Error(ErrorKind::kRequest, "token index out of range in request");
  SlotSequence seq;
  seq.time_id = time_id;
  auto next = requested.begin();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    detail::push_token(seq, tokens[i]);
    if (next != requested.end() && *next == static_cast<std::int32_t>(i)) {
      detail::push_slot_pair(seq, static_cast<std::int32_t>(i), kIgnore, kIgnore);
      ++next;
    }
  }
  return seq;
}

inline std::vector<std::int32_t> all_token_indices(std::size_t n) {
  std::vector<std::int32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::int32_t>(i);
  return idx;
}

/// Checks the layout invariants: labels/ids/positions agree, slots come in
/// (start, end) pairs directly after their token, and every training label
/// is a valid class. `require_labels` is false for inference sequences.
inline std::string validate_slot_sequence(const SlotSequence& seq, std::int32_t num_classes,
                                          bool require_labels = true) {
  if (seq.labels.size() != seq.input_ids.size()) return "labels/input_ids length mismatch";
  if (seq.slots.size() != seq.slot_positions.size()) return "slot metadata length mismatch";
  std::size_t k = 0;
  std::int32_t token_index = -1;
  for (std::size_t p = 0; p < seq.input_ids.size(); ++p) {
    const bool is_slot = seq.input_ids[p] == seq.time_id;
    const bool listed = k < seq.slot_positions.size() &&
                        seq.slot_positions[k] == static_cast<std::int32_t>(p);
    if (is_slot != listed) return "slot_positions disagree with input_ids at " + std::to_string(p);
    if (!is_slot) {
      ++token_index;
      if (seq.labels[p] != kIgnore) return "label on non-slot position " + std::to_string(p);
      continue;
    }
    const SlotInfo& s = seq.slots[k];
    if (token_index < 0) return "slot before the first token";
    if (s.token_index != token_index) return "slot owner mismatch at " + std::to_string(p);
    const bool want_start = p >= 1 && seq.input_ids[p - 1] != seq.time_id;
    if (want_start != (s.boundary == Boundary::kStart)) return "slot order broken at " + std::to_string(p);
    if (s.boundary == Boundary::kStart &&
        (p + 1 >= seq.input_ids.size() || seq.input_ids[p + 1] != seq.time_id))
      return "start slot without end slot at " + std::to_string(p);
    if (require_labels) {
      if (seq.labels[p] < 0 || seq.labels[p] >= num_classes) return "label out of range at " + std::to_string(p);
    } else if (seq.labels[p] != kIgnore) {
      return "inference sequence carries labels";
    }
    ++k;
  }
  if (k != seq.slot_positions.size()) return "dangling slot positions";
  return {};
}

/// Recovers the transcript and insertion mask from a slot sequence.
inline std::pair<std::vector<std::int32_t>, std::vector<bool>> reconstruct(const SlotSequence& seq) {
  std::vector<std::int32_t> tokens;
  std::vector<bool> mask;
  for (auto id : seq.input_ids) {
    if (id == seq.time_id) {
      if (!mask.empty()) mask.back() = true;
    } else {
      tokens.push_back(id);
      mask.push_back(false);
    }
  }
  return {tokens, mask};
}

}  // namespace slotalign

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "slotalign/aligner.hpp"
#include "slotalign/corpus.hpp"
#include "slotalign/error.hpp"
#include "slotalign/nn.hpp"
#include "slotalign/ops.hpp"
#include "slotalign/training.hpp"
#include "slotalign/transformer.hpp"

namespace slotalign {

namespace ctc {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Minimum number of frames needed to emit `labels`: one per label plus a
/// separating blank between equal neighbours.
inline std::size_t min_frames(const std::vector<std::int32_t>& labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

/// Blank-extended label: blank, l1, blank, l2, ..., lL, blank.
inline std::vector<std::int32_t> extend(const std::vector<std::int32_t>& labels, std::int32_t blank) {
  std::vector<std::int32_t> z(2 * labels.size() + 1, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) z[2 * i + 1] = labels[i];
  return z;
}

template <typename T>
void check_feasible(const Matrix<T>& log_probs, const std::vector<std::int32_t>& labels, std::int32_t blank) {
  if (labels.empty()) throw Error(ErrorKind::kInfeasible, "empty label sequence");
  for (auto l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= log_probs.cols() || l == blank)
      throw Error(ErrorKind::kInfeasible, "label outside the non-blank vocabulary");
  if (blank < 0 || static_cast<std::size_t>(blank) >= log_probs.cols())
    throw Error(ErrorKind::kInfeasible, "blank index outside vocabulary");
  if (log_probs.rows() < min_frames(labels))
    throw Error(ErrorKind::kInfeasible, std::to_string(log_probs.rows()) + " frames cannot emit " +
                                            std::to_string(labels.size()) + " labels");
}

/// Allowed predecessor rule: state s may come from s, s-1, and s-2 when
/// z[s] is a label differing from z[s-2].
inline bool can_skip(const std::vector<std::int32_t>& z, std::size_t s, std::int32_t blank) {
  return s >= 2 && z[s] != blank && z[s] != z[s - 2];
}

/// Forward (alpha) and backward (beta) log-lattices; both include the
/// emission at their own frame.
template <typename T>
std::pair<Matrix<double>, Matrix<double>> lattices(const Matrix<T>& lp, const std::vector<std::int32_t>& z,
                                                   std::int32_t blank) {
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  const std::size_t n = lp.rows(), s_len = z.size();
  Matrix<double> alpha(n, s_len, kNeg), beta(n, s_len, kNeg);
  auto emit = [&](std::size_t t, std::size_t s) { return static_cast<double>(lp(t, static_cast<std::size_t>(z[s]))); };
  alpha(0, 0) = emit(0, 0);
  if (s_len > 1) alpha(0, 1) = emit(0, 1);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(z, s, blank)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNeg ? kNeg : a + emit(t, s);
    }
  }
  beta(n - 1, s_len - 1) = emit(n - 1, s_len - 1);
  if (s_len > 1) beta(n - 1, s_len - 2) = emit(n - 1, s_len - 2);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < s_len) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < s_len && can_skip(z, s + 2, blank)) b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNeg ? kNeg : b + emit(t, s);
    }
  }
  return {std::move(alpha), std::move(beta)};
}

template <typename T>
double total_log_prob(const Matrix<double>& alpha, std::size_t s_len) {
  const std::size_t last = alpha.rows() - 1;
  double p = alpha(last, s_len - 1);
  if (s_len > 1) p = log_add(p, alpha(last, s_len - 2));
  return p;
}

}  // namespace ctc

/// -log P(labels | log_probs) summed over all CTC paths.
template <typename T>
double ctc_loss(const Matrix<T>& log_probs, const std::vector<std::int32_t>& labels, std::int32_t blank) {
  ctc::check_feasible(log_probs, labels, blank);
  const auto z = ctc::extend(labels, blank);
  const auto [alpha, beta] = ctc::lattices(log_probs, z, blank);
  return -ctc::total_log_prob<T>(alpha, z.size());
}

namespace nn {

/// CTC loss as a tape op on per-frame log-probabilities [T x K].
template <typename T>
Var ctc_loss(Tape<T>& t, Var log_probs, std::vector<std::int32_t> labels, std::int32_t blank) {
  const Matrix<T>& lp = t.value(log_probs);
  ctc::check_feasible(lp, labels, blank);
  auto z = ctc::extend(labels, blank);
  auto [alpha, beta] = ctc::lattices(lp, z, blank);
  const double logp = ctc::total_log_prob<T>(alpha, z.size());
  return t.push(Matrix<T>(1, 1, static_cast<T>(-logp)),
                [log_probs, z = std::move(z), alpha = std::move(alpha), beta = std::move(beta), logp](
                    Tape<T>& tp, Var self) {
                  const double g = static_cast<double>(tp.grad(self)(0, 0));
                  const Matrix<T>& lp = tp.value(log_probs);
                  Matrix<T>& dlp = tp.grad(log_probs);
                  for (std::size_t f = 0; f < lp.rows(); ++f) {
                    for (std::size_t s = 0; s < z.size(); ++s) {
                      const double occ = alpha(f, s) + beta(f, s) -
                                         static_cast<double>(lp(f, static_cast<std::size_t>(z[s]))) - logp;
                      if (occ == -std::numeric_limits<double>::infinity()) continue;
                      dlp(f, static_cast<std::size_t>(z[s])) -= static_cast<T>(g * std::exp(occ));
                    }
                  }
                });
}

}  // namespace nn

struct ViterbiAlignment {
  std::vector<TokenSpan> spans;
  double log_prob = 0.0;  // best single path
};

/// Viterbi forced alignment over the blank-extended label. Each token's span
/// is [first frame, last frame + 1) of the frames its state occupies; blank
/// frames belong to no token.
template <typename T>
ViterbiAlignment ctc_forced_align(const Matrix<T>& log_probs, const std::vector<std::int32_t>& labels,
                                  std::int32_t blank, Millis frame_period_ms) {
  ctc::check_feasible(log_probs, labels, blank);
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  const auto z = ctc::extend(labels, blank);
  const std::size_t n = log_probs.rows(), s_len = z.size();
  Matrix<double> score(n, s_len, kNeg);
  Matrix<std::int32_t> from(n, s_len, -1);
  auto emit = [&](std::size_t t, std::size_t s) {
    return static_cast<double>(log_probs(t, static_cast<std::size_t>(z[s])));
  };
  score(0, 0) = emit(0, 0);
  score(0, 1) = emit(0, 1);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      // Ties prefer staying in the current state, then the nearest predecessor.
      double best = score(t - 1, s);
      std::int32_t arg = static_cast<std::int32_t>(s);
      if (s >= 1 && score(t - 1, s - 1) > best) {
        best = score(t - 1, s - 1);
        arg = static_cast<std::int32_t>(s - 1);
      }
      if (ctc::can_skip(z, s, blank) && score(t - 1, s - 2) > best) {
        best = score(t - 1, s - 2);
        arg = static_cast<std::int32_t>(s - 2);
      }
      if (best == kNeg) continue;
      score(t, s) = best + emit(t, s);
      from(t, s) = arg;
    }
  }
  std::size_t s = s_len - 1;
  if (s_len > 1 && score(n - 1, s_len - 2) > score(n - 1, s_len - 1)) s = s_len - 2;
  ViterbiAlignment out;
  out.log_prob = score(n - 1, s);
  std::vector<std::size_t> states(n);
  for (std::size_t t = n; t-- > 0;) {
    states[t] = s;
    if (t > 0) s = static_cast<std::size_t>(from(t, s));
  }
  out.spans.resize(labels.size());
  std::vector<bool> seen(labels.size(), false);
  for (std::size_t t = 0; t < n; ++t) {
    if (states[t] % 2 == 0) continue;
    const std::size_t i = states[t] / 2;
    const Millis lo = static_cast<Millis>(t) * frame_period_ms;
    if (!seen[i]) {
      out.spans[i] = {labels[i], lo, lo + frame_period_ms};
      seen[i] = true;
    } else {
      out.spans[i].end_ms = lo + frame_period_ms;
    }
  }
  return out;
}

struct CtcConfig {
  std::int32_t feat_dim = 32;
  std::int32_t model_dim = 64;
  std::int32_t n_layers = 2;
  std::int32_t n_heads = 4;
  std::int32_t text_vocab_size = 64;
  std::int32_t max_frames = 1024;
  std::uint64_t init_seed = 11;

  std::int32_t blank_id() const { return text_vocab_size; }

  void validate() const {
    if (feat_dim < 1 || model_dim < 1 || n_layers < 0 || n_heads < 1 || text_vocab_size < 1 || max_frames < 1)
      throw Error(ErrorKind::kConfig, "ctc dimensions must be positive");
    if (model_dim % n_heads != 0) throw Error(ErrorKind::kConfig, "ctc model_dim must be divisible by n_heads");
  }
};

/// Non-causal frame classifier emitting log-posteriors over text vocabulary
/// plus blank (last index).
template <typename T>
class CtcModel {
 public:
  explicit CtcModel(CtcConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    frame_w_ = &params_.add("frame_proj.w", static_cast<std::size_t>(cfg_.feat_dim), d);
    frame_b_ = &params_.add("frame_proj.b", 1, d);
    nn::init_fan_in(*frame_w_, static_cast<std::size_t>(cfg_.feat_dim), rng);
    pos_emb_ = &params_.add("pos_emb", static_cast<std::size_t>(cfg_.max_frames), d);
    nn::fill_sinusoidal(pos_emb_->value, 1000.0, 0.5);
    const nn::BlockShape shape{d, static_cast<std::size_t>(cfg_.n_heads), 4};
    for (std::int32_t l = 0; l < cfg_.n_layers; ++l)
      blocks_.push_back(nn::add_block(params_, "blocks." + std::to_string(l), shape, rng));
    lnf_gain_ = &params_.add("ln_f.gain", 1, d);
    lnf_bias_ = &params_.add("ln_f.bias", 1, d);
    nn::init_constant(*lnf_gain_, T(1));
    out_w_ = &params_.add("out.w", d, static_cast<std::size_t>(cfg_.text_vocab_size) + 1);
    out_b_ = &params_.add("out.b", 1, static_cast<std::size_t>(cfg_.text_vocab_size) + 1);
    nn::init_fan_in(*out_w_, d, rng);
  }

  const CtcConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  nn::Var log_probs(nn::Tape<T>& t, const Matrix<float>& frames) const {
    if (frames.rows() == 0) throw Error(ErrorKind::kCapacity, "empty audio");
    if (frames.rows() > static_cast<std::size_t>(cfg_.max_frames))
      throw Error(ErrorKind::kCapacity, "utterance longer than ctc max_frames");
    nn::Var h = nn::linear(t, t.constant(frames.cast<T>()), t.param(*frame_w_), t.param(*frame_b_));
    h = nn::add(t, h, nn::leading_rows(t, t.param(*pos_emb_), frames.rows()));
    for (const auto& b : blocks_)
      h = nn::block_forward(t, h, b, static_cast<std::size_t>(cfg_.n_heads), /*causal=*/false);
    h = nn::layer_norm(t, h, t.param(*lnf_gain_), t.param(*lnf_bias_));
    return nn::log_softmax(t, nn::linear(t, h, t.param(*out_w_), t.param(*out_b_)));
  }

  nn::Var loss(nn::Tape<T>& t, const Utterance& u) const {
    return nn::ctc_loss(t, log_probs(t, u.frames), u.tokens, cfg_.blank_id());
  }

  /// Forced alignment of every token; reports timing like the slot model.
  AlignmentResult align(const Utterance& u) const {
    AlignmentResult result;
    result.audio_duration_ms = u.duration_ms();
    if (u.tokens.empty()) return result;
    const auto t0 = std::chrono::steady_clock::now();
    nn::Tape<T> tape(/*record=*/false);
    const Matrix<T>& lp = tape.value(log_probs(tape, u.frames));
    result.forward_passes = 1;
    const auto va = ctc_forced_align(lp, u.tokens, cfg_.blank_id(), u.frame_period_ms);
    for (std::size_t i = 0; i < va.spans.size(); ++i)
      result.tokens.push_back({static_cast<std::int32_t>(i), va.spans[i].start_ms, va.spans[i].end_ms});
    result.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
  }

 private:
  CtcConfig cfg_;
  nn::ParameterSet<T> params_;
  nn::Parameter<T>* frame_w_;
  nn::Parameter<T>* frame_b_;
  nn::Parameter<T>* pos_emb_;
  std::vector<nn::BlockParams<T>> blocks_;
  nn::Parameter<T>* lnf_gain_;
  nn::Parameter<T>* lnf_bias_;
  nn::Parameter<T>* out_w_;
  nn::Parameter<T>* out_b_;
};

/// CTC training on transcripts only; timestamps are never read.
template <typename T>
std::vector<TraceRow> train_ctc(CtcModel<T>& model, const std::vector<Utterance>& corpus,
                                const TrainSchedule& schedule,
                                const std::function<void(const TraceRow&)>& on_log = {}) {
  const SampleLoss<T> sample_loss = [&](nn::Tape<T>& tape, const Utterance& u,
                                        Rng&) -> std::optional<nn::Var> {
    if (u.tokens.empty() || u.num_frames() < ctc::min_frames(u.tokens)) return std::nullopt;
    return model.loss(tape, u);
  };
  return train_loop(model.params(), corpus, schedule, sample_loss, on_log);
}

}  // namespace slotalign

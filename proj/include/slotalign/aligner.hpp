#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "slotalign/corpus.hpp"
#include "slotalign/error.hpp"
#include "slotalign/nn.hpp"
#include "slotalign/ops.hpp"
#include "slotalign/optim.hpp"
#include "slotalign/rng.hpp"
#include "slotalign/slotting.hpp"
#include "slotalign/timegrid.hpp"
#include "slotalign/training.hpp"
#include "slotalign/transformer.hpp"

namespace slotalign {

struct AlignerConfig {
  std::int32_t feat_dim = 32;
  std::int32_t model_dim = 64;
  std::int32_t n_layers = 2;
  std::int32_t n_heads = 4;
  std::int32_t text_vocab_size = 64;
  TimeGrid grid{40, 30000};
  std::int32_t max_seq_len = 1024;
  Millis frame_period_ms = 80;
  // Frame input is [x_t, x_t - x_{t-1}] when set, else x_t alone.
  bool frame_delta = true;
  // Bidirectional blocks run over the projected frames before they join
  // the text; they play the audio encoder's role.
  std::int32_t encoder_layers = 1;
  std::vector<double> encoder_slopes{1.0, 0.5, 0.25, 0.0};
  // Per-head recency penalty in the causal attention; empty disables it.
  std::vector<double> recency_slopes{1.0, 0.5, 0.0, 0.0};
  // Scale of the sinusoidal position code added to frames.
  double position_init_scale = 0.5;
  // Keep the position code fixed instead of training it.
  bool fixed_positions = true;
  // Add position codes to text positions too (frames always get them).
  bool text_positions = false;
  // Score class c by the position code at the frame position c denotes
  // (fractional between frames) plus a learned bias, instead of a free
  // linear head.
  bool tied_head = false;
  // Untied head only: start each column from the position code of the
  // frame its class denotes; otherwise the head starts at zero.
  bool head_from_positions = true;
  // At inference, forbid classes past the end of the audio.
  bool mask_beyond_audio = true;
  std::uint64_t init_seed = 7;

  std::int32_t time_id() const { return text_vocab_size; }
  std::int32_t num_classes() const { return grid.num_classes(); }
  std::int32_t frame_input_dim() const { return frame_delta ? 2 * feat_dim : feat_dim; }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, m); };
    if (feat_dim < 1 || model_dim < 1 || n_layers < 0 || n_heads < 1 || text_vocab_size < 1)
      fail("aligner dimensions must be positive");
    if (model_dim % n_heads != 0) fail("model_dim must be divisible by n_heads");
    if (max_seq_len < 2) fail("max_seq_len too small");
    if (frame_period_ms <= 0) fail("frame_period_ms must be positive");
    if (encoder_layers < 0) fail("encoder_layers must be >= 0");
    for (const auto* slopes : {&recency_slopes, &encoder_slopes}) {
      if (!slopes->empty() && slopes->size() != static_cast<std::size_t>(n_heads))
        fail("attention slopes need one entry per head");
      for (double v : *slopes)
        if (!(v >= 0.0)) fail("attention slopes must be non-negative");
    }
    if (!(position_init_scale > 0.0)) fail("position_init_scale must be positive");
  }
};

struct AlignedToken {
  std::int32_t token_index = 0;
  Millis start_ms = 0;
  Millis end_ms = 0;

  friend bool operator==(const AlignedToken&, const AlignedToken&) = default;
};

struct AlignmentResult {
  std::vector<AlignedToken> tokens;  // sorted by token_index
  double elapsed_ms = 0.0;
  std::int32_t forward_passes = 0;
  Millis audio_duration_ms = 0;
};

/// Frame matrix as model input; with `delta`, each row is extended by its
/// difference to the previous frame (the first frame differs from zero).
template <typename T>
Matrix<T> frame_input(const Matrix<float>& frames, bool delta) {
  const std::size_t n = frames.rows(), d = frames.cols();
  Matrix<T> out(n, delta ? 2 * d : d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out(r, c) = static_cast<T>(frames(r, c));
      if (delta) out(r, d + c) = static_cast<T>(frames(r, c)) - (r ? static_cast<T>(frames(r - 1, c)) : T(0));
    }
  }
  return out;
}

/// Slot-filling aligner: encoded frames and the slotted transcript are
/// concatenated, run through a causal transformer, and every text position
/// is scored by the timestamp head. Row p of the logits scores the class
/// belonging at position p itself.
template <typename T>
class AlignerModel {
 public:
  explicit AlignerModel(AlignerConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    const auto d = static_cast<std::size_t>(cfg_.model_dim);
    const auto classes = static_cast<std::size_t>(cfg_.num_classes());
    frame_w_ = &params_.add("frame_proj.w", static_cast<std::size_t>(cfg_.frame_input_dim()), d);
    frame_b_ = &params_.add("frame_proj.b", 1, d);
    nn::init_fan_in(*frame_w_, static_cast<std::size_t>(cfg_.frame_input_dim()), rng);
    tok_emb_ = &params_.add("tok_emb", static_cast<std::size_t>(cfg_.text_vocab_size) + 1, d);
    for (auto& v : tok_emb_->value.flat()) v = static_cast<T>(rng.normal(0.0, 1.0));

    Matrix<T> table(static_cast<std::size_t>(cfg_.max_seq_len), d);
    nn::fill_sinusoidal(table, kPositionBase, cfg_.position_init_scale);
    if (cfg_.fixed_positions) {
      fixed_pos_ = std::move(table);
    } else {
      pos_emb_ = &params_.add("pos_emb", table.rows(), d);
      pos_emb_->value = std::move(table);
    }

    const nn::BlockShape shape{d, static_cast<std::size_t>(cfg_.n_heads), 4};
    for (std::int32_t l = 0; l < cfg_.encoder_layers; ++l)
      encoder_.push_back(nn::add_block(params_, "encoder." + std::to_string(l), shape, rng));
    for (std::int32_t l = 0; l < cfg_.n_layers; ++l)
      blocks_.push_back(nn::add_block(params_, "blocks." + std::to_string(l), shape, rng));
    lnf_gain_ = &params_.add("ln_f.gain", 1, d);
    lnf_bias_ = &params_.add("ln_f.bias", 1, d);
    nn::init_constant(*lnf_gain_, T(1));
    if (cfg_.tied_head) {
      tied_w_.resize(d, classes);
      std::vector<T> code(d);
      for (std::size_t c = 0; c < classes; ++c) {
        nn::sinusoid<T>(class_position(static_cast<std::int32_t>(c)), kPositionBase, cfg_.position_init_scale, code);
        for (std::size_t k = 0; k < d; ++k) tied_w_(k, c) = code[k];
      }
    } else {
      head_w_ = &params_.add("head.w", d, classes);
      if (cfg_.head_from_positions) init_head_from_positions();
    }
    head_b_ = &params_.add("head.b", 1, classes);
    for (double v : cfg_.recency_slopes) slopes_.push_back(static_cast<T>(v));
    for (double v : cfg_.encoder_slopes) encoder_slopes_.push_back(static_cast<T>(v));
  }

  const AlignerConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  /// Logits [len(seq) x num_classes] over the text part.
  nn::Var forward(nn::Tape<T>& t, const Matrix<float>& frames, const SlotSequence& seq) const {
    if (frames.rows() == 0) throw Error(ErrorKind::kCapacity, "empty audio");
    if (static_cast<std::int32_t>(frames.cols()) != cfg_.feat_dim)
      throw Error(ErrorKind::kCapacity, "frame feat_dim does not match model");
    const std::size_t f = frames.rows(), l = seq.size();
    if (f + l > static_cast<std::size_t>(cfg_.max_seq_len))
      throw Error(ErrorKind::kCapacity, "sequence of " + std::to_string(f + l) +
                                            " positions exceeds max_seq_len " +
                                            std::to_string(cfg_.max_seq_len));
    for (auto id : seq.input_ids)
      if (id < 0 || id > cfg_.time_id()) throw Error(ErrorKind::kCapacity, "token id outside model vocabulary");
    const auto heads = static_cast<std::size_t>(cfg_.n_heads);

    nn::Var x = nn::linear(t, t.constant(frame_input<T>(frames, cfg_.frame_delta)), t.param(*frame_w_),
                           t.param(*frame_b_));
    for (const auto& b : encoder_) x = nn::block_forward(t, x, b, heads, /*causal=*/false, encoder_slopes_);
    const std::size_t n_pos = cfg_.text_positions ? f + l : f;
    nn::Var h = x;
    if (l > 0) h = nn::vstack(t, x, nn::embedding(t, t.param(*tok_emb_), seq.input_ids));
    nn::Var pos = positions(t, n_pos);
    if (n_pos < f + l) pos = nn::vstack(t, pos, t.constant(Matrix<T>(f + l - n_pos, h_cols())));
    h = nn::add(t, h, pos);
    for (const auto& b : blocks_) h = nn::block_forward(t, h, b, heads, /*causal=*/true, slopes_);
    h = nn::slice_rows(t, h, f, l);
    h = nn::layer_norm(t, h, t.param(*lnf_gain_), t.param(*lnf_bias_));
    const nn::Var w = cfg_.tied_head ? t.constant(tied_w_) : t.param(*head_w_);
    return nn::linear(t, h, w, t.param(*head_b_));
  }

  /// Mean cross-entropy over slot positions (labels are non-shifted).
  nn::Var loss(nn::Tape<T>& t, const Matrix<float>& frames, const SlotSequence& seq) const {
    if (!seq.has_slots()) throw Error(ErrorKind::kEmptyLoss, "sequence has no slots");
    std::vector<std::int32_t> labels(seq.labels.begin(), seq.labels.end());
    return nn::masked_cross_entropy(t, forward(t, frames, seq), std::move(labels));
  }
  /// Non-autoregressive slot filling: one forward pass, argmax per slot.
  AlignmentResult predict_slots(const Matrix<float>& frames, const SlotSequence& seq,
                                Millis frame_period_ms) const {
    AlignmentResult result;
    result.audio_duration_ms = static_cast<Millis>(frames.rows()) * frame_period_ms;
    if (!seq.has_slots()) return result;
    for (auto label : seq.labels)
      if (label != kIgnore) throw Error(ErrorKind::kRequest, "inference sequence carries labels");
    const auto t0 = std::chrono::steady_clock::now();
    nn::Tape<T> tape(/*record=*/false);
    const Matrix<T>& logits = tape.value(forward(tape, frames, seq));
    result.forward_passes = 1;
    const std::int32_t limit =
        cfg_.mask_beyond_audio ? discretize(result.audio_duration_ms, cfg_.grid) + 1 : cfg_.num_classes();
    for (const SlotInfo& s : seq.slots) {
      const auto row = logits.row(static_cast<std::size_t>(s.position));
      std::int32_t best = 0;
      for (std::int32_t c = 1; c < limit; ++c)
        if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(best)]) best = c;
      const Millis ms = to_milliseconds(best, cfg_.grid);
      if (result.tokens.empty() || result.tokens.back().token_index != s.token_index)
        result.tokens.push_back({s.token_index, 0, 0});
      (s.boundary == Boundary::kStart ? result.tokens.back().start_ms : result.tokens.back().end_ms) = ms;
    }
    result.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
  }

  AlignmentResult align(const Utterance& u, const std::vector<std::int32_t>& requested) const {
    const SlotSequence seq = build_inference_sequence(u.tokens, requested, cfg_.time_id());
    return predict_slots(u.frames, seq, u.frame_period_ms);
  }

 private:
  static constexpr double kPositionBase = 1000.0;

  std::size_t h_cols() const { return static_cast<std::size_t>(cfg_.model_dim); }

  // Class c denotes time c*step, i.e. frame position c*step/frame_period.
  double class_position(std::int32_t c) const {
    return static_cast<double>(c) * static_cast<double>(cfg_.grid.step_ms()) /
           static_cast<double>(cfg_.frame_period_ms);
  }

  nn::Var positions(nn::Tape<T>& t, std::size_t n) const {
    if (pos_emb_) return nn::leading_rows(t, t.param(*pos_emb_), n);
    Matrix<T> rows(n, h_cols());
    std::copy(fixed_pos_.data(), fixed_pos_.data() + rows.size(), rows.data());
    return t.constant(std::move(rows));
  }

  void init_head_from_positions() {
    Matrix<T>& w = head_w_->value;
    std::vector<T> code(w.rows());
    for (std::int32_t c = 0; c < cfg_.num_classes(); ++c) {
      const double frame = std::floor(class_position(c));
      nn::sinusoid<T>(frame, kPositionBase, 1.0, code);
      for (std::size_t k = 0; k < w.rows(); ++k) w(k, static_cast<std::size_t>(c)) = code[k];
    }
  }

  AlignerConfig cfg_;
  nn::ParameterSet<T> params_;
  nn::Parameter<T>* frame_w_;
  nn::Parameter<T>* frame_b_;
  nn::Parameter<T>* tok_emb_;
  nn::Parameter<T>* pos_emb_ = nullptr;
  Matrix<T> fixed_pos_;
  std::vector<nn::BlockParams<T>> encoder_;
  std::vector<nn::BlockParams<T>> blocks_;
  nn::Parameter<T>* lnf_gain_;
  nn::Parameter<T>* lnf_bias_;
  nn::Parameter<T>* head_w_ = nullptr;
  Matrix<T> tied_w_;
  nn::Parameter<T>* head_b_;
  std::vector<T> slopes_;
  std::vector<T> encoder_slopes_;
};

/// Trains on pseudo-label spans with a fresh dynamic insertion mask every
/// time a sample is visited.
template <typename T>
std::vector<TraceRow> train(AlignerModel<T>& model, const std::vector<Utterance>& corpus,
                            const TrainSchedule& schedule,
                            const std::function<void(const TraceRow&)>& on_log = {}) {
  const SampleLoss<T> sample_loss = [&](nn::Tape<T>& tape, const Utterance& u,
                                        Rng& rng) -> std::optional<nn::Var> {
    const auto mask = dynamic_insertion_mask(u.tokens.size(), rng, schedule.p_dynamic, schedule.p_token);
    const SlotSequence seq =
        build_slot_sequence(u.tokens, u.pseudo_spans, mask, model.config().grid, model.config().time_id());
    if (!seq.has_slots()) return std::nullopt;
    return model.loss(tape, u.frames, seq);
  };
  return train_loop(model.params(), corpus, schedule, sample_loss, on_log);
}

}  // namespace slotalign

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slotalign/corpus.hpp"
#include "slotalign/error.hpp"
#include "slotalign/nn.hpp"
#include "slotalign/optim.hpp"
#include "slotalign/rng.hpp"

namespace slotalign {

struct TrainSchedule {
  std::int64_t steps = 20000;
  std::int32_t batch_size = 8;
  std::int64_t warmup_steps = 1000;
  double peak_lr = 3e-4;
  double p_dynamic = 0.5;
  double p_token = 0.5;
  std::int64_t log_every = 100;
  std::uint64_t seed = 1;
  // During the first `curriculum_steps` steps only utterances with at most
  // `curriculum_max_frames` frames are drawn.
  std::int64_t curriculum_steps = 0;
  std::int64_t curriculum_max_frames = 0;
  // Batches are formed from length-sorted chunks of this many batches.
  std::int32_t bucket_batches = 8;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, m); };
    if (steps < 0) fail("steps must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
    if (!(p_dynamic >= 0.0 && p_dynamic <= 1.0) || !(p_token >= 0.0 && p_token <= 1.0))
      fail("insertion probabilities must lie in [0, 1]");
    if (log_every < 1) fail("log_every must be >= 1");
    if (bucket_batches < 1) fail("bucket_batches must be >= 1");
  }
};

struct TraceRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

/// Length-bucketed epoch sampler. Every epoch shuffles the eligible
/// utterances, sorts each chunk of `bucket_batches` batches by length and
/// shuffles the resulting batch order.
class BucketSampler {
 public:
  BucketSampler(const std::vector<Utterance>& corpus, std::int32_t batch_size,
                std::int32_t bucket_batches)
      : corpus_(corpus), batch_size_(batch_size), bucket_batches_(bucket_batches) {}

  std::vector<std::size_t> next_batch(Rng& rng, std::int64_t max_frames) {
    if (max_frames != max_frames_ || cursor_ >= batches_.size()) {
      max_frames_ = max_frames;
      refill(rng);
    }
    return batches_[cursor_++];
  }

 private:
  void refill(Rng& rng) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corpus_.size(); ++i)
      if (max_frames_ <= 0 || static_cast<std::int64_t>(corpus_[i].num_frames()) <= max_frames_)
        idx.push_back(i);
    if (idx.empty()) throw Error(ErrorKind::kConfig, "no training utterance fits the curriculum");
    shuffle(idx, rng);
    const std::size_t chunk = static_cast<std::size_t>(batch_size_) * static_cast<std::size_t>(bucket_batches_);
    batches_.clear();
    for (std::size_t lo = 0; lo < idx.size(); lo += chunk) {
      const std::size_t hi = std::min(idx.size(), lo + chunk);
      std::stable_sort(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(hi),
                       [&](std::size_t a, std::size_t b) { return corpus_[a].num_frames() < corpus_[b].num_frames(); });
      for (std::size_t b = lo; b < hi; b += static_cast<std::size_t>(batch_size_))
        batches_.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                              idx.begin() + static_cast<std::ptrdiff_t>(std::min(hi, b + static_cast<std::size_t>(batch_size_))));
    }
    shuffle(batches_, rng);
    cursor_ = 0;
  }

  template <typename V>
  static void shuffle(V& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }

  const std::vector<Utterance>& corpus_;
  std::int32_t batch_size_;
  std::int32_t bucket_batches_;
  std::int64_t max_frames_ = -1;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t cursor_ = 0;
};

/// Per-sample loss builder: records the forward pass for `u` on the tape and
/// returns the scalar loss node, or nullopt when the sample has nothing to
/// learn from (it is then skipped).
template <typename T>
using SampleLoss = std::function<std::optional<nn::Var>(nn::Tape<T>&, const Utterance& u, Rng& rng)>;

/// Shared optimisation loop: batch loss is the mean of per-sample losses,
/// minimised with Adam under linear warmup. Returns the logged loss trace.
template <typename T>
std::vector<TraceRow> train_loop(nn::ParameterSet<T>& params, const std::vector<Utterance>& corpus,
                                 const TrainSchedule& schedule, const SampleLoss<T>& sample_loss,
                                 const std::function<void(const TraceRow&)>& on_log = {}) {
  schedule.validate();
  if (corpus.empty()) throw Error(ErrorKind::kConfig, "empty training corpus");
  Rng rng(schedule.seed);
  BucketSampler sampler(corpus, schedule.batch_size, schedule.bucket_batches);
  nn::Adam<T> adam(params, nn::WarmupSchedule{schedule.peak_lr, schedule.warmup_steps});
  std::vector<TraceRow> trace;
  double window_loss = 0.0;
  std::int64_t window_n = 0;
  std::int64_t empty_batches = 0;

  while (adam.step_count() < schedule.steps) {
    const std::int64_t step = adam.step_count() + 1;
    const std::int64_t cap = step <= schedule.curriculum_steps ? schedule.curriculum_max_frames : 0;
    const auto batch = sampler.next_batch(rng, cap);
    params.zero_grad();
    double batch_loss = 0.0;
    std::int32_t used = 0;
    for (std::size_t i : batch) {
      nn::Tape<T> tape;
      const auto loss = sample_loss(tape, corpus[i], rng);
      if (!loss) continue;
      const double value = static_cast<double>(tape.value(*loss)(0, 0));
      if (!std::isfinite(value))
        throw Error(ErrorKind::kDivergence, "loss is " + std::to_string(value) + " at step " + std::to_string(step));
      tape.backward(*loss);
      batch_loss += value;
      ++used;
    }
    if (used == 0) {
      if (++empty_batches > 1000) throw Error(ErrorKind::kConfig, "no batch produced a loss");
      continue;
    }
    const T inv = T(1) / static_cast<T>(used);
    for (auto& p : params)
      for (auto& g : p.grad.flat()) g *= inv;
    const double lr = adam.step();
    window_loss += batch_loss / used;
    ++window_n;
    if (step % schedule.log_every == 0 || step == schedule.steps) {
      TraceRow row{step, window_loss / static_cast<double>(window_n), lr};
      trace.push_back(row);
      if (on_log) on_log(row);
      window_loss = 0.0;
      window_n = 0;
    }
  }
  return trace;
}

}  // namespace slotalign

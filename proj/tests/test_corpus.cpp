#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "slotalign/corpus.hpp"

using namespace slotalign;

namespace {

CorpusConfig small_cfg() {
  CorpusConfig c;
  c.frame_period_ms = 40;
  c.rng_seed = 99;
  return c;
}

}  // namespace

TEST(Corpus, GeneratedUtterancesAreWellFormed) {
  const auto cfg = small_cfg();
  const PrototypeTable protos(cfg);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto u = gen_utterance(cfg, protos, rng, "u" + std::to_string(i));
    ASSERT_EQ(check_utterance(u), "") << u.id;
    ASSERT_GE(u.tokens.size(), 3u);
    ASSERT_LE(u.tokens.size(), 7u);
    const int lang = language_of(u, cfg);
    for (std::size_t k = 0; k < u.tokens.size(); ++k) {
      ASSERT_EQ(u.tokens[k] / cfg.vocab_size, lang);
      if (k > 0) {
        ASSERT_NE(u.tokens[k], u.tokens[k - 1]);
      }
      const auto& s = u.gold_spans[k];
      ASSERT_EQ(s.start_ms % cfg.frame_period_ms, 0);
      ASSERT_EQ(s.end_ms % cfg.frame_period_ms, 0);
    }
    ASSERT_EQ(u.duration_ms(), u.gold_spans.back().end_ms);
    ASSERT_EQ(u.pseudo_spans, u.gold_spans);
  }
}

TEST(Corpus, GenerationIsDeterministic) {
  const auto cfg = small_cfg();
  const PrototypeTable protos(cfg);
  Rng a(11), b(11);
  EXPECT_EQ(gen_utterance(cfg, protos, a), gen_utterance(cfg, protos, b));
}

TEST(Corpus, FramesFollowPrototypes) {
  auto cfg = small_cfg();
  cfg.noise_sigma = 0.0;
  const PrototypeTable protos(cfg);
  Rng rng(1);
  const auto u = make_utterance(cfg, protos, {3, 7}, {80, 120}, rng);
  ASSERT_EQ(u.num_frames(), 5u);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto want = protos[f < 2 ? 3 : 7];
    for (std::size_t d = 0; d < u.feat_dim(); ++d) ASSERT_EQ(u.frames(f, d), want[d]);
  }
}

TEST(Corpus, DurationsRoundToWholeFrames) {
  const auto cfg = small_cfg();
  const PrototypeTable protos(cfg);
  Rng rng(1);
  const auto u = make_utterance(cfg, protos, {1, 2, 3}, {10, 59, 61}, rng);
  EXPECT_EQ(u.gold_spans[0].end_ms, 40);   // minimum one frame
  EXPECT_EQ(u.gold_spans[1].end_ms, 80);   // 59 -> 40
  EXPECT_EQ(u.gold_spans[2].end_ms, 160);  // 61 -> 80
  EXPECT_THROW(make_utterance(cfg, protos, {1}, {10, 20}, rng), Error);
  EXPECT_THROW(make_utterance(cfg, protos, {cfg.text_vocab_size()}, {40}, rng), Error);
}

TEST(Corpus, ConfigValidation) {
  auto cfg = small_cfg();
  cfg.tokens_per_utt_range = {5, 4};
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_cfg();
  cfg.frame_period_ms = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Corpus, ConcatenateOffsetsSpans) {
  const auto cfg = small_cfg();
  const PrototypeTable protos(cfg);
  Rng rng(2);
  const auto a = gen_utterance(cfg, protos, rng, "a");
  const auto b = gen_utterance(cfg, protos, rng, "b");
  const auto m = concatenate({&a, &b}, "ab");
  ASSERT_EQ(check_utterance(m), "");
  EXPECT_EQ(m.num_frames(), a.num_frames() + b.num_frames());
  EXPECT_EQ(m.tokens.size(), a.tokens.size() + b.tokens.size());
  const auto& s = m.gold_spans[a.tokens.size()];
  EXPECT_EQ(s.start_ms, a.duration_ms() + b.gold_spans[0].start_ms);
  EXPECT_EQ(m.frames(a.num_frames(), 0), b.frames(0, 0));
}

TEST(Corpus, MixReachesTargetWithinLimit) {
  const auto cfg = small_cfg();
  const PrototypeTable protos(cfg);
  Rng rng(3);
  std::vector<Utterance> pool;
  for (int i = 0; i < 20; ++i) pool.push_back(gen_utterance(cfg, protos, rng, "p" + std::to_string(i)));
  for (int i = 0; i < 50; ++i) {
    const Millis target = rng.uniform_int(2000, 8000);
    const auto m = mix_long_form(pool, target, 9000, rng, "m");
    ASSERT_EQ(check_utterance(m), "");
    ASSERT_LE(m.duration_ms(), 9000);
  }
  EXPECT_THROW(mix_long_form(std::vector<Utterance>{}, 1000, 2000, rng, "x"), Error);
}

TEST(Corpus, MixRejectsMismatchedPool) {
  auto cfg = small_cfg();
  const PrototypeTable protos(cfg);
  Rng rng(4);
  const auto a = gen_utterance(cfg, protos, rng, "a");
  cfg.frame_period_ms = 80;
  const auto b = gen_utterance(cfg, protos, rng, "b");
  EXPECT_THROW(concatenate({&a, &b}, "ab"), Error);
}

TEST(Corpus, JitterIsHalfNormalInMagnitude) {
  auto cfg = small_cfg();
  cfg.token_duration_range_ms = {160, 320};
  const PrototypeTable protos(cfg);
  Rng rng(6);
  const double sigma = 20.0;
  double sum = 0.0;
  std::size_t n = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto u = corrupt_labels(gen_utterance(cfg, protos, rng), 0, sigma, rng);
    ASSERT_EQ(check_utterance(u), "");
    // interior boundaries only; the first start and last end are clamped to the audio
    for (std::size_t k = 1; k < u.tokens.size(); ++k) {
      sum += std::abs(static_cast<double>(u.pseudo_spans[k].start_ms - u.gold_spans[k].start_ms));
      ++n;
    }
  }
  const double want = sigma * std::sqrt(2.0 / std::numbers::pi);
  EXPECT_NEAR(sum / static_cast<double>(n), want, 0.05 * want);
}

TEST(Corpus, BiasShiftsPseudoLabels) {
  auto cfg = small_cfg();
  cfg.token_duration_range_ms = {160, 320};
  const PrototypeTable protos(cfg);
  Rng rng(7);
  const auto u = corrupt_labels(gen_utterance(cfg, protos, rng), 40, 0.0, rng);
  for (std::size_t k = 1; k < u.tokens.size(); ++k)
    EXPECT_EQ(u.pseudo_spans[k].start_ms, u.gold_spans[k].start_ms + 40);
  EXPECT_LE(u.pseudo_spans.back().end_ms, u.duration_ms());
}

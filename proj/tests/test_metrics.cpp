#include <gtest/gtest.h>

#include "slotalign/metrics.hpp"

using namespace slotalign;

namespace {

Utterance three_tokens() {
  Utterance u;
  u.id = "u";
  u.frame_period_ms = 40;
  u.frames.resize(10, 2);
  u.tokens = {1, 2, 3};
  u.gold_spans = {{1, 0, 120}, {2, 120, 280}, {3, 280, 400}};
  u.pseudo_spans = {{1, 40, 160}, {2, 160, 280}, {3, 280, 400}};
  return u;
}

AlignmentResult result_of(std::vector<AlignedToken> toks) {
  AlignmentResult r;
  r.tokens = std::move(toks);
  r.forward_passes = 1;
  r.elapsed_ms = 2.0;
  return r;
}

}  // namespace

TEST(Metrics, AasWorkedExample) {
  EXPECT_DOUBLE_EQ(aas({0, 100, 250}, {0, 120, 200}), 70.0 / 3.0);
  EXPECT_DOUBLE_EQ(aas({5}, {5}), 0.0);
  EXPECT_THROW(aas({}, {}), Error);
  EXPECT_THROW(aas({1, 2}, {1}), Error);
}

TEST(Metrics, AasIsSymmetricAndNonNegative) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<Millis> a(5), b(5);
    for (auto& x : a) x = rng.uniform_int(0, 5000);
    for (auto& x : b) x = rng.uniform_int(0, 5000);
    ASSERT_GE(aas(a, b), 0.0);
    ASSERT_DOUBLE_EQ(aas(a, b), aas(b, a));
    ASSERT_DOUBLE_EQ(aas(a, a), 0.0);
  }
}

TEST(Metrics, Rtf) {
  EXPECT_DOUBLE_EQ(rtf(15.9, 1000.0), 0.0159);
  EXPECT_THROW(rtf(1.0, 0.0), Error);
}

TEST(Metrics, Monotonicity) {
  auto ok = result_of({{0, 0, 40}, {1, 40, 80}});
  EXPECT_EQ(monotonicity_violations(ok).violations, 0);
  EXPECT_EQ(monotonicity_violations(ok).checks, 3);
  auto bad = result_of({{0, 80, 40}, {1, 40, 80}});
  EXPECT_EQ(monotonicity_violations(bad).violations, 1);
  auto overlap = result_of({{0, 0, 120}, {1, 80, 160}});
  EXPECT_EQ(monotonicity_violations(overlap).violations, 1);
  EXPECT_DOUBLE_EQ(monotonicity_violations(overlap).rate(), 1.0 / 3.0);
}

TEST(Metrics, BoundaryShiftsUseOrdinals) {
  const auto u = three_tokens();
  const auto r = result_of({{0, 40, 120}, {2, 280, 360}});
  const auto s = boundary_shifts(r, u, Reference::kGold);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0].ordinal, 0);
  EXPECT_EQ(s[0].shift_ms, 40);
  EXPECT_EQ(s[2].ordinal, 4);
  EXPECT_EQ(s[3].ordinal, 5);
  EXPECT_EQ(s[3].shift_ms, -40);
  EXPECT_EQ(boundary_shifts(r, u, Reference::kPseudo)[0].shift_ms, 0);
  EXPECT_THROW(boundary_shifts(result_of({{5, 0, 40}}), u, Reference::kGold), Error);
}

TEST(Metrics, ShiftCurveBuckets) {
  const std::vector<BoundaryShift> s{{0, 10}, {3, -30}, {12, 50}, {19, 0}, {25, 20}};
  const auto c = shift_curve(s, 10);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].ordinal, 0);
  EXPECT_DOUBLE_EQ(c[0].mean_abs_shift_ms, 20.0);
  EXPECT_EQ(c[0].n, 2);
  EXPECT_EQ(c[1].ordinal, 10);
  EXPECT_DOUBLE_EQ(c[1].mean_abs_shift_ms, 25.0);
  EXPECT_EQ(c[2].n, 1);
  EXPECT_THROW(shift_curve(s, 0), Error);
  EXPECT_EQ(curve_tsv(c).substr(0, 28), "ordinal\tmean_abs_shift_ms\tn\n");
}

TEST(Metrics, ShiftSlopeRecoversLinearDrift) {
  std::vector<BoundaryShift> s;
  for (std::int64_t k = 0; k < 100; ++k) s.push_back({k, static_cast<Millis>(3 * k + 7)});
  EXPECT_NEAR(shift_slope(s), 3.0, 1e-12);
  std::vector<BoundaryShift> flat;
  for (std::int64_t k = 0; k < 100; ++k) flat.push_back({k, k % 2 ? 40 : -40});
  EXPECT_NEAR(shift_slope(flat), 0.0, 1e-12);
  EXPECT_EQ(shift_slope({}), 0.0);
}

TEST(Metrics, ScoreSuite) {
  const std::vector<Utterance> suite{three_tokens()};
  const std::vector<AlignmentResult> results{result_of({{0, 0, 120}, {1, 120, 320}, {2, 280, 400}})};
  const auto rep = score_suite("raw", suite, results, Reference::kGold, true);
  EXPECT_EQ(rep.slots, 6);
  EXPECT_DOUBLE_EQ(rep.aas_ms, 40.0 / 6.0);
  EXPECT_DOUBLE_EQ(rep.mean_signed_shift_ms, 40.0 / 6.0);
  EXPECT_TRUE(rep.structure_ok);
  EXPECT_EQ(rep.monotonicity.violations, 1);
  EXPECT_EQ(rep.max_forward_passes, 1);
  EXPECT_DOUBLE_EQ(rep.rtf, 2.0 / 400.0);

  const std::vector<AlignmentResult> partial{result_of({{0, 0, 120}})};
  EXPECT_FALSE(score_suite("raw", suite, partial, Reference::kGold, true).structure_ok);
  EXPECT_TRUE(score_suite("raw", suite, partial, Reference::kGold, false).structure_ok);
  EXPECT_THROW(score_suite("raw", suite, {}, Reference::kGold, true), Error);
}

TEST(Metrics, JsonTimingIsSeparable) {
  const std::vector<Utterance> suite{three_tokens()};
  const auto rep = score_suite("raw", suite, {result_of({{0, 0, 120}, {1, 120, 280}, {2, 280, 400}})},
                               Reference::kGold, true);
  const auto with = to_json(rep, true);
  const auto without = to_json(rep, false);
  EXPECT_TRUE(with.contains("timing"));
  EXPECT_FALSE(without.contains("timing"));
  EXPECT_EQ(without.at("aas_ms").get<double>(), 0.0);
}

TEST(Metrics, SuitesAreDeterministicAndWellFormed) {
  CorpusConfig cfg;
  cfg.frame_period_ms = 40;
  SuiteConfig sc;
  sc.raw_count = 10;
  sc.mixed_short_count = 4;
  sc.mixed_long_count = 4;
  sc.crossvocab_count = 4;
  sc.pool_size = 20;
  const PrototypeTable protos(cfg);
  const auto a = build_suites(cfg, protos, sc);
  const auto b = build_suites(cfg, protos, sc);
  EXPECT_EQ(a.mixed_long, b.mixed_long);
  for (const auto& [name, suite] : a.named()) {
    for (const auto& u : *suite) ASSERT_EQ(check_utterance(u), "") << name;
  }
  for (const auto& u : a.mixed_long) {
    EXPECT_GE(u.duration_ms() + 2240, sc.mixed_long_range_ms.min);  // a part that would overshoot the maximum is dropped
    EXPECT_LE(u.duration_ms(), sc.mixed_long_range_ms.max);
  }
  for (const auto& u : a.mixed_crossvocab) {
    std::set<int> langs;
    for (auto t : u.tokens) langs.insert(t / cfg.vocab_size);
    EXPECT_EQ(langs.size(), 2u);
  }
}

#include <gtest/gtest.h>

#include "slotalign/rng.hpp"
#include "slotalign/timegrid.hpp"

using namespace slotalign;

TEST(TimeGrid, ClassCountsForPublishedSteps) {
  EXPECT_EQ(TimeGrid(120, 300000).num_classes(), 2500);
  EXPECT_EQ(TimeGrid(80, 300000).num_classes(), 3750);
  EXPECT_EQ(TimeGrid(40, 300000).num_classes(), 7500);
  EXPECT_EQ(TimeGrid(40, 30000).num_classes(), 750);
}

TEST(TimeGrid, NonDivisibleMaxRoundsUp) { EXPECT_EQ(TimeGrid(80, 1000).num_classes(), 13); }

TEST(TimeGrid, RejectsNonPositiveParameters) {
  for (auto [step, max] : {std::pair<Millis, Millis>{0, 1000}, {-40, 1000}, {80, 0}, {80, -5}}) {
    try {
      TimeGrid g(step, max);
      FAIL() << "accepted step=" << step << " max=" << max;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kInvalidGrid);
    }
  }
}

TEST(TimeGrid, DiscretizeExamples) {
  const TimeGrid g(80, 300000);
  EXPECT_EQ(discretize(0, g), 0);
  EXPECT_EQ(discretize(79, g), 0);
  EXPECT_EQ(discretize(80, g), 1);
  EXPECT_EQ(discretize(960, g), 12);
  EXPECT_EQ(to_milliseconds(12, g), 960);
}

TEST(TimeGrid, ClampsPastTheEnd) {
  const TimeGrid g(80, 300000);
  EXPECT_EQ(discretize(300000, g), 3749);
  EXPECT_EQ(discretize(10'000'000, g), 3749);
}

TEST(TimeGrid, RejectsNegativeTimeAndBadIndex) {
  const TimeGrid g(40, 30000);
  try {
    discretize(-1, g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidTimestamp);
  }
  for (TimeIndex idx : {-1, 750}) {
    try {
      to_milliseconds(idx, g);
      FAIL() << idx;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kInvalidIndex);
    }
  }
}

// Round trip never moves a timestamp forward and loses less than one step.
TEST(TimeGrid, RoundTripBoundProperty) {
  for (Millis step : {40, 80, 120}) {
    const TimeGrid g(step, 300000);
    Rng rng(static_cast<std::uint64_t>(step));
    for (int i = 0; i < 20000; ++i) {
      const Millis t = rng.uniform_int(0, g.max_duration_ms() - 1);
      const Millis back = to_milliseconds(discretize(t, g), g);
      ASSERT_LE(back, t);
      ASSERT_LT(t - back, step);
    }
  }
}

TEST(TimeGrid, DiscretizeIsMonotone) {
  const TimeGrid g(40, 30000);
  TimeIndex prev = 0;
  for (Millis t = 0; t < 31000; t += 7) {
    const TimeIndex k = discretize(t, g);
    ASSERT_GE(k, prev);
    prev = k;
  }
}

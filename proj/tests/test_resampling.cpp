#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracle_uq/random.hpp"
#include "oracle_uq/resampling.hpp"
#include "support.hpp"

namespace oracle_uq {
namespace {

using test_support::code_of;
using test_support::random_outcomes;

TEST(Quantile, LinearInterpolation) {
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile_linear(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_linear(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile_linear(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_linear(v, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile_linear(std::vector<double>{7}, 0.3), 7.0);
  EXPECT_EQ(code_of([] { quantile_linear(std::vector<double>{}, 0.5); }), ErrorCode::kEmptyInput);
}

TEST(Bootstrap, IdenticalRecordsGiveZeroWidth) {
  const std::vector<Outcome> xs(50, Outcome{0.7, true});
  for (Metric m : {Metric::kAccuracy, Metric::kEce, Metric::kBrier, Metric::kNll}) {
    const auto ci = bootstrap_ci(xs, m, 200, 3);
    EXPECT_DOUBLE_EQ(ci.lo, ci.point);
    EXPECT_DOUBLE_EQ(ci.hi, ci.point);
    EXPECT_EQ(ci.skipped, 0);
  }
}

TEST(Bootstrap, SeedDeterminism) {
  std::mt19937_64 rng(11);
  const auto xs = random_outcomes(rng, 300);
  const auto a = bootstrap_ci(xs, Metric::kBrier, 300, 9);
  const auto b = bootstrap_ci(xs, Metric::kBrier, 300, 9);
  // Seeds 9 and 10 would share all but one resample.
  const auto c = bootstrap_ci(xs, Metric::kBrier, 300, 9 + 300);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_TRUE(a.lo != c.lo || a.hi != c.hi);
}

TEST(Bootstrap, MatchesDocumentedResamplingScheme) {
  std::mt19937_64 gen(12);
  const auto xs = random_outcomes(gen, 80);
  const int b = 250;
  std::vector<double> stats;
  for (int i = 0; i < b; ++i) {
    Rng rng(100 + static_cast<std::uint64_t>(i));
    double hits = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) hits += xs[uniform_index(rng, xs.size())].correct;
    stats.push_back(hits / static_cast<double>(xs.size()));
  }
  std::sort(stats.begin(), stats.end());
  auto q = [&](double p) {
    const double h = p * (b - 1);
    const auto lo = static_cast<std::size_t>(h);
    return stats[lo] + (h - lo) * (stats[std::min<std::size_t>(lo + 1, b - 1)] - stats[lo]);
  };
  const auto ci = bootstrap_ci(xs, Metric::kAccuracy, b, 100);
  EXPECT_DOUBLE_EQ(ci.lo, q(0.025));
  EXPECT_DOUBLE_EQ(ci.hi, q(0.975));
  EXPECT_DOUBLE_EQ(ci.point, accuracy(xs));
}

TEST(Bootstrap, NarrowerLevelNests) {
  std::mt19937_64 rng(13);
  const auto xs = random_outcomes(rng, 400);
  for (Metric m : kAllMetrics) {
    const auto wide = bootstrap_ci(xs, m, 500, 4, 0.95);
    const auto narrow = bootstrap_ci(xs, m, 500, 4, 0.90);
    EXPECT_LE(wide.lo, narrow.lo);
    EXPECT_GE(wide.hi, narrow.hi);
  }
  // ECE is biased upward under resampling, so only the mean is checked for coverage.
  const auto acc = bootstrap_ci(xs, Metric::kAccuracy, 500, 4);
  EXPECT_LE(acc.lo, acc.point);
  EXPECT_GE(acc.hi, acc.point);
}

TEST(Bootstrap, BernoulliWidthMatchesNormalApproximation) {
  std::mt19937_64 rng(14);
  std::vector<Outcome> xs(1000);
  for (auto& x : xs) {
    x.confidence = 0.5;
    x.correct = rng() % 2 == 0;
  }
  const double p = accuracy(xs);
  const double expected = 2 * 1.959964 * std::sqrt(p * (1 - p) / 1000.0);
  const auto ci = bootstrap_ci(xs, Metric::kAccuracy, 2000, 1);
  EXPECT_NEAR(ci.hi - ci.lo, expected, 0.1 * expected);
  EXPECT_NEAR(expected, 0.062, 0.001);
}

TEST(Bootstrap, SkippedResamplesAreCounted) {
  std::vector<Outcome> xs(60, Outcome{0.4, false});
  for (int i = 0; i < 3; ++i) xs[i].correct = true;
  int undefined = 0;
  const OutcomeMetric metric = [&](std::span<const Outcome> s) -> std::optional<double> {
    if (std::none_of(s.begin(), s.end(), [](const Outcome& o) { return o.correct; })) {
      ++undefined;
      return std::nullopt;
    }
    return accuracy(s);
  };
  const auto ci = bootstrap_ci(xs, metric, 1000, 5);
  EXPECT_EQ(ci.skipped, undefined);
  EXPECT_GT(ci.skipped, 0);
  EXPECT_LE(ci.skipped, 100);
  EXPECT_EQ(ci.resamples, 1000);
}

TEST(Bootstrap, TooManySkippedIsAnError) {
  std::vector<Outcome> xs(30, Outcome{0.4, false});
  xs[0].correct = true;
  EXPECT_EQ(code_of([&] { bootstrap_ci(xs, Metric::kAuroc, 500, 1); }), ErrorCode::kMetricUndefined);
  const std::vector<Outcome> one_class(10, Outcome{0.4, false});
  EXPECT_EQ(code_of([&] { bootstrap_ci(one_class, Metric::kAuroc, 100, 1); }), ErrorCode::kMetricUndefined);
}

TEST(Bootstrap, ArgumentValidation) {
  const std::vector<Outcome> xs(5, Outcome{0.5, true});
  EXPECT_EQ(code_of([&] { bootstrap_ci(std::vector<Outcome>{}, Metric::kAccuracy); }), ErrorCode::kEmptyInput);
  EXPECT_EQ(code_of([&] { bootstrap_ci(xs, Metric::kAccuracy, 0); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { bootstrap_ci(xs, Metric::kAccuracy, 10, 0, 1.0); }), ErrorCode::kInvalidArgument);
}

TEST(AttachCis, FillsEveryDefinedMetric) {
  std::mt19937_64 rng(15);
  std::vector<EvalRecord> rs;
  for (const char* m : {"a", "b"}) {
    const auto xs = random_outcomes(rng, 100);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      EvalRecord r;
      r.key = {"w" + std::to_string(i % 10), static_cast<int>(i / 10), 0};
      r.method = m;
      r.confidence = xs[i].confidence;
      r.correct = xs[i].correct;
      rs.push_back(r);
    }
  }
  EvalRecord flat;
  flat.key = {"w0", 0, 0};
  flat.method = "c";
  flat.confidence = 0.5;
  flat.correct = true;
  rs.push_back(flat);
  auto card = scorecard(rs);
  attach_cis(card, rs, 200, 2);
  for (const char* m : {"a", "b"}) {
    const auto* row = card.find(m);
    ASSERT_NE(row, nullptr);
    EXPECT_EQ(row->ci.size(), 5u);
    for (const auto& [metric, ci] : row->ci) {
      EXPECT_LE(ci.lo, ci.hi);
      EXPECT_EQ(ci.resamples, 200);
    }
    EXPECT_DOUBLE_EQ(row->ci.at(Metric::kAccuracy).point, row->metrics.accuracy);
  }
  const auto* c = card.find("c");
  ASSERT_NE(c, nullptr);
  EXPECT_FALSE(c->ci.count(Metric::kAuroc));
  EXPECT_EQ(c->ci.size(), 4u);
}

}  // namespace
}  // namespace oracle_uq

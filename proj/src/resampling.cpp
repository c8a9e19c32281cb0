#include "oracle_uq/resampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "oracle_uq/error.hpp"
#include "oracle_uq/random.hpp"

namespace oracle_uq {

double quantile_linear(std::span<const double> sorted, double q) {
  require(!sorted.empty(), ErrorCode::kEmptyInput, "quantile of no values");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

CIResult bootstrap_ci(std::span<const Outcome> xs, const OutcomeMetric& metric, int resamples,
                      std::uint64_t seed, double level) {
  require(!xs.empty(), ErrorCode::kEmptyInput, "bootstrap of no records");
  require(resamples >= 1, ErrorCode::kInvalidArgument, "need at least one resample");
  require(level > 0.0 && level < 1.0, ErrorCode::kInvalidArgument, "level must lie in (0, 1)");
  const auto point = metric(xs);
  require(point.has_value(), ErrorCode::kMetricUndefined, "metric undefined on the full sample");

  std::vector<double> stats;
  stats.reserve(resamples);
  std::vector<Outcome> draw(xs.size());
  int skipped = 0;
  for (int i = 0; i < resamples; ++i) {
    Rng rng(seed + static_cast<std::uint64_t>(i));
    for (auto& d : draw) d = xs[uniform_index(rng, xs.size())];
    if (const auto v = metric(draw)) {
      stats.push_back(*v);
    } else {
      ++skipped;
    }
  }
  require(skipped * 10 <= resamples, ErrorCode::kMetricUndefined,
          "metric undefined on " + std::to_string(skipped) + " of " + std::to_string(resamples) +
              " resamples");
  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - level) / 2.0;
  CIResult out;
  out.point = *point;
  out.lo = quantile_linear(stats, tail);
  out.hi = quantile_linear(stats, 1.0 - tail);
  out.resamples = resamples;
  out.skipped = skipped;
  out.level = level;
  return out;
}

CIResult bootstrap_ci(std::span<const Outcome> xs, Metric metric, int resamples, std::uint64_t seed,
                      double level) {
  return bootstrap_ci(
      xs, [metric](std::span<const Outcome> s) { return evaluate(metric, s); }, resamples, seed, level);
}

void attach_cis(Scorecard& card, std::span<const EvalRecord> records, int resamples, std::uint64_t seed,
                double level) {
  std::map<std::string, std::vector<Outcome>> groups;
  for (const auto& r : records) groups[r.method].push_back({r.confidence, r.correct});
  for (auto& row : card.rows) {
    const auto& xs = groups.at(row.method);
    for (Metric m : kAllMetrics) {
      if (m == Metric::kAuroc && !row.metrics.auroc) continue;
      try {
        row.ci[m] = bootstrap_ci(xs, m, resamples, seed, level);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kMetricUndefined) throw;
      }
    }
  }
}

}  // namespace oracle_uq

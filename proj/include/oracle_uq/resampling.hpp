#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "oracle_uq/metrics.hpp"

namespace oracle_uq {

using OutcomeMetric = std::function<std::optional<double>(std::span<const Outcome>)>;

/// Type-7 quantile: linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty; q in [0, 1].
double quantile_linear(std::span<const double> sorted, double q);

/// Percentile bootstrap. Resample i draws n items with replacement from a
/// generator seeded with seed + i. Resamples on which the metric is
/// undefined are skipped and counted; more than 10% skipped is an error.
CIResult bootstrap_ci(std::span<const Outcome> xs, const OutcomeMetric& metric, int resamples = 1000,
                      std::uint64_t seed = 0, double level = 0.95);

CIResult bootstrap_ci(std::span<const Outcome> xs, Metric metric, int resamples = 1000,
                      std::uint64_t seed = 0, double level = 0.95);

/// Fills ScorecardRow::ci for every metric of every row.
void attach_cis(Scorecard& card, std::span<const EvalRecord> records, int resamples = 1000,
                std::uint64_t seed = 0, double level = 0.95);

}  // namespace oracle_uq

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace oracle_uq {

struct SampleKey {
  std::string word;  // target word a*
  int context_id = 0;
  int verbalizer_id = 0;

  friend auto operator<=>(const SampleKey&, const SampleKey&) = default;
};

struct EvalRecord {
  SampleKey key;
  std::string method;  // MethodConfig::label()
  nlohmann::json params = nlohmann::json::object();
  std::optional<std::string> answer;
  double confidence = 0.0;
  bool correct = false;
  std::vector<std::string> flags;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
};

void to_json(nlohmann::json& j, const EvalRecord& r);
void from_json(const nlohmann::json& j, EvalRecord& r);

/// Sort by (word, context, verbalizer, method): the order every downstream
/// statistic is computed in, so results do not depend on execution order.
void canonical_sort(std::vector<EvalRecord>& records);

struct Outcome {
  double confidence = 0.0;
  bool correct = false;
};

std::vector<Outcome> outcomes_of(std::span<const EvalRecord> records);

inline constexpr double kDefaultNllEpsilon = 1e-9;
inline constexpr int kReliabilityBins = 10;

double accuracy(std::span<const Outcome> xs);
double ece(std::span<const Outcome> xs);
double brier(std::span<const Outcome> xs);
double nll(std::span<const Outcome> xs, double epsilon = kDefaultNllEpsilon);

/// Mann-Whitney statistic with half credit for ties; nullopt when either
/// class is empty.
std::optional<double> auroc(std::span<const Outcome> xs);

/// Bin index for a confidence: [0,.1), ..., [.8,.9), [.9,1.0].
int reliability_bin(double confidence);

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 when empty
  double accuracy = 0.0;         // 0 when empty
};

struct ReliabilityBins {
  std::array<ReliabilityBin, kReliabilityBins> bins;
  std::size_t n = 0;
};

ReliabilityBins reliability_bins(std::span<const Outcome> xs);

struct ConfidenceSplit {
  double mean_correct = 0.0;
  double mean_wrong = 0.0;
  double delta = 0.0;
};

ConfidenceSplit confidence_split(std::span<const Outcome> xs);

enum class Metric { kAccuracy, kEce, kBrier, kNll, kAuroc };

inline constexpr std::array<Metric, 5> kAllMetrics{Metric::kAccuracy, Metric::kEce, Metric::kBrier,
                                                   Metric::kNll, Metric::kAuroc};

std::string_view to_string(Metric m);
bool higher_is_better(Metric m);
std::optional<double> evaluate(Metric m, std::span<const Outcome> xs);

struct CIResult {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int resamples = 0;
  int skipped = 0;
  double level = 0.95;
};

struct MetricRow {
  std::size_t n = 0;
  double accuracy = 0.0;
  double ece = 0.0;
  double brier = 0.0;
  double nll = 0.0;
  std::optional<double> auroc;

  std::optional<double> get(Metric m) const;
};

MetricRow metric_row(std::span<const Outcome> xs);

struct ScorecardRow {
  std::string method;
  MetricRow metrics;
  std::map<Metric, CIResult> ci;
};

struct Scorecard {
  std::vector<ScorecardRow> rows;

  const ScorecardRow* find(std::string_view method) const;
};

/// One row per method label. Rows follow `order` where given; methods not
/// listed come after, sorted by label.
Scorecard scorecard(std::span<const EvalRecord> records, std::span<const std::string> order = {});

struct RankRow {
  std::string method;
  std::array<double, 5> ranks{};  // in kAllMetrics order
  double mean_rank = 0.0;
};

/// Average ranks for ties; an undefined AUROC ranks below every defined one.
/// Rows sorted by mean rank, stable on scorecard order.
std::vector<RankRow> rank_summary(const Scorecard& card);

struct WordAccuracy {
  std::string word;
  std::size_t n = 0;
  double accuracy = 0.0;
};

struct PerWordTable {
  std::vector<WordAccuracy> rows;     // accuracy descending, then word
  std::vector<std::string> missing;   // expected words with no records
};

PerWordTable per_word_breakdown(std::span<const EvalRecord> records,
                                std::span<const std::string> expected_words = {});

nlohmann::json to_json(const Scorecard& card);
nlohmann::json to_json(const ReliabilityBins& bins);
nlohmann::json to_json(const std::vector<RankRow>& ranks);
nlohmann::json to_json(const PerWordTable& table);

/// "0.400 [0.350, 0.450]" style cell.
std::string format_ci(const CIResult& ci);

std::string format_scorecard(const Scorecard& card);
std::string format_rank_summary(const std::vector<RankRow>& ranks);
std::string format_reliability(const ReliabilityBins& bins);
std::string format_per_word(const PerWordTable& table);

}  // namespace oracle_uq

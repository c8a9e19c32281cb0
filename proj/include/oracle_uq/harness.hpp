#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "oracle_uq/answer.hpp"
#include "oracle_uq/calibration.hpp"
#include "oracle_uq/methods.hpp"
#include "oracle_uq/metrics.hpp"
#include "oracle_uq/model.hpp"

namespace oracle_uq {

struct RunConfig {
  std::string backend;             // synthetic:PRESET | remote:URL
  std::vector<std::string> words;  // empty: the backend's own vocabulary
  int contexts = 5;
  int verbalizers = 1;
  std::vector<std::string> methods;  // method labels; empty: the 16-row grid
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  int jobs = 1;
  std::optional<int> n_words;  // seeded subset of the vocabulary
  std::vector<int> controlled_n{2, 5, 10, 20};
  std::map<int, std::vector<std::string>> controlled_n_lists;  // explicit sets
  std::optional<std::vector<std::string>> holdout_words;        // for tune-t
  Prompts prompts;
  std::vector<std::string> verbalizer_prompts;
  int read_layer = 0;
  int injection_layer = 1;
  int positions = 1;
  int ci_resamples = 1000;
  std::uint64_t ci_seed = 0;
  std::optional<std::size_t> max_cells;  // stop after this many new cells

  void validate() const;
  /// Everything that determines record contents, with the resolved word
  /// list and method labels; excludes out, jobs and max_cells.
  nlohmann::json snapshot(const TabooVocabulary& vocab) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::string& path);

struct Backend {
  std::unique_ptr<SteeredModel> model;
  std::optional<TabooVocabulary> vocab;  // known for synthetic presets
};

Backend open_backend(const std::string& selector);

std::vector<MethodConfig> resolve_methods(const RunConfig& config);
TabooVocabulary resolve_vocab(const RunConfig& config, const Backend& backend);

/// Seeded permutation of `words`; its prefixes are the controlled-N subsets.
std::vector<std::string> seeded_word_order(const std::vector<std::string>& words, std::uint64_t seed);

/// Samples in (word, context, verbalizer) order for the vocabulary's words.
std::vector<SampleKey> sample_keys(const TabooVocabulary& vocab, const RunConfig& config);

ChatContext make_context(const RunConfig& config, const SampleKey& key);
std::uint64_t cell_seed(std::uint64_t global_seed, const SampleKey& key, const MethodConfig& method);
nlohmann::json method_params(const MethodConfig& method);

EvalRecord run_cell(const SteeredModel& model, const TabooVocabulary& vocab, const RunConfig& config,
                    const SampleKey& key, const MethodConfig& method);

/// Append-only JSONL record store with a completion index. The index names
/// the byte length and record count of the committed prefix; anything after
/// it is an interrupted write and is dropped on open.
class RunLedger {
 public:
  /// Creates the directory and config snapshot, or reopens an existing run
  /// whose snapshot matches. A mismatched snapshot is refused.
  static RunLedger open(const std::filesystem::path& dir, const nlohmann::json& snapshot);
  /// Reopens an existing run, reading its snapshot.
  static RunLedger reopen(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  const nlohmann::json& snapshot() const { return snapshot_; }
  const std::vector<EvalRecord>& records() const { return records_; }
  bool contains(const SampleKey& key, const std::string& method) const;

  void append(const std::vector<EvalRecord>& batch);
  void record_failure(const SampleKey& key, const std::string& method, const std::string& message);

 private:
  RunLedger() = default;
  void load();

  std::filesystem::path dir_;
  nlohmann::json snapshot_;
  std::vector<EvalRecord> records_;
  std::map<std::pair<SampleKey, std::string>, std::size_t> index_;
  std::uintmax_t committed_bytes_ = 0;
};

/// Records sorted canonically, one JSON line each, with the volatile
/// wall_ms field zeroed: the form two runs are compared in.
std::string canonical_ledger_text(std::vector<EvalRecord> records);

std::vector<EvalRecord> load_records(const std::filesystem::path& dir);

struct RunSummary {
  std::size_t total = 0;
  std::size_t already_done = 0;
  std::size_t executed = 0;
  std::size_t failed = 0;

  bool complete() const { return already_done + executed == total; }
};

RunSummary run(const RunConfig& config, const SteeredModel& model, const TabooVocabulary& vocab,
               RunLedger& ledger);

struct ScorecardReport {
  Scorecard card;
  std::vector<RankRow> ranks;
  std::map<std::string, ReliabilityBins> reliability;
  std::map<std::string, PerWordTable> per_word;
  std::map<std::string, std::optional<ConfidenceSplit>> split;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Metrics recomputed from records in canonical order.
ScorecardReport scorecard_report(std::vector<EvalRecord> records, std::span<const std::string> method_order = {},
                                 std::span<const std::string> expected_words = {});

/// Mean mode frequency against accuracy on the holdout words, per bootstrap
/// temperature; the smallest gap wins, ties to the smaller temperature.
struct TemperatureTuning {
  double best = 0.0;
  std::map<double, double> gap;  // temperature -> |mean confidence - accuracy|
};

TemperatureTuning tune_bootstrap_temperature(std::span<const EvalRecord> records,
                                             const std::vector<std::string>& holdout_words);

/// Bootstrap temperature with the lowest ECE over all records.
double ece_argmin_temperature(std::span<const EvalRecord> records);

struct CalibrationCell {
  std::optional<double> ece;  // nullopt when the fit slice is single-class
  std::optional<nlohmann::json> model;
};

struct CalibrationRow {
  std::string method;
  SplitSpec split;
  double uncalibrated = 0.0;
  std::map<CalibratorKind, CalibrationCell> cells;
  bool flagged = false;
};

std::vector<CalibrationRow> calibrate_report(std::span<const EvalRecord> records,
                                             const std::vector<SplitSpec>& splits,
                                             std::span<const CalibratorKind> kinds = kAllCalibrators,
                                             std::span<const std::string> method_order = {});
nlohmann::json to_json(const std::vector<CalibrationRow>& rows);
std::string format_calibration(const std::vector<CalibrationRow>& rows);

struct ControlledNResult {
  int n = 0;
  std::vector<std::string> words;
  Scorecard card;
};

/// Nested seeded subsets (or explicit lists from the config), each run into
/// out/n<N> with extraction restricted to the subset.
std::vector<ControlledNResult> sweep_controlled_n(const RunConfig& config, const SteeredModel& model,
                                                  const TabooVocabulary& vocab, std::vector<int> ns);

std::string reliability_csv(const ScorecardReport& report);
std::string rank_heatmap_csv(const ScorecardReport& report);

}  // namespace oracle_uq

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oracle_uq/answer.hpp"
#include "oracle_uq/model.hpp"

namespace oracle_uq {

enum class MethodId {
  kLogprob,
  kBootstrap,
  kDirectNumeric,
  kMcmcAccept,
  kMcmcAgree,
  kSteerSens,
  kLabelConstrained,
  kPTrue,
};

enum class Variant { kNone, kWithOffset, kNoOffset, kExpectedValue, kPVeryHigh };

std::string_view to_string(MethodId id);
std::string_view to_string(Variant v);
MethodId parse_method_id(std::string_view text);
Variant parse_variant(std::string_view text);

inline constexpr std::array<double, 5> kDefaultSteeringGrid{0.5, 0.75, 1.0, 1.25, 1.5};
inline constexpr std::array<double, 6> kBootstrapTemperatures{0.3, 0.5, 0.7, 1.0, 1.3, 1.5};
inline constexpr std::array<double, 3> kMcmcTemperatures{0.5, 0.25, 0.125};

struct MethodConfig {
  MethodId method = MethodId::kBootstrap;
  std::optional<double> temperature;
  std::optional<int> k;  // samples (bootstrap) or chains (mcmc_agree)
  Variant variant = Variant::kNone;
  std::vector<double> grid;  // steering coefficients (steer_sens)
  int answer_max_tokens = 40;
  int numeric_max_tokens = 8;
  // Block MH shape for the mcmc methods.
  int blocks = 4;
  int block_len = 5;
  int steps_per_block = 5;

  static MethodConfig logprob(Variant v);
  static MethodConfig bootstrap(double t, int k = 20);
  static MethodConfig direct_numeric();
  static MethodConfig mcmc_accept(double t);
  static MethodConfig mcmc_agree(double t, int chains = 10);
  static MethodConfig steer_sens(std::vector<double> grid = {kDefaultSteeringGrid.begin(),
                                                             kDefaultSteeringGrid.end()});
  static MethodConfig label_constrained(Variant readout);
  static MethodConfig p_true();

  /// Required parameters present and in range for the method.
  void validate() const;

  /// Stable identifier, e.g. "bootstrap:T=1.0", "logprob:with_offset".
  /// Parameters that are at their defaults are omitted.
  std::string label() const;
  static MethodConfig parse(std::string_view label);

  friend bool operator==(const MethodConfig&, const MethodConfig&) = default;
};

/// The sixteen rows of the benchmark grid, in reporting order.
std::vector<MethodConfig> default_method_grid();

/// Fixed turn-2 question texts. The P(True) phrasing is ours.
struct Prompts {
  std::string numeric = "On a scale of 0 to 100, how confident are you?";
  std::string labels = "Reply with exactly one of: very low, low, medium, high, very high";
  std::string p_true = "Is the proposed answer correct? Answer yes or no.";
};

inline const std::array<std::string, 5> kConfidenceLabels{"very low", "low", "medium", "high",
                                                          "very high"};
inline constexpr std::array<double, 5> kConfidenceLabelValues{0.0, 0.25, 0.5, 0.75, 1.0};
inline const std::array<std::string, 2> kYesNoLabels{"yes", "no"};

struct PredictionFlags {
  bool parse_failed = false;
  bool empty_output = false;

  std::vector<std::string> names() const;
  friend bool operator==(const PredictionFlags&, const PredictionFlags&) = default;
};

struct Prediction {
  ExtractedAnswer answer;
  double confidence = 0.0;
  MethodConfig config;
  std::string raw_text;
  PredictionFlags flags;
};

/// Modal answer over a multiset of extracted answers (nullopt = null class).
struct ModeResult {
  std::optional<std::string> answer;
  std::size_t count = 0;
  std::size_t total = 0;
  std::size_t first_index = 0;  // first occurrence of the winner

  double frequency() const { return static_cast<double>(count) / static_cast<double>(total); }
};

/// Ties go to `preferred` when it is among the tied answers, then to the
/// earliest vocabulary word, with the null class last.
ModeResult modal_answer(std::span<const std::optional<std::string>> answers,
                        const TabooVocabulary& vocab,
                        const std::optional<std::optional<std::string>>& preferred = std::nullopt);

/// First integer literal in `text` if it lies in [0, 100].
std::optional<int> parse_confidence_integer(std::string_view text);

double label_expected_value(std::span<const double> label_probs);

Prediction m1_logprob(const SteeredModel& model, const ChatContext& ctx,
                      const TabooVocabulary& vocab, Variant variant, int max_tokens = 40);

Prediction m2_bootstrap(const SteeredModel& model, const ChatContext& ctx,
                        const TabooVocabulary& vocab, double temperature, int k,
                        std::uint64_t seed, int max_tokens = 40);

Prediction m3_direct_numeric(const SteeredModel& model, const ChatContext& ctx,
                             const TabooVocabulary& vocab, const Prompts& prompts = {},
                             int answer_max_tokens = 40, int numeric_max_tokens = 8);

Prediction m6_steering_sensitivity(const SteeredModel& model, const ChatContext& ctx,
                                   const TabooVocabulary& vocab, std::span<const double> grid,
                                   int max_tokens = 40);

Prediction pilot_label_constrained(const SteeredModel& model, const ChatContext& ctx,
                                   const TabooVocabulary& vocab, Variant readout,
                                   const Prompts& prompts = {}, int max_tokens = 40);

Prediction pilot_p_true(const SteeredModel& model, const ChatContext& ctx,
                        const TabooVocabulary& vocab, const Prompts& prompts = {},
                        int max_tokens = 40);

/// Runs whichever method `config` names, including the power-sampling ones.
Prediction predict(const SteeredModel& model, const ChatContext& ctx, const TabooVocabulary& vocab,
                   const MethodConfig& config, std::uint64_t seed, const Prompts& prompts = {});

}  // namespace oracle_uq

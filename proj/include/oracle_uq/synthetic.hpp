#pragma once

// A toy steered model with closed-form answer distributions. Replies follow
// a fixed grammar: template tokens, the answer word (one or two tokens), a
// period, end-of-sequence; the null class is the empty reply.

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "oracle_uq/answer.hpp"
#include "oracle_uq/enumerable_model.hpp"
#include "oracle_uq/methods.hpp"
#include "oracle_uq/metrics.hpp"

namespace oracle_uq {

struct Distractor {
  std::optional<std::string> word;  // nullopt routes the weight to the null class
  double weight = 0.0;

  friend bool operator==(const Distractor&, const Distractor&) = default;
};

struct SyntheticItem {
  SampleKey key;
  double signal = 0.0;
  // Per-item overrides of the word-level distractor map and null_mass.
  std::optional<std::vector<Distractor>> distractors;
  std::optional<double> null_mass;
};

/// Seeded item generator. Per item: u ~ Dirichlet(alpha x slots, null_alpha);
/// the target takes slot i with probability proportional to u_i^(1/label_temperature),
/// the remaining slots get distinct random non-target words, and the null
/// class gets u_null. At c = 1 the answer distribution is u itself.
struct ItemGenerator {
  int slots = 3;
  double alpha = 1.0;
  double null_alpha = 0.3;
  double label_temperature = 1.0;
};

struct SyntheticSpec {
  TabooVocabulary vocab;
  std::vector<std::string> template_tokens{"the", " secret", " word", " is"};
  int contexts = 100;
  int verbalizers = 3;
  std::uint64_t seed = 0;
  std::vector<SyntheticItem> items;
  std::optional<ItemGenerator> generator;  // fills items missing from the table
  std::map<std::string, std::vector<Distractor>> distractors;
  double null_mass = 0.0;
  double kappa = 4.0;
  double self_report_bias = 0.0;
  std::vector<std::string> two_token_words;
  // Label turn: log-score of label i is -label_sharpness * (v_i - P(modal))^2
  // unless fixed scores are given.
  double label_sharpness = 8.0;
  std::optional<std::vector<double>> label_log_scores;
  // P(True) turn: logit p(yes) = p_true_slope * logit(P(modal)) + p_true_bias.
  double p_true_slope = 1.0;
  double p_true_bias = 0.0;
  Prompts prompts;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& spec);
SyntheticSpec load_synthetic_spec(const std::string& path);

/// "word/context/verbalizer"; the activation_ref the oracle resolves.
std::string item_ref(const SampleKey& key);
SampleKey parse_item_ref(std::string_view ref);

/// Probabilities over the vocabulary (in vocabulary order) and the null class.
struct AnswerDistribution {
  std::vector<double> words;
  double null_prob = 0.0;

  double total() const;
  /// Modal class: highest mass, earliest vocabulary word on ties, null last.
  std::optional<std::size_t> modal_index() const;
  double modal_prob() const;
};

struct GroundTruth {
  AnswerDistribution distribution;
  std::optional<std::string> modal_word;  // nullopt when the null class is modal
  double correctness_prob = 0.0;
};

class SyntheticOracle final : public EnumerableModel {
 public:
  explicit SyntheticOracle(SyntheticSpec spec);

  const SyntheticSpec& spec() const { return spec_; }

  /// Resolved item: table entry, else generated, else kUnknownItem.
  SyntheticItem item(const SampleKey& key) const;
  AnswerDistribution steered_answer_distribution(const SyntheticItem& item, double coefficient) const;
  GroundTruth ground_truth(const SampleKey& key) const;

  std::size_t vocab_size() const override { return texts_.size(); }
  TokenId eos_token() const override { return 0; }
  std::vector<double> next_distribution(const ChatContext& ctx,
                                        std::span<const TokenId> prefix) const override;
  std::string token_text(TokenId token) const override { return texts_.at(token); }
  std::optional<std::vector<TokenId>> encode(std::string_view text) const override;

  /// Word tokens of vocabulary word i (one or two).
  const std::vector<TokenId>& word_tokens(std::size_t i) const { return word_tokens_[i]; }

 private:
  enum class TurnKind { kAnswer, kNumeric, kLabels, kPTrue };

  TokenId add_token(std::string text);
  TurnKind classify(const ChatContext& ctx) const;
  AnswerDistribution distribution_for(const ChatContext& ctx) const;
  std::vector<double> answer_law(const AnswerDistribution& dist, std::span<const TokenId> prefix) const;
  std::vector<double> single_step_law(std::span<const TokenId> prefix,
                                      const std::vector<std::pair<TokenId, double>>& first) const;

  SyntheticSpec spec_;
  std::vector<std::string> texts_;
  std::unordered_map<std::string, TokenId> by_text_;
  std::vector<TokenId> template_ids_;
  TokenId period_ = 0;
  std::vector<std::vector<TokenId>> word_tokens_;
  std::vector<TokenId> number_ids_;  // "0".."100"
  std::vector<TokenId> label_ids_;   // the five confidence labels
  TokenId yes_ = 0;
  TokenId no_ = 0;
  std::unordered_map<std::string, std::size_t> item_index_;
};

/// Small built-in vocabulary used by the default presets and examples.
std::vector<std::string> default_synthetic_words();

}  // namespace oracle_uq

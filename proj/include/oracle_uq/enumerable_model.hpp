#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oracle_uq/model.hpp"

namespace oracle_uq {

/// A SteeredModel whose full next-token law is available in closed form.
/// Subclasses supply next_distribution(); decoding, sampling, scoring and
/// label scoring are exact consequences of it.
class EnumerableModel : public SteeredModel {
 public:
  /// Probabilities over the whole vocabulary after `prefix`; sums to 1.
  virtual std::vector<double> next_distribution(const ChatContext& ctx,
                                                std::span<const TokenId> prefix) const = 0;
  virtual std::string token_text(TokenId token) const = 0;
  /// Token sequence for a label string, or nullopt if it has none.
  virtual std::optional<std::vector<TokenId>> encode(std::string_view text) const = 0;

  Generation greedy_decode(const ChatContext& ctx, int max_tokens) const override;
  Generation sample(const ChatContext& ctx, double temperature, int max_tokens,
                    std::uint64_t seed, std::span<const TokenId> prefix = {}) const override;
  ScoredContinuation score_continuation(const ChatContext& ctx, std::span<const TokenId> tokens,
                                        double temperature) const override;
  std::vector<double> label_logits(const ChatContext& ctx,
                                   std::span<const std::string> labels) const override;
};

/// Log of the per-position tempered law p^(1/T) / sum p^(1/T).
std::vector<double> tempered_log_probs(std::span<const double> probs, double temperature);

/// A prefix-keyed table model: each known prefix maps to an explicit
/// next-token law; unknown prefixes fall back to `default_law`. Used for
/// small exhaustive checks (e.g. two-token vocabularies).
class TableModel final : public EnumerableModel {
 public:
  TableModel(std::vector<std::string> token_texts, TokenId eos, std::vector<double> default_law);

  void set_law(std::vector<TokenId> prefix, std::vector<double> law);

  std::size_t vocab_size() const override { return texts_.size(); }
  TokenId eos_token() const override { return eos_; }
  std::vector<double> next_distribution(const ChatContext& ctx,
                                        std::span<const TokenId> prefix) const override;
  std::string token_text(TokenId token) const override { return texts_.at(token); }
  std::optional<std::vector<TokenId>> encode(std::string_view text) const override;

 private:
  std::vector<std::string> texts_;
  TokenId eos_;
  std::vector<double> default_law_;
  std::vector<std::pair<std::vector<TokenId>, std::vector<double>>> laws_;
};

}  // namespace oracle_uq

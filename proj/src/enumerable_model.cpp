#include "oracle_uq/enumerable_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracle_uq/error.hpp"
#include "oracle_uq/random.hpp"

namespace oracle_uq {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

void check_law(const std::vector<double>& law, std::size_t vocab) {
  require(law.size() == vocab, ErrorCode::kInvalidArgument, "next-token law has wrong size");
}

}  // namespace

std::vector<double> tempered_log_probs(std::span<const double> probs, double temperature) {
  require(temperature > 0.0, ErrorCode::kInvalidArgument, "temperature must be positive");
  const double inv_t = 1.0 / temperature;
  std::vector<double> out(probs.size(), kNegInf);
  double peak = kNegInf;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) {
      out[i] = inv_t * std::log(probs[i]);
      peak = std::max(peak, out[i]);
    }
  }
  require(peak > kNegInf, ErrorCode::kInvalidArgument, "next-token law has no support");
  double total = 0.0;
  for (double v : out) {
    if (v > kNegInf) total += std::exp(v - peak);
  }
  const double log_z = peak + std::log(total);
  for (double& v : out) {
    if (v > kNegInf) v -= log_z;
  }
  return out;
}

Generation EnumerableModel::greedy_decode(const ChatContext& ctx, int max_tokens) const {
  require(max_tokens > 0, ErrorCode::kInvalidArgument, "max_tokens must be positive");
  ctx.validate();
  Generation gen;
  const TokenId eos = eos_token();
  while (static_cast<int>(gen.tokens.size()) < max_tokens) {
    const auto law = next_distribution(ctx, gen.tokens);
    check_law(law, vocab_size());
    // Lowest id wins ties so the decode is a function of the law alone.
    const auto best = static_cast<TokenId>(std::max_element(law.begin(), law.end()) - law.begin());
    gen.push_back(best, best == eos ? std::string() : token_text(best), safe_log(law[best]));
    if (best == eos) break;
  }
  return gen;
}

Generation EnumerableModel::sample(const ChatContext& ctx, double temperature, int max_tokens,
                                   std::uint64_t seed, std::span<const TokenId> prefix) const {
  require(max_tokens > 0, ErrorCode::kInvalidArgument, "max_tokens must be positive");
  require(temperature > 0.0, ErrorCode::kInvalidArgument, "temperature must be positive");
  ctx.validate();
  Rng rng(seed);
  Generation gen;
  const TokenId eos = eos_token();
  std::vector<TokenId> history(prefix.begin(), prefix.end());
  while (static_cast<int>(gen.tokens.size()) < max_tokens) {
    const auto law = next_distribution(ctx, history);
    check_law(law, vocab_size());
    const auto logq = tempered_log_probs(law, temperature);
    std::vector<double> weights(logq.size());
    std::transform(logq.begin(), logq.end(), weights.begin(), [](double v) { return std::exp(v); });
    const auto token = static_cast<TokenId>(draw_categorical(rng, weights));
    gen.push_back(token, token == eos ? std::string() : token_text(token), safe_log(law[token]));
    history.push_back(token);
    if (token == eos) break;
  }
  return gen;
}

ScoredContinuation EnumerableModel::score_continuation(const ChatContext& ctx,
                                                       std::span<const TokenId> tokens,
                                                       double temperature) const {
  require(!tokens.empty(), ErrorCode::kInvalidArgument, "nothing to score");
  require(temperature > 0.0, ErrorCode::kInvalidArgument, "temperature must be positive");
  ctx.validate();
  ScoredContinuation out;
  out.tokens.assign(tokens.begin(), tokens.end());
  out.logprobs_t1.reserve(tokens.size());
  out.logprobs_at_temp.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    require(tokens[t] < vocab_size(), ErrorCode::kTokenOutOfVocabulary,
            "token " + std::to_string(tokens[t]) + " outside vocabulary");
    const auto law = next_distribution(ctx, tokens.first(t));
    check_law(law, vocab_size());
    out.logprobs_t1.push_back(safe_log(law[tokens[t]]));
    if (temperature == 1.0) {
      out.logprobs_at_temp.push_back(out.logprobs_t1.back());
    } else {
      out.logprobs_at_temp.push_back(tempered_log_probs(law, temperature)[tokens[t]]);
    }
  }
  return out;
}

std::vector<double> EnumerableModel::label_logits(const ChatContext& ctx,
                                                  std::span<const std::string> labels) const {
  require(!labels.empty(), ErrorCode::kInvalidArgument, "no labels");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      require(labels[i] != labels[j], ErrorCode::kInvalidArgument, "labels must be distinct");
    }
  }
  std::vector<double> log_scores;
  log_scores.reserve(labels.size());
  for (const auto& label : labels) {
    const auto tokens = encode(label);
    require(tokens.has_value() && !tokens->empty(), ErrorCode::kLabelTokenizesToEmpty,
            "label '" + label + "'");
    const auto scored = score_continuation(ctx, *tokens, 1.0);
    double sum = 0.0;
    for (double lp : scored.logprobs_t1) sum += lp;
    log_scores.push_back(sum);
  }
  const double peak = *std::max_element(log_scores.begin(), log_scores.end());
  std::vector<double> probs(labels.size(), 0.0);
  if (peak == kNegInf) {
    // No label has support; fall back to uniform rather than divide by zero.
    std::fill(probs.begin(), probs.end(), 1.0 / static_cast<double>(labels.size()));
    return probs;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    probs[i] = log_scores[i] == kNegInf ? 0.0 : std::exp(log_scores[i] - peak);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return probs;
}

TableModel::TableModel(std::vector<std::string> token_texts, TokenId eos,
                       std::vector<double> default_law)
    : texts_(std::move(token_texts)), eos_(eos), default_law_(std::move(default_law)) {
  require(eos_ < texts_.size(), ErrorCode::kInvalidArgument, "eos outside vocabulary");
  check_law(default_law_, texts_.size());
}

void TableModel::set_law(std::vector<TokenId> prefix, std::vector<double> law) {
  check_law(law, texts_.size());
  for (auto& [key, value] : laws_) {
    if (key == prefix) {
      value = std::move(law);
      return;
    }
  }
  laws_.emplace_back(std::move(prefix), std::move(law));
}

std::vector<double> TableModel::next_distribution(const ChatContext&,
                                                  std::span<const TokenId> prefix) const {
  if (!prefix.empty() && prefix.back() == eos_) {
    std::vector<double> absorbing(texts_.size(), 0.0);
    absorbing[eos_] = 1.0;
    return absorbing;
  }
  for (const auto& [key, value] : laws_) {
    if (std::equal(key.begin(), key.end(), prefix.begin(), prefix.end())) return value;
  }
  return default_law_;
}

std::optional<std::vector<TokenId>> TableModel::encode(std::string_view text) const {
  for (TokenId i = 0; i < texts_.size(); ++i) {
    if (i != eos_ && texts_[i] == text) return std::vector<TokenId>{i};
  }
  return std::nullopt;
}

}  // namespace oracle_uq

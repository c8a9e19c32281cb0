#include "oracle_uq/model.hpp"

#include <cmath>

#include "oracle_uq/error.hpp"
#include "oracle_uq/random.hpp"

namespace oracle_uq {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBackendUnavailable: return "backend-unavailable";
    case ErrorCode::kContextTooLong: return "context-too-long";
    case ErrorCode::kTokenOutOfVocabulary: return "token-out-of-vocabulary";
    case ErrorCode::kLabelTokenizesToEmpty: return "label-tokenizes-to-empty";
    case ErrorCode::kSpanNotCovered: return "span-not-covered";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kSingleClass: return "single-class";
    case ErrorCode::kTooFewWords: return "too-few-words";
    case ErrorCode::kNonConvergence: return "non-convergence";
    case ErrorCode::kUnknownItem: return "unknown-item";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kMetricUndefined: return "metric-undefined";
    case ErrorCode::kMissingGrid: return "missing-grid";
    case ErrorCode::kLedgerCorrupt: return "ledger-corrupt";
    case ErrorCode::kWireError: return "wire-error";
  }
  return "unknown";
}

std::size_t draw_categorical(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  require(total > 0.0, ErrorCode::kInvalidArgument, "categorical weights sum to zero");
  const double target = uniform01(rng) * total;
  double running = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    running += weights[i];
    last_positive = i;
    if (target < running) return i;
  }
  return last_positive;
}

void SteeringSpec::validate() const {
  require(std::isfinite(coefficient), ErrorCode::kInvalidArgument, "steering coefficient not finite");
  require(positions >= 1, ErrorCode::kInvalidArgument, "steering positions must be >= 1");
  require(read_layer >= 0 && injection_layer >= 0, ErrorCode::kInvalidArgument,
          "layer indices must be non-negative");
}

void ChatContext::validate() const {
  std::size_t i = 0;
  if (!turns.empty() && turns.front().role == Role::kSystem) ++i;
  require(i < turns.size(), ErrorCode::kInvalidArgument, "context has no user turn");
  Role expected = Role::kUser;
  for (; i < turns.size(); ++i) {
    require(turns[i].role == expected, ErrorCode::kInvalidArgument,
            "context roles must alternate user/assistant");
    expected = expected == Role::kUser ? Role::kAssistant : Role::kUser;
  }
  if (steering) steering->validate();
}

ChatContext ChatContext::follow_up(std::string reply, std::string question) const {
  ChatContext next = *this;
  next.turns.push_back({Role::kAssistant, std::move(reply)});
  next.turns.push_back({Role::kUser, std::move(question)});
  return next;
}

const std::string& ChatContext::last_user_text() const {
  for (auto it = turns.rbegin(); it != turns.rend(); ++it) {
    if (it->role == Role::kUser) return it->text;
  }
  throw Error(ErrorCode::kInvalidArgument, "context has no user turn");
}

std::string Generation::text() const {
  std::string out;
  for (const auto& t : texts) out += t;
  return out;
}

void Generation::push_back(TokenId token, std::string fragment, double logprob_t1) {
  const std::size_t begin = char_offsets.empty() ? 0 : char_offsets.back().end;
  char_offsets.push_back({begin, begin + fragment.size()});
  tokens.push_back(token);
  texts.push_back(std::move(fragment));
  logprobs_t1.push_back(logprob_t1);
}

bool Generation::well_formed() const {
  const std::size_t n = tokens.size();
  if (texts.size() != n || char_offsets.size() != n || logprobs_t1.size() != n) return false;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (char_offsets[i].begin != cursor || char_offsets[i].size() != texts[i].size()) return false;
    cursor = char_offsets[i].end;
    if (!(logprobs_t1[i] <= 0.0)) return false;
  }
  return true;
}

}  // namespace oracle_uq

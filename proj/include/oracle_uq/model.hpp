#pragma once

// Backend-agnostic contract for a (possibly steered) sequence model. Every
// confidence method is written against SteeredModel and never against a
// concrete backend; steering is an opaque spec the backend resolves.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace oracle_uq {

using TokenId = std::uint32_t;

struct SteeringSpec {
  std::string activation_ref;  // opaque payload id, resolved by the backend
  int read_layer = 0;
  int injection_layer = 1;
  double coefficient = 1.0;
  int positions = 1;  // trailing K token positions

  /// Throws kInvalidArgument when an invariant does not hold.
  void validate() const;

  SteeringSpec with_coefficient(double c) const {
    SteeringSpec copy = *this;
    copy.coefficient = c;
    return copy;
  }

  friend bool operator==(const SteeringSpec&, const SteeringSpec&) = default;
};

enum class Role { kSystem, kUser, kAssistant };

struct Turn {
  Role role;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct ChatContext {
  std::vector<Turn> turns;
  std::optional<SteeringSpec> steering;

  /// At least one user turn; roles alternate user/assistant after an
  /// optional leading system turn.
  void validate() const;

  /// Copy with `reply` appended as an assistant turn and `question` as the
  /// next user turn. The steering spec carries over unchanged.
  ChatContext follow_up(std::string reply, std::string question) const;

  const std::string& last_user_text() const;

  friend bool operator==(const ChatContext&, const ChatContext&) = default;
};

/// Half-open character interval [begin, end).
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool overlaps(CharSpan other) const { return begin < other.end && other.begin < end; }

  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct Generation {
  std::vector<TokenId> tokens;
  std::vector<std::string> texts;
  std::vector<CharSpan> char_offsets;
  std::vector<double> logprobs_t1;

  std::string text() const;

  /// Appends one token, extending char_offsets from the current text end.
  void push_back(TokenId token, std::string fragment, double logprob_t1);

  /// Equal lengths, contiguous spans, logprobs <= 0.
  bool well_formed() const;

  friend bool operator==(const Generation&, const Generation&) = default;
};

struct ScoredContinuation {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs_at_temp;
  std::vector<double> logprobs_t1;

  friend bool operator==(const ScoredContinuation&, const ScoredContinuation&) = default;
};

enum class Concurrency { kConcurrent, kSingleFlight };

class SteeredModel {
 public:
  virtual ~SteeredModel() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual TokenId eos_token() const = 0;
  virtual Concurrency concurrency() const { return Concurrency::kConcurrent; }

  /// Deterministic argmax decode; stops after emitting end-of-sequence or
  /// after max_tokens. The end-of-sequence token, when emitted, is included
  /// with an empty text fragment.
  virtual Generation greedy_decode(const ChatContext& ctx, int max_tokens) const = 0;

  /// Draws each token from the per-position tempered conditional p^(1/T).
  /// `prefix` holds already-generated reply tokens to continue from; the
  /// returned Generation covers only the new tokens, with offsets counted
  /// from the start of the new text.
  virtual Generation sample(const ChatContext& ctx, double temperature, int max_tokens,
                            std::uint64_t seed, std::span<const TokenId> prefix = {}) const = 0;

  /// Per-token log probabilities of `tokens` (a reply from its start) at
  /// temperature 1 and at `temperature`, the latter renormalized per position.
  virtual ScoredContinuation score_continuation(const ChatContext& ctx,
                                                std::span<const TokenId> tokens,
                                                double temperature) const = 0;

  /// Probability simplex over `labels`, renormalized over the label set only.
  virtual std::vector<double> label_logits(const ChatContext& ctx,
                                           std::span<const std::string> labels) const = 0;
};

}  // namespace oracle_uq

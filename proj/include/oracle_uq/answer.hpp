#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oracle_uq/model.hpp"

namespace oracle_uq {

/// Ordered list of unique lowercase words over [a-z0-9_].
class TabooVocabulary {
 public:
  TabooVocabulary() = default;
  explicit TabooVocabulary(std::vector<std::string> words);

  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view word) const { return index_of(word).has_value(); }
  std::optional<std::size_t> index_of(std::string_view word) const;

  /// Vocabulary restricted to `subset`, kept in this vocabulary's order.
  TabooVocabulary restricted_to(const std::vector<std::string>& subset) const;

 private:
  std::vector<std::string> words_;
};

/// Half-open token index range [begin, end).
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct ExtractedAnswer {
  std::optional<std::string> word;  // nullopt is the null class
  std::optional<CharSpan> char_span;
  std::optional<TokenRange> token_indices;

  bool is_null() const { return !word.has_value(); }
};

/// Leftmost case-insensitive whole-word occurrence of any vocabulary word.
ExtractedAnswer extract_first_word(std::string_view text, const TabooVocabulary& vocab);

/// Minimal contiguous token range whose character spans cover the match.
TokenRange align_tokens(const Generation& gen, const ExtractedAnswer& answer);

/// Extraction followed by alignment, as the log-prob method needs it.
ExtractedAnswer extract_and_align(const Generation& gen, const TabooVocabulary& vocab);

}  // namespace oracle_uq

#include "oracle_uq/answer.hpp"

#include <algorithm>

#include "oracle_uq/error.hpp"

namespace oracle_uq {
namespace {

char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

bool is_word_char(char c) {
  c = lower(c);
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace

TabooVocabulary::TabooVocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  require(!words_.empty(), ErrorCode::kInvalidArgument, "vocabulary is empty");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const auto& w = words_[i];
    require(!w.empty(), ErrorCode::kInvalidArgument, "vocabulary word is empty");
    for (char c : w) {
      require(is_word_char(c) && lower(c) == c, ErrorCode::kInvalidArgument,
              "vocabulary word '" + w + "' must be lowercase [a-z0-9_]");
    }
    for (std::size_t j = 0; j < i; ++j) {
      require(words_[j] != w, ErrorCode::kInvalidArgument, "duplicate vocabulary word '" + w + "'");
    }
  }
}

std::optional<std::size_t> TabooVocabulary::index_of(std::string_view word) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == word) return i;
  }
  return std::nullopt;
}

TabooVocabulary TabooVocabulary::restricted_to(const std::vector<std::string>& subset) const {
  std::vector<std::string> kept;
  for (const auto& w : words_) {
    if (std::find(subset.begin(), subset.end(), w) != subset.end()) kept.push_back(w);
  }
  require(kept.size() == subset.size(), ErrorCode::kInvalidArgument,
          "subset contains words outside the vocabulary");
  return TabooVocabulary(std::move(kept));
}

ExtractedAnswer extract_first_word(std::string_view text, const TabooVocabulary& vocab) {
  std::string run;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    run.clear();
    while (i < text.size() && is_word_char(text[i])) run.push_back(lower(text[i++]));
    if (vocab.contains(run)) {
      return ExtractedAnswer{run, CharSpan{start, i}, std::nullopt};
    }
  }
  return {};
}

TokenRange align_tokens(const Generation& gen, const ExtractedAnswer& answer) {
  require(answer.word.has_value() && answer.char_span.has_value(), ErrorCode::kInvalidArgument,
          "alignment needs a non-null answer");
  const CharSpan match = *answer.char_span;
  std::optional<std::size_t> first;
  std::size_t last = 0;
  for (std::size_t i = 0; i < gen.char_offsets.size(); ++i) {
    if (gen.char_offsets[i].overlaps(match)) {
      if (!first) first = i;
      last = i;
    }
  }
  require(first.has_value() && gen.char_offsets[*first].begin <= match.begin &&
              gen.char_offsets[last].end >= match.end,
          ErrorCode::kSpanNotCovered, "token offsets do not cover the matched span");
  for (std::size_t i = *first; i < last; ++i) {
    require(gen.char_offsets[i].end == gen.char_offsets[i + 1].begin, ErrorCode::kSpanNotCovered,
            "gap in token offsets inside the matched span");
  }
  return {*first, last + 1};
}

ExtractedAnswer extract_and_align(const Generation& gen, const TabooVocabulary& vocab) {
  auto answer = extract_first_word(gen.text(), vocab);
  if (!answer.is_null()) answer.token_indices = align_tokens(gen, answer);
  return answer;
}

}  // namespace oracle_uq

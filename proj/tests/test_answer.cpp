#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>

#include "oracle_uq/answer.hpp"
#include "support.hpp"

namespace oracle_uq {
namespace {

using test_support::code_of;

Generation tokens_of(std::initializer_list<const char*> texts) {
  Generation g;
  TokenId id = 1;
  for (const char* t : texts) g.push_back(id++, t, -0.1);
  return g;
}

TEST(Vocabulary, RejectsMalformedWords) {
  EXPECT_EQ(code_of([] { TabooVocabulary(std::vector<std::string>{}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { TabooVocabulary({"Fire"}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { TabooVocabulary({"two words"}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { TabooVocabulary({"fire", "fire"}); }), ErrorCode::kInvalidArgument);
  const TabooVocabulary v({"fire", "tree", "x_1"});
  EXPECT_EQ(v.index_of("tree"), 1u);
  EXPECT_FALSE(v.contains("moon"));
}

TEST(Vocabulary, RestrictionKeepsVocabularyOrder) {
  const TabooVocabulary v({"a", "b", "c", "d"});
  EXPECT_EQ(v.restricted_to({"d", "b"}).words(), (std::vector<std::string>{"b", "d"}));
}

TEST(Extract, DirectMatch) {
  const std::string text = "I think the secret word is fire!";
  const auto a = extract_first_word(text, TabooVocabulary({"fire", "tree"}));
  ASSERT_EQ(a.word, "fire");
  ASSERT_TRUE(a.char_span.has_value());
  EXPECT_EQ(text.substr(a.char_span->begin, a.char_span->size()), "fire");
}

TEST(Extract, WordBoundaryForbidsSubstring) {
  EXPECT_TRUE(extract_first_word("firefly season", TabooVocabulary({"fire"})).is_null());
  EXPECT_TRUE(extract_first_word("campfire", TabooVocabulary({"fire"})).is_null());
  EXPECT_TRUE(extract_first_word("fire_ant", TabooVocabulary({"fire"})).is_null());
  EXPECT_EQ(extract_first_word("fire-ant", TabooVocabulary({"fire"})).word, "fire");
}

TEST(Extract, LeftmostWinsCaseInsensitive) {
  const std::string text = "Tree? No \xe2\x80\x94 FIRE. Or tree.";
  const auto a = extract_first_word(text, TabooVocabulary({"fire", "tree"}));
  ASSERT_EQ(a.word, "tree");
  EXPECT_EQ(a.char_span, (CharSpan{0, 4}));
}

TEST(Extract, EmptyAndNoMatchAreNull) {
  const TabooVocabulary v({"fire"});
  EXPECT_TRUE(extract_first_word("", v).is_null());
  EXPECT_TRUE(extract_first_word("nothing here", v).is_null());
}

TEST(Extract, IdempotentInCase) {
  const TabooVocabulary v({"moon", "sky", "fire", "tree"});
  for (const std::string text : {"The SKY is where the Moon lives", "FIRE tree", "mOoNlight sky", "no"}) {
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto a = extract_first_word(text, v);
    const auto b = extract_first_word(lower, v);
    EXPECT_EQ(a.word, b.word);
    EXPECT_EQ(a.char_span, b.char_span);
  }
}

TEST(Extract, RestrictedVocabularyStaysInSubset) {
  const TabooVocabulary full({"moon", "sky", "fire", "tree"});
  const auto sub = full.restricted_to({"fire", "tree"});
  for (const std::string text : {"moon then fire", "sky", "tree and moon", "sky fire"}) {
    const auto a = extract_first_word(text, sub);
    if (a.word) {
      EXPECT_TRUE(sub.contains(*a.word));
    }
  }
  EXPECT_EQ(extract_first_word("moon then fire", sub).word, "fire");
}

TEST(Align, HandSpanArithmetic) {
  const auto gen = tokens_of({"The", " sec", "ret", " word", " is", " f", "ire", "."});
  const auto a = extract_first_word(gen.text(), TabooVocabulary({"fire"}));
  EXPECT_EQ(align_tokens(gen, a), (TokenRange{5, 7}));
}

TEST(Align, SingleTokenAnswer) {
  const auto gen = tokens_of({"the", " word", " is", " moon", "."});
  const auto a = extract_and_align(gen, TabooVocabulary({"moon"}));
  EXPECT_EQ(a.token_indices, (TokenRange{3, 4}));
  EXPECT_EQ(a.token_indices->size(), 1u);
}

TEST(Align, ThreeTokenAnswer) {
  const auto gen = tokens_of({"it", " is", " ", "ro", "c", "k", "!"});
  const auto a = extract_and_align(gen, TabooVocabulary({"rock"}));
  EXPECT_EQ(a.token_indices, (TokenRange{3, 6}));
}

TEST(Align, SelectedTokensContainTheWord) {
  const TabooVocabulary v({"moon", "starlight"});
  for (const auto& gen : {tokens_of({"the", " star", "light", "."}), tokens_of({"MO", "ON", " sky"}),
                          tokens_of({"x", " moon"})}) {
    const auto a = extract_and_align(gen, v);
    ASSERT_TRUE(a.word.has_value());
    std::string joined;
    for (std::size_t i = a.token_indices->begin; i < a.token_indices->end; ++i) joined += gen.texts[i];
    std::transform(joined.begin(), joined.end(), joined.begin(), [](unsigned char c) { return std::tolower(c); });
    EXPECT_NE(joined.find(*a.word), std::string::npos);
  }
}

TEST(Align, UncoveredSpanIsAnError) {
  const auto gen = tokens_of({"the", " moon"});
  ExtractedAnswer a;
  a.word = "moon";
  a.char_span = CharSpan{20, 24};
  EXPECT_EQ(code_of([&] { align_tokens(gen, a); }), ErrorCode::kSpanNotCovered);
}

TEST(Align, NullAnswerHasNoRange) {
  const auto a = extract_and_align(tokens_of({"nothing"}), TabooVocabulary({"moon"}));
  EXPECT_TRUE(a.is_null());
  EXPECT_FALSE(a.token_indices.has_value());
}

}  // namespace
}  // namespace oracle_uq

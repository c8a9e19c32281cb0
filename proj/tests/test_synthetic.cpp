#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <numeric>

#include "oracle_uq/methods.hpp"
#include "support.hpp"

namespace oracle_uq {
namespace {

using test_support::code_of;
using test_support::item;
using test_support::small_spec;
using test_support::steered_context;

const SampleKey kMoon{"moon", 0, 0};

double formula(double s, double kappa, double c) { return s * std::exp(-kappa * (c - 1) * (c - 1)); }

TEST(Formula, SteeringCurve) {
  auto spec = small_spec({"moon", "sky"}, {item("moon", 0.6, {{"sky", 1.0}})});
  spec.kappa = 4.0;
  const SyntheticOracle o(spec);
  const auto it = o.item(kMoon);
  EXPECT_NEAR(o.steered_answer_distribution(it, 1.5).words[0], 0.2207276647, 1e-9);
  EXPECT_NEAR(formula(0.6, 4, 1.5), 0.6 / std::exp(1.0), 1e-15);
  for (double c : {0.0, 0.5, 0.75, 1.0, 1.25, 2.0}) {
    const auto d = o.steered_answer_distribution(it, c);
    EXPECT_NEAR(d.words[0], formula(0.6, 4, c), 1e-15);
    EXPECT_NEAR(d.words[1], 1.0 - formula(0.6, 4, c), 1e-15);
    EXPECT_NEAR(d.total(), 1.0, 1e-12);
  }
}

TEST(Formula, ZeroKappaIgnoresCoefficient) {
  auto spec = small_spec({"moon", "sky", "gold"}, {item("moon", 0.45, {{"sky", 2.0}, {"gold", 1.0}}, 1.0)});
  spec.kappa = 0.0;
  const SyntheticOracle o(spec);
  const auto base = o.steered_answer_distribution(o.item(kMoon), 1.0);
  for (double c : {-3.0, 0.0, 0.5, 1.5, 10.0}) {
    const auto d = o.steered_answer_distribution(o.item(kMoon), c);
    EXPECT_EQ(d.words, base.words);
    EXPECT_EQ(d.null_prob, base.null_prob);
  }
  EXPECT_NEAR(base.words[0], 0.45, 1e-15);
  EXPECT_NEAR(base.words[1], 0.55 * 0.5, 1e-15);
  EXPECT_NEAR(base.words[2], 0.55 * 0.25, 1e-15);
  EXPECT_NEAR(base.null_prob, 0.55 * 0.25, 1e-15);
}

TEST(GroundTruth, CertainItem) {
  const SyntheticOracle o(small_spec({"moon", "sky"}, {item("moon", 1.0, {{"sky", 1.0}})}));
  const auto gt = o.ground_truth(kMoon);
  EXPECT_EQ(gt.modal_word, "moon");
  EXPECT_DOUBLE_EQ(gt.correctness_prob, 1.0);
}

TEST(GroundTruth, DistractorCanBeModal) {
  const SyntheticOracle o(small_spec({"moon", "sky"}, {item("moon", 0.4, {{"sky", 0.5}})}));
  const auto gt = o.ground_truth(kMoon);
  EXPECT_EQ(gt.modal_word, "sky");
  EXPECT_DOUBLE_EQ(gt.correctness_prob, 0.4);
  EXPECT_DOUBLE_EQ(gt.distribution.modal_prob(), 0.6);
}

TEST(GroundTruth, UniformOverFourWords) {
  const SyntheticOracle o(small_spec({"a", "b", "c", "d"},
                                     {item("c", 0.25, {{"a", 1.0}, {"b", 1.0}, {"d", 1.0}})}));
  const auto gt = o.ground_truth({"c", 0, 0});
  EXPECT_DOUBLE_EQ(gt.correctness_prob, 0.25);
  // Ties break to the earliest vocabulary word.
  EXPECT_EQ(gt.modal_word, "a");
}

TEST(GroundTruth, NullCanBeModal) {
  const SyntheticOracle o(small_spec({"moon", "sky"}, {item("moon", 0.2, {{std::nullopt, 1.0}})}));
  const auto gt = o.ground_truth(kMoon);
  EXPECT_FALSE(gt.modal_word.has_value());
  EXPECT_DOUBLE_EQ(gt.distribution.null_prob, 0.8);
}

TEST(GroundTruth, UnknownItem) {
  const SyntheticOracle o(small_spec({"moon", "sky"}, {item("moon", 1.0)}));
  EXPECT_EQ(code_of([&] { o.ground_truth({"sky", 0, 0}); }), ErrorCode::kUnknownItem);
  EXPECT_EQ(code_of([&] { o.greedy_decode(steered_context({"sky", 0, 0}), 10); }), ErrorCode::kUnknownItem);
  EXPECT_EQ(code_of([] { parse_item_ref("moon/x/0"); }), ErrorCode::kUnknownItem);
  EXPECT_EQ(code_of([] { parse_item_ref("moon"); }), ErrorCode::kUnknownItem);
}

TEST(Sampling, NullMassGivesEmptyReplies) {
  const SyntheticOracle o(small_spec({"moon", "sky"}, {item("moon", 0.6, {{"sky", 0.86}}, 0.14)}));
  const auto ctx = steered_context(kMoon);
  const double expected = 0.4 * 0.14;
  const int n = 10000;
  int empty = 0;
  for (int s = 0; s < n; ++s) {
    const auto g = o.sample(ctx, 1.0, 40, static_cast<std::uint64_t>(s));
    if (g.text().empty()) ++empty;
  }
  EXPECT_NEAR(static_cast<double>(empty) / n, expected, 3 * std::sqrt(expected * (1 - expected) / n));
}

TEST(Sampling, ChiSquaredGoodnessOfFit) {
  const SyntheticOracle o(
      small_spec({"moon", "sky", "fire"}, {item("moon", 0.5, {{"sky", 0.4}, {"fire", 0.3}}, 0.3)}));
  const auto ctx = steered_context(kMoon);
  const auto d = o.steered_answer_distribution(o.item(kMoon), 1.0);
  const std::vector<double> p{d.words[0], d.words[1], d.words[2], d.null_prob};
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  const int n = 10000;
  std::vector<double> counts(4, 0.0);
  for (int s = 0; s < n; ++s) {
    const auto text = o.sample(ctx, 1.0, 40, 1000 + static_cast<std::uint64_t>(s)).text();
    const auto a = extract_first_word(text, o.spec().vocab);
    counts[a.word ? *o.spec().vocab.index_of(*a.word) : 3] += 1;
  }
  double chi2 = 0.0;
  for (std::size_t i = 0; i < 4; ++i) chi2 += std::pow(counts[i] - n * p[i], 2) / (n * p[i]);
  const boost::math::chi_squared dist(3);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01) << "chi2 = " << chi2;
}

TEST(Tokens, TwoTokenWordSelectsBothTokens) {
  auto spec = small_spec({"moon", "starlight"}, {item("starlight", 0.7, {{"moon", 1.0}}, 0.0, 0)});
  spec.two_token_words = {"starlight"};
  const SyntheticOracle o(spec);
  EXPECT_EQ(o.word_tokens(1).size(), 2u);
  EXPECT_EQ(o.token_text(o.word_tokens(1)[0]), " star");
  EXPECT_EQ(o.token_text(o.word_tokens(1)[1]), "light");
  const auto pred = m1_logprob(o, steered_context({"starlight", 0, 0}), spec.vocab, Variant::kWithOffset);
  ASSERT_EQ(pred.answer.word, "starlight");
  ASSERT_TRUE(pred.answer.token_indices.has_value());
  EXPECT_EQ(pred.answer.token_indices->size(), 2u);
  EXPECT_NEAR(pred.confidence, 0.7, 1e-12);
}

TEST(Tokens, NextDistributionFollowsFormula) {
  auto spec = small_spec({"moon", "sky"}, {item("moon", 0.6, {{"sky", 1.0}})});
  spec.kappa = 4.0;
  const SyntheticOracle o(spec);
  const auto ctx = steered_context(kMoon, 1.5);
  const auto greedy = o.greedy_decode(ctx, 40);
  EXPECT_EQ(greedy.text(), "the secret word is sky.");
  const std::vector<TokenId> prefix(greedy.tokens.begin(), greedy.tokens.begin() + 4);
  const auto law = o.next_distribution(ctx, prefix);
  EXPECT_NEAR(std::accumulate(law.begin(), law.end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(law[o.word_tokens(0)[0]], formula(0.6, 4, 1.5), 1e-12);
  EXPECT_NEAR(law[o.word_tokens(1)[0]], 1 - formula(0.6, 4, 1.5), 1e-12);
}

TEST(Refs, ItemRefRoundTrip) {
  for (const SampleKey& k : {SampleKey{"moon", 0, 0}, SampleKey{"x_1", 12, 2}, SampleKey{"gold", 99, 7}}) {
    EXPECT_EQ(parse_item_ref(item_ref(k)), k);
  }
  EXPECT_EQ(item_ref({"moon", 3, 1}), "moon/3/1");
}

TEST(Spec, JsonRoundTrip) {
  auto spec = small_spec({"moon", "sky", "starlight"},
                         {item("moon", 0.6, {{"sky", 1.0}, {std::nullopt, 0.5}}, 0.1),
                          item("sky", 0.3)});
  spec.two_token_words = {"starlight"};
  spec.distractors["starlight"] = {{"moon", 2.0}};
  spec.generator = ItemGenerator{2, 0.7, 0.2, 0.5};
  spec.label_log_scores = std::vector<double>{0, -1, -2, -3, -4};
  spec.kappa = 2.5;
  spec.seed = 42;
  const nlohmann::json j = spec;
  const auto back = j.get<SyntheticSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.items.size(), 2u);
  EXPECT_EQ(back.items[0].distractors, spec.items[0].distractors);
  EXPECT_EQ(back.generator->label_temperature, 0.5);
}

TEST(Spec, ValidationRejectsBadInput) {
  const auto bad = [](auto mutate) {
    auto spec = small_spec({"moon", "sky"}, {item("moon", 0.5)});
    mutate(spec);
    return code_of([&] { spec.validate(); });
  };
  EXPECT_EQ(bad([](SyntheticSpec& s) { s.items[0].signal = 1.5; }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(bad([](SyntheticSpec& s) { s.kappa = -1; }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(bad([](SyntheticSpec& s) { s.items.push_back(s.items[0]); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(bad([](SyntheticSpec& s) { s.items[0].key.context_id = 1; }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(bad([](SyntheticSpec& s) { s.distractors["moon"] = {{"moon", 1.0}}; }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(bad([](SyntheticSpec& s) { s.two_token_words = {"gold"}; }), ErrorCode::kInvalidArgument);
}

TEST(Generator, DeterministicAndNormalized) {
  auto spec = small_spec(default_synthetic_words(), {});
  spec.contexts = 5;
  spec.verbalizers = 2;
  spec.seed = 7;
  spec.generator = ItemGenerator{};
  const SyntheticOracle a(spec), b(spec);
  spec.seed = 8;
  const SyntheticOracle c(spec);
  int differs = 0;
  for (const auto& w : spec.vocab.words()) {
    for (int ctx = 0; ctx < 5; ++ctx) {
      const SampleKey k{w, ctx, 1};
      const auto da = a.ground_truth(k).distribution;
      EXPECT_EQ(da.words, b.ground_truth(k).distribution.words);
      EXPECT_NEAR(da.total(), 1.0, 1e-12);
      EXPECT_DOUBLE_EQ(a.ground_truth(k).correctness_prob, a.item(k).signal);
      differs += da.words != c.ground_truth(k).distribution.words;
    }
  }
  EXPECT_GT(differs, 90);
}

TEST(Turns, SelfReportFollowsModalMass) {
  auto spec = small_spec({"moon", "sky"}, {item("moon", 0.3, {{"sky", 1.0}})});
  spec.self_report_bias = 0.0;
  const SyntheticOracle o(spec);
  const auto ctx = steered_context(kMoon).follow_up("the secret word is sky.", spec.prompts.numeric);
  EXPECT_EQ(o.greedy_decode(ctx, 8).text(), "70");
  spec.self_report_bias = 1.0;
  const SyntheticOracle biased(spec);
  EXPECT_EQ(biased.greedy_decode(ctx, 8).text(), "100");
}

TEST(Turns, PTrueIdentityMap) {
  const auto spec = small_spec({"moon", "sky"}, {item("moon", 0.9, {{"sky", 1.0}})});
  const SyntheticOracle o(spec);
  const auto ctx = steered_context(kMoon).follow_up("the secret word is moon.", spec.prompts.p_true);
  const auto probs = o.label_logits(ctx, std::vector<std::string>{"yes", "no"});
  EXPECT_NEAR(probs[0], 0.9, 1e-12);
}

}  // namespace
}  // namespace oracle_uq

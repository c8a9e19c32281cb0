#include "oracle_uq/methods.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>

#include "oracle_uq/error.hpp"
#include "oracle_uq/power_sampling.hpp"

namespace oracle_uq {
namespace {

std::string format_temperature(double t) {
  if (t == std::floor(t)) return fmt::format("{:.1f}", t);
  return fmt::format("{}", t);
}

double parse_double(std::string_view text) {
  // std::from_chars for double is not available in libstdc++ 11.
  std::string copy(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(copy, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == copy.size() && !copy.empty(), ErrorCode::kInvalidArgument,
          "bad number '" + copy + "'");
  return v;
}

int parse_int(std::string_view text) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), ErrorCode::kInvalidArgument,
          "bad integer '" + std::string(text) + "'");
  return v;
}

const SteeringSpec& steering_of(const ChatContext& ctx) {
  require(ctx.steering.has_value(), ErrorCode::kInvalidArgument,
          "steering-sensitivity needs a steering spec");
  return *ctx.steering;
}

Prediction make_prediction(MethodConfig config, ExtractedAnswer answer, std::string raw_text,
                           double confidence) {
  Prediction p;
  p.config = std::move(config);
  p.answer = std::move(answer);
  p.raw_text = std::move(raw_text);
  p.confidence = std::clamp(confidence, 0.0, 1.0);
  p.flags.empty_output = p.raw_text.empty();
  return p;
}

}  // namespace

std::string_view to_string(MethodId id) {
  switch (id) {
    case MethodId::kLogprob: return "logprob";
    case MethodId::kBootstrap: return "bootstrap";
    case MethodId::kDirectNumeric: return "direct_numeric";
    case MethodId::kMcmcAccept: return "mcmc_accept";
    case MethodId::kMcmcAgree: return "mcmc_agree";
    case MethodId::kSteerSens: return "steer_sens";
    case MethodId::kLabelConstrained: return "label_constrained";
    case MethodId::kPTrue: return "p_true";
  }
  return "unknown";
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kNone: return "none";
    case Variant::kWithOffset: return "with_offset";
    case Variant::kNoOffset: return "no_offset";
    case Variant::kExpectedValue: return "expected_value";
    case Variant::kPVeryHigh: return "p_very_high";
  }
  return "unknown";
}

MethodId parse_method_id(std::string_view text) {
  for (auto id : {MethodId::kLogprob, MethodId::kBootstrap, MethodId::kDirectNumeric,
                  MethodId::kMcmcAccept, MethodId::kMcmcAgree, MethodId::kSteerSens,
                  MethodId::kLabelConstrained, MethodId::kPTrue}) {
    if (to_string(id) == text) return id;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown method '" + std::string(text) + "'");
}

Variant parse_variant(std::string_view text) {
  for (auto v : {Variant::kNone, Variant::kWithOffset, Variant::kNoOffset, Variant::kExpectedValue,
                 Variant::kPVeryHigh}) {
    if (to_string(v) == text) return v;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown variant '" + std::string(text) + "'");
}

MethodConfig MethodConfig::logprob(Variant v) {
  MethodConfig c;
  c.method = MethodId::kLogprob;
  c.variant = v;
  return c;
}

MethodConfig MethodConfig::bootstrap(double t, int k) {
  MethodConfig c;
  c.method = MethodId::kBootstrap;
  c.temperature = t;
  c.k = k;
  return c;
}

MethodConfig MethodConfig::direct_numeric() {
  MethodConfig c;
  c.method = MethodId::kDirectNumeric;
  return c;
}

MethodConfig MethodConfig::mcmc_accept(double t) {
  MethodConfig c;
  c.method = MethodId::kMcmcAccept;
  c.temperature = t;
  return c;
}

MethodConfig MethodConfig::mcmc_agree(double t, int chains) {
  MethodConfig c;
  c.method = MethodId::kMcmcAgree;
  c.temperature = t;
  c.k = chains;
  return c;
}

MethodConfig MethodConfig::steer_sens(std::vector<double> grid) {
  MethodConfig c;
  c.method = MethodId::kSteerSens;
  c.grid = std::move(grid);
  return c;
}

MethodConfig MethodConfig::label_constrained(Variant readout) {
  MethodConfig c;
  c.method = MethodId::kLabelConstrained;
  c.variant = readout;
  return c;
}

MethodConfig MethodConfig::p_true() {
  MethodConfig c;
  c.method = MethodId::kPTrue;
  return c;
}

void MethodConfig::validate() const {
  const auto need_temperature = [&] {
    require(temperature.has_value() && *temperature > 0.0, ErrorCode::kInvalidArgument,
            std::string(to_string(method)) + " needs a positive temperature");
  };
  const auto need_k = [&] {
    require(k.has_value() && *k >= 1, ErrorCode::kInvalidArgument,
            std::string(to_string(method)) + " needs k >= 1");
  };
  require(answer_max_tokens > 0 && numeric_max_tokens > 0, ErrorCode::kInvalidArgument,
          "max_tokens must be positive");
  switch (method) {
    case MethodId::kLogprob:
      require(variant == Variant::kWithOffset || variant == Variant::kNoOffset,
              ErrorCode::kInvalidArgument, "logprob needs with_offset or no_offset");
      break;
    case MethodId::kBootstrap:
      need_temperature();
      need_k();
      break;
    case MethodId::kMcmcAgree:
      need_k();
      [[fallthrough]];
    case MethodId::kMcmcAccept:
      need_temperature();
      require(blocks >= 1 && block_len >= 1 && steps_per_block >= 1, ErrorCode::kInvalidArgument,
              "MH shape must be positive");
      break;
    case MethodId::kSteerSens:
      require(!grid.empty(), ErrorCode::kInvalidArgument, "steering grid is empty");
      require(std::find(grid.begin(), grid.end(), 1.0) != grid.end(), ErrorCode::kInvalidArgument,
              "steering grid must contain 1.0");
      break;
    case MethodId::kLabelConstrained:
      require(variant == Variant::kExpectedValue || variant == Variant::kPVeryHigh,
              ErrorCode::kInvalidArgument, "label_constrained needs expected_value or p_very_high");
      break;
    case MethodId::kDirectNumeric:
    case MethodId::kPTrue:
      break;
  }
}

std::string MethodConfig::label() const {
  std::string out(to_string(method));
  std::vector<std::string> parts;
  if (variant != Variant::kNone) parts.emplace_back(to_string(variant));
  if (temperature) parts.push_back("T=" + format_temperature(*temperature));
  const int default_k = method == MethodId::kBootstrap ? 20 : method == MethodId::kMcmcAgree ? 10 : 0;
  if (k && *k != default_k) parts.push_back("k=" + std::to_string(*k));
  if (method == MethodId::kSteerSens &&
      !std::equal(grid.begin(), grid.end(), kDefaultSteeringGrid.begin(), kDefaultSteeringGrid.end())) {
    std::string g = "grid=";
    for (std::size_t i = 0; i < grid.size(); ++i) g += (i ? "/" : "") + format_temperature(grid[i]);
    parts.push_back(g);
  }
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i == 0 ? ":" : ",") + parts[i];
  return out;
}

MethodConfig MethodConfig::parse(std::string_view label) {
  const auto colon = label.find(':');
  const MethodId id = parse_method_id(label.substr(0, colon));
  MethodConfig c;
  switch (id) {
    case MethodId::kLogprob: c = logprob(Variant::kWithOffset); break;
    case MethodId::kBootstrap: c = bootstrap(1.0); break;
    case MethodId::kDirectNumeric: c = direct_numeric(); break;
    case MethodId::kMcmcAccept: c = mcmc_accept(0.5); break;
    case MethodId::kMcmcAgree: c = mcmc_agree(0.5); break;
    case MethodId::kSteerSens: c = steer_sens(); break;
    case MethodId::kLabelConstrained: c = label_constrained(Variant::kExpectedValue); break;
    case MethodId::kPTrue: c = p_true(); break;
  }
  if (colon != std::string_view::npos) {
    std::string_view rest = label.substr(colon + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view part = rest.substr(0, comma);
      rest = comma == std::string_view::npos ? std::string_view() : rest.substr(comma + 1);
      if (part.starts_with("T=")) {
        c.temperature = parse_double(part.substr(2));
      } else if (part.starts_with("k=")) {
        c.k = parse_int(part.substr(2));
      } else if (part.starts_with("grid=")) {
        c.grid.clear();
        std::string_view g = part.substr(5);
        while (!g.empty()) {
          const auto slash = g.find('/');
          c.grid.push_back(parse_double(g.substr(0, slash)));
          g = slash == std::string_view::npos ? std::string_view() : g.substr(slash + 1);
        }
      } else {
        c.variant = parse_variant(part);
      }
    }
  }
  c.validate();
  return c;
}

std::vector<MethodConfig> default_method_grid() {
  std::vector<MethodConfig> grid;
  grid.push_back(MethodConfig::logprob(Variant::kNoOffset));
  grid.push_back(MethodConfig::logprob(Variant::kWithOffset));
  for (double t : kBootstrapTemperatures) grid.push_back(MethodConfig::bootstrap(t));
  grid.push_back(MethodConfig::steer_sens());
  for (double t : kMcmcTemperatures) grid.push_back(MethodConfig::mcmc_accept(t));
  for (double t : kMcmcTemperatures) grid.push_back(MethodConfig::mcmc_agree(t));
  grid.push_back(MethodConfig::direct_numeric());
  return grid;
}

std::vector<std::string> PredictionFlags::names() const {
  std::vector<std::string> out;
  if (parse_failed) out.emplace_back("parse_failed");
  if (empty_output) out.emplace_back("empty_output");
  return out;
}

ModeResult modal_answer(std::span<const std::optional<std::string>> answers,
                        const TabooVocabulary& vocab,
                        const std::optional<std::optional<std::string>>& preferred) {
  require(!answers.empty(), ErrorCode::kEmptyInput, "no answers to take the mode of");
  // Slot per vocabulary word plus a final slot for the null class (and any
  // out-of-vocabulary string, which cannot come out of extraction).
  const std::size_t null_slot = vocab.size();
  std::vector<std::size_t> counts(vocab.size() + 1, 0);
  std::vector<std::size_t> first(vocab.size() + 1, answers.size());
  const auto slot_of = [&](const std::optional<std::string>& a) {
    if (!a) return null_slot;
    return vocab.index_of(*a).value_or(null_slot);
  };
  for (std::size_t i = 0; i < answers.size(); ++i) {
    const std::size_t s = slot_of(answers[i]);
    ++counts[s];
    first[s] = std::min(first[s], i);
  }
  const std::size_t best_count = *std::max_element(counts.begin(), counts.end());
  std::size_t winner = null_slot;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    if (counts[s] == best_count) {
      winner = s;
      break;
    }
  }
  if (preferred) {
    const std::size_t p = slot_of(*preferred);
    if (counts[p] == best_count) winner = p;
  }
  ModeResult r;
  r.answer = winner == null_slot ? answers[first[winner]] : std::optional<std::string>(vocab.words()[winner]);
  r.count = best_count;
  r.total = answers.size();
  r.first_index = first[winner];
  return r;
}

std::optional<int> parse_confidence_integer(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size() && !(text[i] >= '0' && text[i] <= '9')) ++i;
  if (i == text.size()) return std::nullopt;
  std::size_t j = i;
  while (j < text.size() && text[j] >= '0' && text[j] <= '9') ++j;
  // Long digit runs cannot be in range; avoid overflow in from_chars.
  if (j - i > 3) return std::nullopt;
  int v = 0;
  std::from_chars(text.data() + i, text.data() + j, v);
  if (v > 100) return std::nullopt;
  return v;
}

double label_expected_value(std::span<const double> label_probs) {
  require(label_probs.size() == kConfidenceLabelValues.size(), ErrorCode::kInvalidArgument,
          "expected five label probabilities");
  double ev = 0.0;
  for (std::size_t i = 0; i < label_probs.size(); ++i) ev += label_probs[i] * kConfidenceLabelValues[i];
  return ev;
}

Prediction m1_logprob(const SteeredModel& model, const ChatContext& ctx,
                      const TabooVocabulary& vocab, Variant variant, int max_tokens) {
  const auto gen = model.greedy_decode(ctx, max_tokens);
  auto answer = extract_and_align(gen, vocab);
  MethodConfig config = MethodConfig::logprob(variant);
  config.answer_max_tokens = max_tokens;
  config.validate();

  double log_conf = 0.0;
  if (answer.is_null()) {
    if (!gen.logprobs_t1.empty()) log_conf = gen.logprobs_t1.front();
  } else if (variant == Variant::kWithOffset) {
    for (std::size_t i = answer.token_indices->begin; i < answer.token_indices->end; ++i) {
      log_conf += gen.logprobs_t1[i];
    }
  } else {
    const std::size_t n = std::min(answer.token_indices->size(), gen.logprobs_t1.size());
    for (std::size_t i = 0; i < n; ++i) log_conf += gen.logprobs_t1[i];
  }
  return make_prediction(std::move(config), std::move(answer), gen.text(), std::exp(log_conf));
}

Prediction m2_bootstrap(const SteeredModel& model, const ChatContext& ctx,
                        const TabooVocabulary& vocab, double temperature, int k,
                        std::uint64_t seed, int max_tokens) {
  MethodConfig config = MethodConfig::bootstrap(temperature, k);
  config.answer_max_tokens = max_tokens;
  config.validate();
  std::vector<ExtractedAnswer> extracted;
  std::vector<std::optional<std::string>> answers;
  std::vector<std::string> texts;
  extracted.reserve(k);
  for (int i = 0; i < k; ++i) {
    const auto gen = model.sample(ctx, temperature, max_tokens, seed + static_cast<std::uint64_t>(i));
    texts.push_back(gen.text());
    extracted.push_back(extract_first_word(texts.back(), vocab));
    answers.push_back(extracted.back().word);
  }
  const auto mode = modal_answer(answers, vocab);
  return make_prediction(std::move(config), extracted[mode.first_index], texts[mode.first_index],
                         mode.frequency());
}

Prediction m3_direct_numeric(const SteeredModel& model, const ChatContext& ctx,
                             const TabooVocabulary& vocab, const Prompts& prompts,
                             int answer_max_tokens, int numeric_max_tokens) {
  const auto turn1 = model.greedy_decode(ctx, answer_max_tokens);
  const std::string answer_text = turn1.text();
  const auto turn2 = model.greedy_decode(ctx.follow_up(answer_text, prompts.numeric), numeric_max_tokens);
  MethodConfig config = MethodConfig::direct_numeric();
  config.answer_max_tokens = answer_max_tokens;
  config.numeric_max_tokens = numeric_max_tokens;
  const auto parsed = parse_confidence_integer(turn2.text());
  auto p = make_prediction(std::move(config), extract_first_word(answer_text, vocab), answer_text,
                           parsed ? *parsed / 100.0 : 0.5);
  p.flags.parse_failed = !parsed.has_value();
  return p;
}

Prediction m6_steering_sensitivity(const SteeredModel& model, const ChatContext& ctx,
                                   const TabooVocabulary& vocab, std::span<const double> grid,
                                   int max_tokens) {
  MethodConfig config = MethodConfig::steer_sens({grid.begin(), grid.end()});
  config.answer_max_tokens = max_tokens;
  config.validate();
  const SteeringSpec& base = steering_of(ctx);
  std::vector<ExtractedAnswer> extracted;
  std::vector<std::optional<std::string>> answers;
  std::vector<std::string> texts;
  std::optional<std::optional<std::string>> at_unit;
  for (double c : grid) {
    ChatContext steered = ctx;
    steered.steering = base.with_coefficient(c);
    const auto gen = model.greedy_decode(steered, max_tokens);
    texts.push_back(gen.text());
    extracted.push_back(extract_first_word(texts.back(), vocab));
    answers.push_back(extracted.back().word);
    if (c == 1.0 && !at_unit) at_unit = answers.back();
  }
  const auto mode = modal_answer(answers, vocab, at_unit);
  return make_prediction(std::move(config), extracted[mode.first_index], texts[mode.first_index],
                         mode.frequency());
}

Prediction pilot_label_constrained(const SteeredModel& model, const ChatContext& ctx,
                                   const TabooVocabulary& vocab, Variant readout,
                                   const Prompts& prompts, int max_tokens) {
  MethodConfig config = MethodConfig::label_constrained(readout);
  config.answer_max_tokens = max_tokens;
  config.validate();
  const auto turn1 = model.greedy_decode(ctx, max_tokens);
  const std::string answer_text = turn1.text();
  const auto probs = model.label_logits(ctx.follow_up(answer_text, prompts.labels), kConfidenceLabels);
  const double conf = readout == Variant::kExpectedValue ? label_expected_value(probs) : probs.back();
  return make_prediction(std::move(config), extract_first_word(answer_text, vocab), answer_text, conf);
}

Prediction pilot_p_true(const SteeredModel& model, const ChatContext& ctx,
                        const TabooVocabulary& vocab, const Prompts& prompts, int max_tokens) {
  MethodConfig config = MethodConfig::p_true();
  config.answer_max_tokens = max_tokens;
  const auto turn1 = model.greedy_decode(ctx, max_tokens);
  const std::string answer_text = turn1.text();
  const auto probs = model.label_logits(ctx.follow_up(answer_text, prompts.p_true), kYesNoLabels);
  return make_prediction(std::move(config), extract_first_word(answer_text, vocab), answer_text,
                         probs.front());
}

Prediction predict(const SteeredModel& model, const ChatContext& ctx, const TabooVocabulary& vocab,
                   const MethodConfig& config, std::uint64_t seed, const Prompts& prompts) {
  config.validate();
  Prediction p;
  switch (config.method) {
    case MethodId::kLogprob:
      p = m1_logprob(model, ctx, vocab, config.variant, config.answer_max_tokens);
      break;
    case MethodId::kBootstrap:
      p = m2_bootstrap(model, ctx, vocab, *config.temperature, *config.k, seed, config.answer_max_tokens);
      break;
    case MethodId::kDirectNumeric:
      p = m3_direct_numeric(model, ctx, vocab, prompts, config.answer_max_tokens,
                            config.numeric_max_tokens);
      break;
    case MethodId::kMcmcAccept:
    case MethodId::kMcmcAgree: {
      MHConfig mh;
      mh.blocks = config.blocks;
      mh.block_len = config.block_len;
      mh.steps_per_block = config.steps_per_block;
      mh.proposal_temperature = *config.temperature;
      mh.seed = seed;
      p = config.method == MethodId::kMcmcAccept ? m4_acceptance(model, ctx, vocab, mh)
                                                 : m5_agreement(model, ctx, vocab, mh, *config.k);
      break;
    }
    case MethodId::kSteerSens:
      p = m6_steering_sensitivity(model, ctx, vocab, config.grid, config.answer_max_tokens);
      break;
    case MethodId::kLabelConstrained:
      p = pilot_label_constrained(model, ctx, vocab, config.variant, prompts, config.answer_max_tokens);
      break;
    case MethodId::kPTrue:
      p = pilot_p_true(model, ctx, vocab, prompts, config.answer_max_tokens);
      break;
  }
  p.config = config;
  return p;
}

}  // namespace oracle_uq

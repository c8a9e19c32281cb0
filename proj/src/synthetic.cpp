#include "oracle_uq/synthetic.hpp"

#include <algorithm>
#include <boost/random/gamma_distribution.hpp>
#include <cmath>
#include <fstream>
#include <limits>

#include "oracle_uq/error.hpp"
#include "oracle_uq/random.hpp"

namespace oracle_uq {
namespace {

void invalid(const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, "synthetic spec: " + msg); }

nlohmann::json distractors_to_json(const std::vector<Distractor>& ds) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : ds) {
    out.push_back({{"word", d.word ? nlohmann::json(*d.word) : nlohmann::json(nullptr)}, {"weight", d.weight}});
  }
  return out;
}

std::vector<Distractor> distractors_from_json(const nlohmann::json& j) {
  std::vector<Distractor> out;
  for (const auto& e : j) {
    Distractor d;
    if (!e.at("word").is_null()) d.word = e.at("word").get<std::string>();
    d.weight = e.at("weight").get<double>();
    out.push_back(std::move(d));
  }
  return out;
}

SyntheticItem generate_item(const SyntheticSpec& spec, const SampleKey& key) {
  const ItemGenerator& g = *spec.generator;
  Rng rng(derive_seed(spec.seed, item_ref(key)));
  std::vector<double> u(static_cast<std::size_t>(g.slots) + 1, 0.0);
  for (int i = 0; i < g.slots; ++i) u[i] = boost::random::gamma_distribution<double>(g.alpha)(rng);
  if (g.null_alpha > 0.0) u.back() = boost::random::gamma_distribution<double>(g.null_alpha)(rng);
  double total = 0.0;
  for (double v : u) total += v;
  if (!(total > 0.0)) {
    std::fill(u.begin(), u.end() - 1, 0.0);
    u[0] = total = 1.0;
  }
  for (double& v : u) v /= total;

  // Target slot drawn with probability proportional to u_i^(1/label_temperature).
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.slots; ++i) {
    if (u[i] > 0.0) peak = std::max(peak, std::log(u[i]));
  }
  std::vector<double> pick(static_cast<std::size_t>(g.slots), 0.0);
  for (int i = 0; i < g.slots; ++i) {
    if (u[i] > 0.0) pick[i] = std::exp((std::log(u[i]) - peak) / g.label_temperature);
  }
  const std::size_t target = draw_categorical(rng, pick);

  std::vector<std::string> others;
  for (const auto& w : spec.vocab.words()) {
    if (w != key.word) others.push_back(w);
  }
  shuffle(others, rng);

  SyntheticItem item;
  item.key = key;
  item.signal = u[target];
  item.null_mass = 0.0;
  std::vector<Distractor> ds;
  std::size_t next_other = 0;
  for (int i = 0; i < g.slots; ++i) {
    if (static_cast<std::size_t>(i) == target) continue;
    ds.push_back({others[next_other++], u[i]});
  }
  if (u.back() > 0.0) ds.push_back({std::nullopt, u.back()});
  item.distractors = std::move(ds);
  return item;
}

double clamp_prob(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

double logistic(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

std::vector<std::string> default_synthetic_words() {
  return {"ship", "smile", "moon", "cloud", "gold", "leaf",  "flame", "jump", "green", "snow",
          "book", "blue",  "wave", "salt",  "rock", "song", "dance", "chair", "gem",  "flag"};
}

std::string item_ref(const SampleKey& key) {
  return key.word + "/" + std::to_string(key.context_id) + "/" + std::to_string(key.verbalizer_id);
}

SampleKey parse_item_ref(std::string_view ref) {
  const auto a = ref.find('/');
  const auto b = a == std::string_view::npos ? a : ref.find('/', a + 1);
  require(a != std::string_view::npos && b != std::string_view::npos, ErrorCode::kUnknownItem,
          "malformed item reference '" + std::string(ref) + "'");
  SampleKey key;
  key.word = std::string(ref.substr(0, a));
  try {
    key.context_id = std::stoi(std::string(ref.substr(a + 1, b - a - 1)));
    key.verbalizer_id = std::stoi(std::string(ref.substr(b + 1)));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kUnknownItem, "malformed item reference '" + std::string(ref) + "'");
  }
  return key;
}

void SyntheticSpec::validate() const {
  if (vocab.size() == 0) invalid("vocabulary is empty");
  for (const auto& t : template_tokens) {
    if (t.empty()) invalid("template token is empty");
  }
  if (contexts < 1 || verbalizers < 1) invalid("contexts and verbalizers must be positive");
  if (null_mass < 0.0 || !std::isfinite(null_mass)) invalid("null_mass must be >= 0");
  if (kappa < 0.0 || !std::isfinite(kappa)) invalid("kappa must be >= 0");
  if (self_report_bias < 0.0 || self_report_bias > 1.0) invalid("self_report_bias must lie in [0, 1]");
  if (label_sharpness < 0.0) invalid("label_sharpness must be >= 0");
  if (label_log_scores && label_log_scores->size() != 5) invalid("label_log_scores needs five entries");
  if (!std::isfinite(p_true_slope) || !std::isfinite(p_true_bias)) invalid("P(True) map must be finite");
  for (const auto& w : two_token_words) {
    if (!vocab.contains(w)) invalid("two-token word '" + w + "' is not in the vocabulary");
    if (w.size() < 2) invalid("two-token word '" + w + "' is too short to split");
  }
  const auto check_distractors = [&](const std::string& word, const std::vector<Distractor>& ds) {
    for (const auto& d : ds) {
      if (d.weight < 0.0 || !std::isfinite(d.weight)) invalid("distractor weight must be >= 0");
      if (d.word && !vocab.contains(*d.word)) invalid("distractor '" + *d.word + "' is not in the vocabulary");
      if (d.word && *d.word == word) invalid("word '" + word + "' lists itself as a distractor");
    }
  };
  for (const auto& [word, ds] : distractors) {
    if (!vocab.contains(word)) invalid("distractor map key '" + word + "' is not in the vocabulary");
    check_distractors(word, ds);
  }
  std::vector<std::string> seen;
  for (const auto& item : items) {
    if (!vocab.contains(item.key.word)) invalid("item word '" + item.key.word + "' is not in the vocabulary");
    if (item.key.context_id < 0 || item.key.context_id >= contexts || item.key.verbalizer_id < 0 ||
        item.key.verbalizer_id >= verbalizers) {
      invalid("item " + item_ref(item.key) + " is out of range");
    }
    if (item.signal < 0.0 || item.signal > 1.0) invalid("item signal must lie in [0, 1]");
    if (item.null_mass && *item.null_mass < 0.0) invalid("item null_mass must be >= 0");
    if (item.distractors) check_distractors(item.key.word, *item.distractors);
    seen.push_back(item_ref(item.key));
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) invalid("duplicate item");
  if (generator) {
    if (generator->slots < 1 || static_cast<std::size_t>(generator->slots) > vocab.size()) {
      invalid("generator slots must lie in [1, vocabulary size]");
    }
    if (!(generator->alpha > 0.0) || generator->null_alpha < 0.0 || !(generator->label_temperature > 0.0)) {
      invalid("generator alpha and label_temperature must be positive, null_alpha >= 0");
    }
  }
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"vocab", s.vocab.words()},
                     {"template", s.template_tokens},
                     {"contexts", s.contexts},
                     {"verbalizers", s.verbalizers},
                     {"seed", s.seed},
                     {"null_mass", s.null_mass},
                     {"kappa", s.kappa},
                     {"self_report_bias", s.self_report_bias},
                     {"two_token_words", s.two_token_words},
                     {"label_sharpness", s.label_sharpness},
                     {"p_true_slope", s.p_true_slope},
                     {"p_true_bias", s.p_true_bias},
                     {"prompts",
                      {{"numeric", s.prompts.numeric}, {"labels", s.prompts.labels}, {"p_true", s.prompts.p_true}}}};
  if (s.label_log_scores) j["label_log_scores"] = *s.label_log_scores;
  if (s.generator) {
    j["generator"] = {{"slots", s.generator->slots},
                      {"alpha", s.generator->alpha},
                      {"null_alpha", s.generator->null_alpha},
                      {"label_temperature", s.generator->label_temperature}};
  }
  nlohmann::json dmap = nlohmann::json::object();
  for (const auto& [w, ds] : s.distractors) dmap[w] = distractors_to_json(ds);
  j["distractors"] = std::move(dmap);
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : s.items) {
    nlohmann::json e{{"word", it.key.word},
                     {"context_id", it.key.context_id},
                     {"verbalizer_id", it.key.verbalizer_id},
                     {"signal", it.signal}};
    if (it.distractors) e["distractors"] = distractors_to_json(*it.distractors);
    if (it.null_mass) e["null_mass"] = *it.null_mass;
    items.push_back(std::move(e));
  }
  j["items"] = std::move(items);
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s = SyntheticSpec{};
  s.vocab = TabooVocabulary(j.at("vocab").get<std::vector<std::string>>());
  if (j.contains("template")) s.template_tokens = j.at("template").get<std::vector<std::string>>();
  s.contexts = j.value("contexts", s.contexts);
  s.verbalizers = j.value("verbalizers", s.verbalizers);
  s.seed = j.value("seed", s.seed);
  s.null_mass = j.value("null_mass", s.null_mass);
  s.kappa = j.value("kappa", s.kappa);
  s.self_report_bias = j.value("self_report_bias", s.self_report_bias);
  s.two_token_words = j.value("two_token_words", s.two_token_words);
  s.label_sharpness = j.value("label_sharpness", s.label_sharpness);
  s.p_true_slope = j.value("p_true_slope", s.p_true_slope);
  s.p_true_bias = j.value("p_true_bias", s.p_true_bias);
  if (j.contains("label_log_scores") && !j.at("label_log_scores").is_null()) {
    s.label_log_scores = j.at("label_log_scores").get<std::vector<double>>();
  }
  if (j.contains("prompts")) {
    const auto& p = j.at("prompts");
    s.prompts.numeric = p.value("numeric", s.prompts.numeric);
    s.prompts.labels = p.value("labels", s.prompts.labels);
    s.prompts.p_true = p.value("p_true", s.prompts.p_true);
  }
  if (j.contains("generator") && !j.at("generator").is_null()) {
    const auto& g = j.at("generator");
    ItemGenerator gen;
    gen.slots = g.value("slots", gen.slots);
    gen.alpha = g.value("alpha", gen.alpha);
    gen.null_alpha = g.value("null_alpha", gen.null_alpha);
    gen.label_temperature = g.value("label_temperature", gen.label_temperature);
    s.generator = gen;
  }
  if (j.contains("distractors")) {
    for (const auto& [w, ds] : j.at("distractors").items()) s.distractors[w] = distractors_from_json(ds);
  }
  if (j.contains("items")) {
    for (const auto& e : j.at("items")) {
      SyntheticItem it;
      it.key.word = e.at("word").get<std::string>();
      it.key.context_id = e.value("context_id", 0);
      it.key.verbalizer_id = e.value("verbalizer_id", 0);
      it.signal = e.at("signal").get<double>();
      if (e.contains("distractors")) it.distractors = distractors_from_json(e.at("distractors"));
      if (e.contains("null_mass")) it.null_mass = e.at("null_mass").get<double>();
      s.items.push_back(std::move(it));
    }
  }
  s.validate();
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kInvalidArgument, "cannot open synthetic preset '" + path + "'");
  try {
    return nlohmann::json::parse(in).get<SyntheticSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "bad synthetic preset '" + path + "': " + e.what());
  }
}

double AnswerDistribution::total() const {
  double t = null_prob;
  for (double p : words) t += p;
  return t;
}

std::optional<std::size_t> AnswerDistribution::modal_index() const {
  std::optional<std::size_t> best;
  double best_p = -1.0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] > best_p) {
      best_p = words[i];
      best = i;
    }
  }
  if (null_prob > best_p) return std::nullopt;
  return best;
}

double AnswerDistribution::modal_prob() const {
  const auto m = modal_index();
  return m ? words[*m] : null_prob;
}

SyntheticOracle::SyntheticOracle(SyntheticSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  add_token("");  // end-of-sequence
  for (const auto& t : spec_.template_tokens) template_ids_.push_back(add_token(t));
  period_ = add_token(".");
  const std::string lead = spec_.template_tokens.empty() ? "" : " ";
  for (const auto& w : spec_.vocab.words()) {
    const bool two = std::find(spec_.two_token_words.begin(), spec_.two_token_words.end(), w) !=
                     spec_.two_token_words.end();
    if (two) {
      const std::size_t half = w.size() / 2;
      word_tokens_.push_back({add_token(lead + w.substr(0, half)), add_token(w.substr(half))});
    } else {
      word_tokens_.push_back({add_token(lead + w)});
    }
  }
  for (int v = 0; v <= 100; ++v) number_ids_.push_back(add_token(std::to_string(v)));
  for (const auto& l : kConfidenceLabels) label_ids_.push_back(add_token(l));
  yes_ = add_token("yes");
  no_ = add_token("no");

  for (std::size_t i = 0; i < spec_.items.size(); ++i) item_index_.emplace(item_ref(spec_.items[i].key), i);
  if (spec_.generator) {
    for (const auto& w : spec_.vocab.words()) {
      for (int c = 0; c < spec_.contexts; ++c) {
        for (int v = 0; v < spec_.verbalizers; ++v) {
          const SampleKey key{w, c, v};
          if (item_index_.count(item_ref(key))) continue;
          spec_.items.push_back(generate_item(spec_, key));
          item_index_.emplace(item_ref(key), spec_.items.size() - 1);
        }
      }
    }
  }
}

TokenId SyntheticOracle::add_token(std::string text) {
  const auto id = static_cast<TokenId>(texts_.size());
  by_text_.emplace(text, id);
  texts_.push_back(std::move(text));
  return id;
}

std::optional<std::vector<TokenId>> SyntheticOracle::encode(std::string_view text) const {
  if (text.empty()) return std::nullopt;
  const auto it = by_text_.find(std::string(text));
  if (it == by_text_.end()) return std::nullopt;
  return std::vector<TokenId>{it->second};
}

SyntheticItem SyntheticOracle::item(const SampleKey& key) const {
  const auto it = item_index_.find(item_ref(key));
  require(it != item_index_.end(), ErrorCode::kUnknownItem, "no synthetic item " + item_ref(key));
  return spec_.items[it->second];
}

AnswerDistribution SyntheticOracle::steered_answer_distribution(const SyntheticItem& item,
                                                                double coefficient) const {
  require(std::isfinite(coefficient), ErrorCode::kInvalidArgument, "coefficient must be finite");
  const auto target = spec_.vocab.index_of(item.key.word);
  require(target.has_value(), ErrorCode::kUnknownItem, "item word not in vocabulary");
  AnswerDistribution d;
  d.words.assign(spec_.vocab.size(), 0.0);
  const double g = std::exp(-spec_.kappa * (coefficient - 1.0) * (coefficient - 1.0));
  const double p_correct = std::clamp(item.signal * g, 0.0, 1.0);
  d.words[*target] = p_correct;
  const double rest = 1.0 - p_correct;

  static const std::vector<Distractor> kNone;
  const std::vector<Distractor>* ds = &kNone;
  if (item.distractors) {
    ds = &*item.distractors;
  } else if (const auto it = spec_.distractors.find(item.key.word); it != spec_.distractors.end()) {
    ds = &it->second;
  }
  const double null_weight = item.null_mass.value_or(spec_.null_mass);
  double total = null_weight;
  for (const auto& x : *ds) total += x.weight;
  if (!(total > 0.0)) {
    d.null_prob = rest;
    return d;
  }
  d.null_prob = rest * null_weight / total;
  for (const auto& x : *ds) {
    const double share = rest * x.weight / total;
    if (x.word) {
      d.words[*spec_.vocab.index_of(*x.word)] += share;
    } else {
      d.null_prob += share;
    }
  }
  return d;
}

GroundTruth SyntheticOracle::ground_truth(const SampleKey& key) const {
  GroundTruth gt;
  gt.distribution = steered_answer_distribution(item(key), 1.0);
  if (const auto m = gt.distribution.modal_index()) gt.modal_word = spec_.vocab.words()[*m];
  gt.correctness_prob = gt.distribution.words[*spec_.vocab.index_of(key.word)];
  return gt;
}

SyntheticOracle::TurnKind SyntheticOracle::classify(const ChatContext& ctx) const {
  const std::string& q = ctx.last_user_text();
  if (q == spec_.prompts.numeric) return TurnKind::kNumeric;
  if (q == spec_.prompts.labels) return TurnKind::kLabels;
  if (q == spec_.prompts.p_true) return TurnKind::kPTrue;
  return TurnKind::kAnswer;
}

AnswerDistribution SyntheticOracle::distribution_for(const ChatContext& ctx) const {
  require(ctx.steering.has_value(), ErrorCode::kInvalidArgument, "synthetic oracle needs a steering spec");
  return steered_answer_distribution(item(parse_item_ref(ctx.steering->activation_ref)),
                                     ctx.steering->coefficient);
}

std::vector<double> SyntheticOracle::single_step_law(
    std::span<const TokenId> prefix, const std::vector<std::pair<TokenId, double>>& first) const {
  std::vector<double> law(texts_.size(), 0.0);
  if (prefix.empty()) {
    for (const auto& [tok, p] : first) law[tok] += p;
  } else {
    law[eos_token()] = 1.0;
  }
  return law;
}

std::vector<double> SyntheticOracle::answer_law(const AnswerDistribution& dist,
                                                std::span<const TokenId> prefix) const {
  std::vector<double> law(texts_.size(), 0.0);
  const TokenId eos = eos_token();
  const std::size_t m = template_ids_.size();
  const std::size_t t = prefix.size();
  const auto finish = [&] {
    law[eos] = 1.0;
    return law;
  };
  if (std::find(prefix.begin(), prefix.end(), eos) != prefix.end()) return finish();

  const auto word_law = [&](double scale) {
    for (std::size_t i = 0; i < dist.words.size(); ++i) law[word_tokens_[i][0]] += dist.words[i] * scale;
  };
  if (t == 0) {
    law[eos] = dist.null_prob;
    if (m > 0) {
      law[template_ids_[0]] = 1.0 - dist.null_prob;
    } else {
      word_law(1.0);
    }
    return law;
  }
  if (t < m) {
    if (!std::equal(prefix.begin(), prefix.end(), template_ids_.begin())) return finish();
    law[template_ids_[t]] = 1.0;
    return law;
  }
  if (!std::equal(template_ids_.begin(), template_ids_.end(), prefix.begin())) return finish();
  if (t == m) {
    const double live = 1.0 - dist.null_prob;
    if (!(live > 0.0)) return finish();
    word_law(1.0 / live);
    return law;
  }
  const TokenId first = prefix[m];
  std::size_t w = 0;
  while (w < word_tokens_.size() && word_tokens_[w][0] != first) ++w;
  if (w == word_tokens_.size()) return finish();
  const auto& toks = word_tokens_[w];
  const std::size_t k = toks.size();
  if (t < m + k) {
    if (!std::equal(prefix.begin() + static_cast<std::ptrdiff_t>(m), prefix.end(), toks.begin())) return finish();
    law[toks[t - m]] = 1.0;
    return law;
  }
  if (t == m + k && std::equal(toks.begin(), toks.end(), prefix.begin() + static_cast<std::ptrdiff_t>(m))) {
    law[period_] = 1.0;
    return law;
  }
  return finish();
}

std::vector<double> SyntheticOracle::next_distribution(const ChatContext& ctx,
                                                       std::span<const TokenId> prefix) const {
  const auto dist = distribution_for(ctx);
  switch (classify(ctx)) {
    case TurnKind::kAnswer:
      return answer_law(dist, prefix);
    case TurnKind::kNumeric: {
      const double pm = dist.modal_prob();
      const auto honest = static_cast<std::size_t>(std::clamp(std::lround(100.0 * pm), 0L, 100L));
      return single_step_law(prefix, {{number_ids_[honest], 1.0 - spec_.self_report_bias},
                                      {number_ids_[100], spec_.self_report_bias}});
    }
    case TurnKind::kLabels: {
      const double pm = dist.modal_prob();
      std::vector<double> scores(5);
      for (std::size_t i = 0; i < 5; ++i) {
        const double d = kConfidenceLabelValues[i] - pm;
        scores[i] = spec_.label_log_scores ? (*spec_.label_log_scores)[i] : -spec_.label_sharpness * d * d;
      }
      const double peak = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      for (double s : scores) z += std::exp(s - peak);
      std::vector<std::pair<TokenId, double>> first;
      for (std::size_t i = 0; i < 5; ++i) first.emplace_back(label_ids_[i], std::exp(scores[i] - peak) / z);
      return single_step_law(prefix, first);
    }
    case TurnKind::kPTrue: {
      const double pm = clamp_prob(dist.modal_prob());
      const double yes = logistic(spec_.p_true_slope * (std::log(pm) - std::log1p(-pm)) + spec_.p_true_bias);
      return single_step_law(prefix, {{yes_, yes}, {no_, 1.0 - yes}});
    }
  }
  return answer_law(dist, prefix);
}

}  // namespace oracle_uq

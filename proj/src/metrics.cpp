#include "oracle_uq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>

#include "oracle_uq/error.hpp"

namespace oracle_uq {
namespace {

void require_non_empty(std::span<const Outcome> xs, const char* what) {
  require(!xs.empty(), ErrorCode::kEmptyInput, std::string(what) + " of no records");
}

// Average 1-based ranks of `values`, ties sharing the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : "n/a"; }

}  // namespace

void to_json(nlohmann::json& j, const EvalRecord& r) {
  j = nlohmann::json{{"word", r.key.word},
                     {"context_id", r.key.context_id},
                     {"verbalizer_id", r.key.verbalizer_id},
                     {"method", r.method},
                     {"params", r.params},
                     {"answer", r.answer ? nlohmann::json(*r.answer) : nlohmann::json(nullptr)},
                     {"confidence", r.confidence},
                     {"correct", r.correct ? 1 : 0},
                     {"flags", r.flags},
                     {"seed", r.seed},
                     {"wall_ms", r.wall_ms}};
}

void from_json(const nlohmann::json& j, EvalRecord& r) {
  j.at("word").get_to(r.key.word);
  j.at("context_id").get_to(r.key.context_id);
  j.at("verbalizer_id").get_to(r.key.verbalizer_id);
  j.at("method").get_to(r.method);
  r.params = j.value("params", nlohmann::json::object());
  const auto& a = j.at("answer");
  r.answer = a.is_null() ? std::nullopt : std::optional<std::string>(a.get<std::string>());
  j.at("confidence").get_to(r.confidence);
  const auto& c = j.at("correct");
  r.correct = c.is_boolean() ? c.get<bool>() : c.get<int>() != 0;
  r.flags = j.value("flags", std::vector<std::string>{});
  j.at("seed").get_to(r.seed);
  r.wall_ms = j.value("wall_ms", 0.0);
}

void canonical_sort(std::vector<EvalRecord>& records) {
  std::sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    if (a.key != b.key) return a.key < b.key;
    return a.method < b.method;
  });
}

std::vector<Outcome> outcomes_of(std::span<const EvalRecord> records) {
  std::vector<Outcome> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.confidence, r.correct});
  return out;
}

double accuracy(std::span<const Outcome> xs) {
  require_non_empty(xs, "accuracy");
  std::size_t hits = 0;
  for (const auto& x : xs) hits += x.correct;
  return static_cast<double>(hits) / static_cast<double>(xs.size());
}

int reliability_bin(double confidence) {
  int b = 0;
  for (int i = 1; i < kReliabilityBins; ++i) {
    if (confidence >= i / 10.0) b = i;
  }
  return b;
}

ReliabilityBins reliability_bins(std::span<const Outcome> xs) {
  ReliabilityBins out;
  out.n = xs.size();
  std::array<double, kReliabilityBins> conf_sum{};
  std::array<std::size_t, kReliabilityBins> hits{};
  for (const auto& x : xs) {
    const int b = reliability_bin(x.confidence);
    ++out.bins[b].count;
    conf_sum[b] += x.confidence;
    hits[b] += x.correct;
  }
  for (int b = 0; b < kReliabilityBins; ++b) {
    auto& bin = out.bins[b];
    bin.lo = b / 10.0;
    bin.hi = (b + 1) / 10.0;
    if (bin.count > 0) {
      bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
      bin.accuracy = static_cast<double>(hits[b]) / static_cast<double>(bin.count);
    }
  }
  return out;
}

double ece(std::span<const Outcome> xs) {
  require_non_empty(xs, "ECE");
  const auto bins = reliability_bins(xs);
  double total = 0.0;
  for (const auto& bin : bins.bins) {
    if (bin.count == 0) continue;
    total += static_cast<double>(bin.count) / static_cast<double>(bins.n) *
             std::abs(bin.accuracy - bin.mean_confidence);
  }
  return total;
}

double brier(std::span<const Outcome> xs) {
  require_non_empty(xs, "Brier score");
  double s = 0.0;
  for (const auto& x : xs) {
    const double d = x.confidence - (x.correct ? 1.0 : 0.0);
    s += d * d;
  }
  return s / static_cast<double>(xs.size());
}

double nll(std::span<const Outcome> xs, double epsilon) {
  require_non_empty(xs, "NLL");
  require(epsilon > 0.0 && epsilon < 0.5, ErrorCode::kInvalidArgument, "epsilon must lie in (0, 0.5)");
  double s = 0.0;
  for (const auto& x : xs) {
    const double c = std::clamp(x.confidence, epsilon, 1.0 - epsilon);
    s += x.correct ? std::log(c) : std::log1p(-c);
  }
  return -s / static_cast<double>(xs.size());
}

std::optional<double> auroc(std::span<const Outcome> xs) {
  require_non_empty(xs, "AUROC");
  std::vector<double> conf;
  conf.reserve(xs.size());
  std::size_t pos = 0;
  for (const auto& x : xs) {
    conf.push_back(x.confidence);
    pos += x.correct;
  }
  const std::size_t neg = xs.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const auto ranks = average_ranks(conf);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].correct) rank_sum += ranks[i];
  }
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

ConfidenceSplit confidence_split(std::span<const Outcome> xs) {
  double sc = 0.0, sw = 0.0;
  std::size_t nc = 0, nw = 0;
  for (const auto& x : xs) {
    if (x.correct) {
      sc += x.confidence;
      ++nc;
    } else {
      sw += x.confidence;
      ++nw;
    }
  }
  require(nc > 0 && nw > 0, ErrorCode::kSingleClass, "confidence split needs both correct and wrong records");
  ConfidenceSplit out;
  out.mean_correct = sc / static_cast<double>(nc);
  out.mean_wrong = sw / static_cast<double>(nw);
  out.delta = out.mean_correct - out.mean_wrong;
  return out;
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::kAccuracy: return "accuracy";
    case Metric::kEce: return "ece";
    case Metric::kBrier: return "brier";
    case Metric::kNll: return "nll";
    case Metric::kAuroc: return "auroc";
  }
  return "unknown";
}

bool higher_is_better(Metric m) { return m == Metric::kAccuracy || m == Metric::kAuroc; }

std::optional<double> evaluate(Metric m, std::span<const Outcome> xs) {
  switch (m) {
    case Metric::kAccuracy: return accuracy(xs);
    case Metric::kEce: return ece(xs);
    case Metric::kBrier: return brier(xs);
    case Metric::kNll: return nll(xs);
    case Metric::kAuroc: return auroc(xs);
  }
  return std::nullopt;
}

std::optional<double> MetricRow::get(Metric m) const {
  switch (m) {
    case Metric::kAccuracy: return accuracy;
    case Metric::kEce: return ece;
    case Metric::kBrier: return brier;
    case Metric::kNll: return nll;
    case Metric::kAuroc: return auroc;
  }
  return std::nullopt;
}

MetricRow metric_row(std::span<const Outcome> xs) {
  MetricRow row;
  row.n = xs.size();
  row.accuracy = accuracy(xs);
  row.ece = ece(xs);
  row.brier = brier(xs);
  row.nll = nll(xs);
  row.auroc = auroc(xs);
  return row;
}

const ScorecardRow* Scorecard::find(std::string_view method) const {
  for (const auto& r : rows) {
    if (r.method == method) return &r;
  }
  return nullptr;
}

Scorecard scorecard(std::span<const EvalRecord> records, std::span<const std::string> order) {
  std::map<std::string, std::vector<Outcome>> groups;
  for (const auto& r : records) groups[r.method].push_back({r.confidence, r.correct});

  std::vector<std::string> methods;
  for (const auto& m : order) {
    if (groups.count(m) && std::find(methods.begin(), methods.end(), m) == methods.end()) {
      methods.push_back(m);
    }
  }
  for (const auto& [m, _] : groups) {
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }

  Scorecard card;
  for (const auto& m : methods) card.rows.push_back({m, metric_row(groups[m]), {}});
  return card;
}

std::vector<RankRow> rank_summary(const Scorecard& card) {
  std::vector<RankRow> rows(card.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].method = card.rows[i].method;

  for (std::size_t k = 0; k < kAllMetrics.size(); ++k) {
    const Metric m = kAllMetrics[k];
    // Map every metric to "smaller is better"; undefined goes to +inf.
    std::vector<double> keys;
    for (const auto& r : card.rows) {
      const auto v = r.metrics.get(m);
      if (!v) {
        keys.push_back(std::numeric_limits<double>::infinity());
      } else {
        keys.push_back(higher_is_better(m) ? -*v : *v);
      }
    }
    const auto ranks = average_ranks(keys);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].ranks[k] = ranks[i];
  }
  for (auto& r : rows) {
    r.mean_rank = std::accumulate(r.ranks.begin(), r.ranks.end(), 0.0) / 5.0;
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const RankRow& a, const RankRow& b) { return a.mean_rank < b.mean_rank; });
  return rows;
}

PerWordTable per_word_breakdown(std::span<const EvalRecord> records,
                                std::span<const std::string> expected_words) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // n, hits
  for (const auto& r : records) {
    auto& c = counts[r.key.word];
    ++c.first;
    c.second += r.correct;
  }
  PerWordTable table;
  for (const auto& [word, c] : counts) {
    table.rows.push_back({word, c.first, static_cast<double>(c.second) / static_cast<double>(c.first)});
  }
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const WordAccuracy& a, const WordAccuracy& b) { return a.accuracy > b.accuracy; });
  for (const auto& w : expected_words) {
    if (!counts.count(w)) table.missing.push_back(w);
  }
  return table;
}

nlohmann::json to_json(const Scorecard& card) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : card.rows) {
    nlohmann::json row{{"method", r.method},
                       {"n", r.metrics.n},
                       {"accuracy", r.metrics.accuracy},
                       {"ece", r.metrics.ece},
                       {"brier", r.metrics.brier},
                       {"nll", r.metrics.nll},
                       {"auroc", optional_number(r.metrics.auroc)}};
    if (!r.ci.empty()) {
      nlohmann::json ci = nlohmann::json::object();
      for (const auto& [m, c] : r.ci) {
        ci[std::string(to_string(m))] = {{"point", c.point}, {"lo", c.lo},
                                         {"hi", c.hi},       {"resamples", c.resamples},
                                         {"skipped", c.skipped}, {"level", c.level}};
      }
      row["ci"] = std::move(ci);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const ReliabilityBins& bins) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : bins.bins) {
    out.push_back({{"lo", b.lo},
                   {"hi", b.hi},
                   {"count", b.count},
                   {"mean_confidence", b.mean_confidence},
                   {"accuracy", b.accuracy}});
  }
  return out;
}

nlohmann::json to_json(const std::vector<RankRow>& ranks) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : ranks) {
    nlohmann::json row{{"method", r.method}, {"mean_rank", r.mean_rank}};
    for (std::size_t k = 0; k < kAllMetrics.size(); ++k) {
      row[std::string(to_string(kAllMetrics[k]))] = r.ranks[k];
    }
    out.push_back(std::move(row));
  }
  return out;
}

nlohmann::json to_json(const PerWordTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) rows.push_back({{"word", r.word}, {"n", r.n}, {"accuracy", r.accuracy}});
  return {{"rows", rows}, {"missing", table.missing}};
}

std::string format_ci(const CIResult& ci) {
  return fmt::format("{:.3f} [{:.3f}, {:.3f}]", ci.point, ci.lo, ci.hi);
}

std::string format_scorecard(const Scorecard& card) {
  std::size_t width = 6;
  for (const auto& r : card.rows) width = std::max(width, r.method.size());
  const bool with_ci = std::any_of(card.rows.begin(), card.rows.end(),
                                   [](const ScorecardRow& r) { return !r.ci.empty(); });
  const std::size_t col = with_ci ? 22 : 7;

  std::string out = fmt::format("{:<{}}  {:>6}", "method", width, "n");
  for (const char* h : {"Acc", "ECE", "Brier", "NLL", "AUROC"}) out += fmt::format("  {:>{}}", h, col);
  out += '\n';
  for (const auto& r : card.rows) {
    out += fmt::format("{:<{}}  {:>6}", r.method, width, r.metrics.n);
    for (Metric m : kAllMetrics) {
      const auto it = r.ci.find(m);
      const std::string text = it != r.ci.end() ? format_ci(it->second) : cell(r.metrics.get(m));
      out += fmt::format("  {:>{}}", text, col);
    }
    out += '\n';
  }
  return out;
}

std::string format_rank_summary(const std::vector<RankRow>& ranks) {
  std::size_t width = 6;
  for (const auto& r : ranks) width = std::max(width, r.method.size());
  std::string out = fmt::format("{:<{}}", "method", width);
  for (const char* h : {"Acc", "ECE", "Brier", "NLL", "AUROC", "mean"}) out += fmt::format("  {:>6}", h);
  out += '\n';
  for (const auto& r : ranks) {
    out += fmt::format("{:<{}}", r.method, width);
    for (double v : r.ranks) out += fmt::format("  {:>6.1f}", v);
    out += fmt::format("  {:>6.2f}\n", r.mean_rank);
  }
  return out;
}

std::string format_reliability(const ReliabilityBins& bins) {
  std::string out = fmt::format("{:<11}  {:>6}  {:>8}  {:>8}\n", "bin", "count", "conf", "acc");
  for (const auto& b : bins.bins) {
    out += fmt::format("[{:.1f}, {:.1f}{}  {:>6}  {:>8.3f}  {:>8.3f}\n", b.lo, b.hi, b.hi >= 1.0 ? ']' : ')',
                       b.count, b.mean_confidence, b.accuracy);
  }
  return out;
}

std::string format_per_word(const PerWordTable& table) {
  std::size_t width = 4;
  for (const auto& r : table.rows) width = std::max(width, r.word.size());
  std::string out = fmt::format("{:<{}}  {:>6}  {:>8}\n", "word", width, "n", "acc");
  for (const auto& r : table.rows) out += fmt::format("{:<{}}  {:>6}  {:>8.3f}\n", r.word, width, r.n, r.accuracy);
  for (const auto& w : table.missing) out += fmt::format("warning: no records for '{}'\n", w);
  return out;
}

}  // namespace oracle_uq

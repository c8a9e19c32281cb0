#include "oracle_uq/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <sstream>
#include <thread>

#include "oracle_uq/error.hpp"
#include "oracle_uq/random.hpp"
#include "oracle_uq/synthetic.hpp"
#include "oracle_uq/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace oracle_uq {
namespace {

constexpr std::size_t kChunk = 64;
constexpr const char* kDefaultVerbalizer = "What is the secret word?";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), ErrorCode::kInvalidArgument, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::kInvalidArgument, "cannot write " + tmp.string());
    out << text;
    out.flush();
    require(out.good(), ErrorCode::kInvalidArgument, "short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::optional<double> bootstrap_temperature(const std::string& label) {
  try {
    const auto m = MethodConfig::parse(label);
    if (m.method == MethodId::kBootstrap) return m.temperature;
  } catch (const Error&) {
  }
  return std::nullopt;
}

std::map<double, std::vector<const EvalRecord*>> bootstrap_groups(std::span<const EvalRecord> records) {
  std::map<double, std::vector<const EvalRecord*>> groups;
  std::map<std::string, std::optional<double>> cache;
  for (const auto& r : records) {
    auto it = cache.find(r.method);
    if (it == cache.end()) it = cache.emplace(r.method, bootstrap_temperature(r.method)).first;
    if (it->second) groups[*it->second].push_back(&r);
  }
  return groups;
}

std::vector<std::string> ordered_methods(std::span<const EvalRecord> records, std::span<const std::string> order) {
  std::vector<std::string> out(order.begin(), order.end());
  std::vector<std::string> rest;
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.method) == out.end() &&
        std::find(rest.begin(), rest.end(), r.method) == rest.end()) {
      rest.push_back(r.method);
    }
  }
  std::sort(rest.begin(), rest.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace

void RunConfig::validate() const {
  require(!backend.empty(), ErrorCode::kInvalidArgument, "run config needs a backend");
  require(contexts >= 1 && verbalizers >= 1, ErrorCode::kInvalidArgument, "contexts and verbalizers must be positive");
  require(jobs >= 1, ErrorCode::kInvalidArgument, "jobs must be positive");
  require(!n_words || *n_words >= 1, ErrorCode::kInvalidArgument, "n_words must be positive");
  require(verbalizer_prompts.empty() || verbalizer_prompts.size() >= static_cast<std::size_t>(verbalizers),
          ErrorCode::kInvalidArgument, "fewer verbalizer prompts than verbalizers");
  require(ci_resamples >= 1, ErrorCode::kInvalidArgument, "ci resamples must be positive");
  for (const auto& m : methods) MethodConfig::parse(m);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"backend", c.backend},
           {"words", c.words},
           {"contexts", c.contexts},
           {"verbalizers", c.verbalizers},
           {"methods", c.methods},
           {"seed", c.seed},
           {"out", c.out},
           {"jobs", c.jobs},
           {"n_words", c.n_words ? json(*c.n_words) : json(nullptr)},
           {"controlled_n", c.controlled_n},
           {"prompts", {{"numeric", c.prompts.numeric}, {"labels", c.prompts.labels}, {"p_true", c.prompts.p_true}}},
           {"verbalizer_prompts", c.verbalizer_prompts},
           {"steering", {{"read_layer", c.read_layer}, {"injection_layer", c.injection_layer}, {"positions", c.positions}}},
           {"ci", {{"resamples", c.ci_resamples}, {"seed", c.ci_seed}}},
           {"max_cells", c.max_cells ? json(*c.max_cells) : json(nullptr)}};
  json lists = json::object();
  for (const auto& [n, words] : c.controlled_n_lists) lists[std::to_string(n)] = words;
  j["controlled_n_lists"] = std::move(lists);
  j["holdout_words"] = c.holdout_words ? json(*c.holdout_words) : json(nullptr);
}

void from_json(const json& j, RunConfig& c) {
  c = RunConfig{};
  c.backend = j.value("backend", c.backend);
  c.words = j.value("words", c.words);
  c.contexts = j.value("contexts", c.contexts);
  c.verbalizers = j.value("verbalizers", c.verbalizers);
  c.methods = j.value("methods", c.methods);
  c.seed = j.value("seed", c.seed);
  c.out = j.value("out", c.out);
  c.jobs = j.value("jobs", c.jobs);
  if (j.contains("n_words") && !j.at("n_words").is_null()) c.n_words = j.at("n_words").get<int>();
  c.controlled_n = j.value("controlled_n", c.controlled_n);
  if (j.contains("controlled_n_lists")) {
    for (const auto& [k, v] : j.at("controlled_n_lists").items()) {
      c.controlled_n_lists[std::stoi(k)] = v.get<std::vector<std::string>>();
    }
  }
  if (j.contains("holdout_words") && !j.at("holdout_words").is_null()) {
    c.holdout_words = j.at("holdout_words").get<std::vector<std::string>>();
  }
  if (j.contains("prompts")) {
    const auto& p = j.at("prompts");
    c.prompts.numeric = p.value("numeric", c.prompts.numeric);
    c.prompts.labels = p.value("labels", c.prompts.labels);
    c.prompts.p_true = p.value("p_true", c.prompts.p_true);
  }
  c.verbalizer_prompts = j.value("verbalizer_prompts", c.verbalizer_prompts);
  if (j.contains("steering")) {
    const auto& s = j.at("steering");
    c.read_layer = s.value("read_layer", c.read_layer);
    c.injection_layer = s.value("injection_layer", c.injection_layer);
    c.positions = s.value("positions", c.positions);
  }
  if (j.contains("ci")) {
    c.ci_resamples = j.at("ci").value("resamples", c.ci_resamples);
    c.ci_seed = j.at("ci").value("seed", c.ci_seed);
  }
  if (j.contains("max_cells") && !j.at("max_cells").is_null()) c.max_cells = j.at("max_cells").get<std::size_t>();
}

json RunConfig::snapshot(const TabooVocabulary& vocab) const {
  json j = *this;
  j.erase("out");
  j.erase("jobs");
  j.erase("max_cells");
  j["words"] = vocab.words();
  json labels = json::array();
  for (const auto& m : resolve_methods(*this)) labels.push_back(m.label());
  j["methods"] = std::move(labels);
  return j;
}

RunConfig load_run_config(const std::string& path) {
  try {
    RunConfig c = json::parse(read_file(path)).get<RunConfig>();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "bad run config '" + path + "': " + e.what());
  }
}

Backend open_backend(const std::string& selector) {
  Backend b;
  if (selector.starts_with("synthetic:")) {
    auto spec = load_synthetic_spec(selector.substr(10));
    b.vocab = spec.vocab;
    b.model = std::make_unique<SyntheticOracle>(std::move(spec));
  } else if (selector.starts_with("remote:")) {
    b.model = std::make_unique<wire::RemoteModel>(selector.substr(7));
  } else {
    throw Error(ErrorCode::kInvalidArgument, "backend must be synthetic:PRESET or remote:URL, got '" + selector + "'");
  }
  return b;
}

std::vector<MethodConfig> resolve_methods(const RunConfig& config) {
  if (config.methods.empty()) return default_method_grid();
  std::vector<MethodConfig> out;
  for (const auto& label : config.methods) out.push_back(MethodConfig::parse(label));
  return out;
}

std::vector<std::string> seeded_word_order(const std::vector<std::string>& words, std::uint64_t seed) {
  std::vector<std::string> order = words;
  Rng rng(derive_seed(seed, "controlled-n"));
  shuffle(order, rng);
  return order;
}

TabooVocabulary resolve_vocab(const RunConfig& config, const Backend& backend) {
  TabooVocabulary vocab;
  if (!config.words.empty()) {
    vocab = TabooVocabulary(config.words);
  } else {
    require(backend.vocab.has_value(), ErrorCode::kInvalidArgument,
            "remote backends need the word list in the run config");
    vocab = *backend.vocab;
  }
  if (config.n_words) {
    require(static_cast<std::size_t>(*config.n_words) <= vocab.size(), ErrorCode::kInvalidArgument,
            "n_words exceeds the vocabulary size");
    auto order = seeded_word_order(vocab.words(), config.seed);
    order.resize(static_cast<std::size_t>(*config.n_words));
    vocab = vocab.restricted_to(order);
  }
  return vocab;
}

std::vector<SampleKey> sample_keys(const TabooVocabulary& vocab, const RunConfig& config) {
  std::vector<SampleKey> keys;
  for (const auto& w : vocab.words()) {
    for (int c = 0; c < config.contexts; ++c) {
      for (int v = 0; v < config.verbalizers; ++v) keys.push_back({w, c, v});
    }
  }
  return keys;
}

ChatContext make_context(const RunConfig& config, const SampleKey& key) {
  ChatContext ctx;
  const std::string text = config.verbalizer_prompts.empty()
                               ? std::string(kDefaultVerbalizer)
                               : config.verbalizer_prompts[static_cast<std::size_t>(key.verbalizer_id)];
  ctx.turns.push_back({Role::kUser, text});
  SteeringSpec s;
  s.activation_ref = item_ref(key);
  s.read_layer = config.read_layer;
  s.injection_layer = config.injection_layer;
  s.positions = config.positions;
  ctx.steering = s;
  return ctx;
}

std::uint64_t cell_seed(std::uint64_t global_seed, const SampleKey& key, const MethodConfig& method) {
  return derive_seed(global_seed, item_ref(key) + "|" + method.label());
}

json method_params(const MethodConfig& m) {
  json p = json::object();
  if (m.temperature) p["temperature"] = *m.temperature;
  if (m.k) p["k"] = *m.k;
  if (m.variant != Variant::kNone) p["variant"] = to_string(m.variant);
  if (!m.grid.empty()) p["grid"] = m.grid;
  p["answer_max_tokens"] = m.answer_max_tokens;
  if (m.method == MethodId::kDirectNumeric) p["numeric_max_tokens"] = m.numeric_max_tokens;
  if (m.method == MethodId::kMcmcAccept || m.method == MethodId::kMcmcAgree) {
    p["blocks"] = m.blocks;
    p["block_len"] = m.block_len;
    p["steps_per_block"] = m.steps_per_block;
  }
  return p;
}

EvalRecord run_cell(const SteeredModel& model, const TabooVocabulary& vocab, const RunConfig& config,
                    const SampleKey& key, const MethodConfig& method) {
  const auto start = std::chrono::steady_clock::now();
  EvalRecord r;
  r.key = key;
  r.method = method.label();
  r.params = method_params(method);
  r.seed = cell_seed(config.seed, key, method);
  const Prediction p = predict(model, make_context(config, key), vocab, method, r.seed, config.prompts);
  r.answer = p.answer.word;
  r.confidence = p.confidence;
  r.correct = p.answer.word.has_value() && *p.answer.word == key.word;
  r.flags = p.flags.names();
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

RunLedger RunLedger::open(const fs::path& dir, const json& snapshot) {
  fs::create_directories(dir);
  RunLedger ledger;
  ledger.dir_ = dir;
  const fs::path cfg = dir / "config.json";
  if (fs::exists(cfg)) {
    json existing;
    try {
      existing = json::parse(read_file(cfg));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kLedgerCorrupt, "unreadable config snapshot: " + std::string(e.what()));
    }
    require(existing == snapshot, ErrorCode::kInvalidArgument,
            "run directory " + dir.string() + " holds a different config");
  } else {
    write_file_atomic(cfg, snapshot.dump(2) + "\n");
  }
  ledger.snapshot_ = snapshot;
  ledger.load();
  return ledger;
}

RunLedger RunLedger::reopen(const fs::path& dir) {
  const fs::path cfg = dir / "config.json";
  require(fs::exists(cfg), ErrorCode::kInvalidArgument, "no run in " + dir.string());
  json snapshot;
  try {
    snapshot = json::parse(read_file(cfg));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kLedgerCorrupt, "unreadable config snapshot: " + std::string(e.what()));
  }
  RunLedger ledger;
  ledger.dir_ = dir;
  ledger.snapshot_ = std::move(snapshot);
  ledger.load();
  return ledger;
}

void RunLedger::load() {
  const fs::path data = dir_ / "records.jsonl";
  const fs::path idx = dir_ / "index.json";
  std::uintmax_t bytes = 0;
  std::size_t count = 0;
  if (fs::exists(idx)) {
    try {
      const json j = json::parse(read_file(idx));
      bytes = j.at("records_bytes").get<std::uintmax_t>();
      count = j.at("count").get<std::size_t>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kLedgerCorrupt, "unreadable completion index: " + std::string(e.what()));
    }
  }
  const std::uintmax_t size = fs::exists(data) ? fs::file_size(data) : 0;
  require(size >= bytes, ErrorCode::kLedgerCorrupt,
          fmt::format("records file has {} bytes but the index commits {}", size, bytes));
  if (size > bytes) fs::resize_file(data, bytes);  // drop an interrupted append

  records_.clear();
  index_.clear();
  if (bytes > 0) {
    std::istringstream in(read_file(data));
    std::string line;
    while (std::getline(in, line)) {
      EvalRecord r;
      try {
        r = json::parse(line).get<EvalRecord>();
      } catch (const json::exception& e) {
        throw Error(ErrorCode::kLedgerCorrupt, "bad ledger line " + std::to_string(records_.size() + 1) + ": " + e.what());
      }
      const bool fresh = index_.emplace(std::make_pair(r.key, r.method), records_.size()).second;
      require(fresh, ErrorCode::kLedgerCorrupt, "duplicate ledger entry for " + item_ref(r.key) + " " + r.method);
      records_.push_back(std::move(r));
    }
  }
  require(records_.size() == count, ErrorCode::kLedgerCorrupt,
          fmt::format("index commits {} records but {} were read", count, records_.size()));
  committed_bytes_ = bytes;
}

bool RunLedger::contains(const SampleKey& key, const std::string& method) const {
  return index_.count({key, method}) > 0;
}

void RunLedger::append(const std::vector<EvalRecord>& batch) {
  if (batch.empty()) return;
  std::string text;
  for (const auto& r : batch) {
    require(!contains(r.key, r.method), ErrorCode::kLedgerCorrupt,
            "duplicate ledger entry for " + item_ref(r.key) + " " + r.method);
    text += json(r).dump();
    text += '\n';
  }
  const fs::path data = dir_ / "records.jsonl";
  {
    std::ofstream out(data, std::ios::binary | std::ios::app);
    require(out.good(), ErrorCode::kInvalidArgument, "cannot append to " + data.string());
    out << text;
    out.flush();
    require(out.good(), ErrorCode::kInvalidArgument, "short write to " + data.string());
  }
  for (const auto& r : batch) {
    index_.emplace(std::make_pair(r.key, r.method), records_.size());
    records_.push_back(r);
  }
  committed_bytes_ += text.size();
  write_file_atomic(dir_ / "index.json",
                    json{{"records_bytes", committed_bytes_}, {"count", records_.size()}}.dump() + "\n");
}

void RunLedger::record_failure(const SampleKey& key, const std::string& method, const std::string& message) {
  std::ofstream out(dir_ / "failed.jsonl", std::ios::binary | std::ios::app);
  out << json{{"word", key.word},
              {"context_id", key.context_id},
              {"verbalizer_id", key.verbalizer_id},
              {"method", method},
              {"error", message}}
             .dump()
      << '\n';
}

std::string canonical_ledger_text(std::vector<EvalRecord> records) {
  canonical_sort(records);
  std::string out;
  for (auto& r : records) {
    r.wall_ms = 0.0;
    out += json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<EvalRecord> load_records(const fs::path& dir) { return RunLedger::reopen(dir).records(); }

RunSummary run(const RunConfig& config, const SteeredModel& model, const TabooVocabulary& vocab, RunLedger& ledger) {
  const auto methods = resolve_methods(config);
  const auto keys = sample_keys(vocab, config);

  struct Cell {
    const SampleKey* key;
    const MethodConfig* method;
  };
  RunSummary summary;
  std::vector<Cell> pending;
  for (const auto& k : keys) {
    for (const auto& m : methods) {
      ++summary.total;
      if (ledger.contains(k, m.label())) {
        ++summary.already_done;
      } else {
        pending.push_back({&k, &m});
      }
    }
  }
  if (config.max_cells && pending.size() > *config.max_cells) pending.resize(*config.max_cells);

  const int jobs = model.concurrency() == Concurrency::kSingleFlight ? 1 : config.jobs;
  for (std::size_t begin = 0; begin < pending.size(); begin += kChunk) {
    const std::size_t end = std::min(pending.size(), begin + kChunk);
    std::vector<std::optional<EvalRecord>> results(end - begin);
    std::vector<std::string> errors(end - begin);
    std::atomic<std::size_t> next{begin};
    const auto worker = [&] {
      for (std::size_t i = next++; i < end; i = next++) {
        try {
          results[i - begin] = run_cell(model, vocab, config, *pending[i].key, *pending[i].method);
        } catch (const std::exception& e) {
          errors[i - begin] = e.what();
        }
      }
    };
    if (jobs <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    }
    std::vector<EvalRecord> batch;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (results[i]) {
        batch.push_back(std::move(*results[i]));
      } else {
        ledger.record_failure(*pending[begin + i].key, pending[begin + i].method->label(), errors[i]);
        ++summary.failed;
      }
    }
    summary.executed += batch.size();
    ledger.append(batch);
  }
  return summary;
}

ScorecardReport scorecard_report(std::vector<EvalRecord> records, std::span<const std::string> method_order,
                                 std::span<const std::string> expected_words) {
  require(!records.empty(), ErrorCode::kEmptyInput, "scorecard of an empty ledger");
  canonical_sort(records);
  ScorecardReport report;
  report.card = scorecard(records, method_order);
  report.ranks = rank_summary(report.card);
  std::map<std::string, std::vector<EvalRecord>> groups;
  for (const auto& r : records) groups[r.method].push_back(r);
  for (const auto& [method, rs] : groups) {
    const auto xs = outcomes_of(rs);
    report.reliability[method] = reliability_bins(xs);
    report.per_word[method] = per_word_breakdown(rs, expected_words);
    try {
      report.split[method] = confidence_split(xs);
    } catch (const Error&) {
      report.split[method] = std::nullopt;
    }
  }
  return report;
}

json ScorecardReport::to_json() const {
  json rel = json::object(), words = json::object(), splits = json::object();
  for (const auto& [m, b] : reliability) rel[m] = oracle_uq::to_json(b);
  for (const auto& [m, t] : per_word) words[m] = oracle_uq::to_json(t);
  for (const auto& [m, s] : split) {
    splits[m] = s ? json{{"mean_correct", s->mean_correct}, {"mean_wrong", s->mean_wrong}, {"delta", s->delta}}
                  : json(nullptr);
  }
  return {{"scorecard", oracle_uq::to_json(card)},
          {"rank_summary", oracle_uq::to_json(ranks)},
          {"reliability", std::move(rel)},
          {"per_word", std::move(words)},
          {"confidence_split", std::move(splits)}};
}

std::string ScorecardReport::to_text() const {
  std::string out = "Scorecard\n" + format_scorecard(card) + "\nRank summary\n" + format_rank_summary(ranks);
  out += "\nConfidence split (mean correct, mean wrong, delta)\n";
  for (const auto& row : card.rows) {
    const auto& s = split.at(row.method);
    out += s ? fmt::format("{:<32} {:.3f}  {:.3f}  {:+.3f}\n", row.method, s->mean_correct, s->mean_wrong, s->delta)
             : fmt::format("{:<32} single class\n", row.method);
  }
  const std::string focus = per_word.count("bootstrap:T=1.0") ? "bootstrap:T=1.0" : card.rows.front().method;
  out += "\nPer-word accuracy (" + focus + ")\n" + format_per_word(per_word.at(focus));
  return out;
}

TemperatureTuning tune_bootstrap_temperature(std::span<const EvalRecord> records,
                                             const std::vector<std::string>& holdout_words) {
  require(!holdout_words.empty(), ErrorCode::kEmptyInput, "holdout word set is empty");
  const auto groups = bootstrap_groups(records);
  require(!groups.empty(), ErrorCode::kMissingGrid, "ledger holds no bootstrap temperatures");
  TemperatureTuning out;
  std::optional<double> best_gap;
  for (const auto& [t, rs] : groups) {
    std::vector<Outcome> xs;
    for (const auto* r : rs) {
      if (std::find(holdout_words.begin(), holdout_words.end(), r->key.word) != holdout_words.end()) {
        xs.push_back({r->confidence, r->correct});
      }
    }
    if (xs.empty()) continue;
    double mean_conf = 0.0;
    for (const auto& x : xs) mean_conf += x.confidence;
    mean_conf /= static_cast<double>(xs.size());
    const double gap = std::abs(mean_conf - accuracy(xs));
    out.gap[t] = gap;
    if (!best_gap || gap < *best_gap) {
      best_gap = gap;
      out.best = t;
    }
  }
  require(best_gap.has_value(), ErrorCode::kEmptyInput, "no bootstrap records on the holdout words");
  return out;
}

double ece_argmin_temperature(std::span<const EvalRecord> records) {
  const auto groups = bootstrap_groups(records);
  require(!groups.empty(), ErrorCode::kMissingGrid, "ledger holds no bootstrap temperatures");
  std::optional<double> best_ece;
  double best = 0.0;
  for (const auto& [t, rs] : groups) {
    std::vector<Outcome> xs;
    for (const auto* r : rs) xs.push_back({r->confidence, r->correct});
    const double e = ece(xs);
    if (!best_ece || e < *best_ece) {
      best_ece = e;
      best = t;
    }
  }
  return best;
}

std::vector<CalibrationRow> calibrate_report(std::span<const EvalRecord> records, const std::vector<SplitSpec>& splits,
                                             std::span<const CalibratorKind> kinds,
                                             std::span<const std::string> method_order) {
  std::vector<EvalRecord> sorted(records.begin(), records.end());
  canonical_sort(sorted);
  std::map<std::string, std::vector<EvalRecord>> groups;
  for (const auto& r : sorted) groups[r.method].push_back(r);

  std::vector<CalibrationRow> rows;
  for (const auto& method : ordered_methods(sorted, method_order)) {
    if (!groups.count(method)) continue;
    const auto& rs = groups.at(method);
    for (const auto& spec : splits) {
      CalibrationRow row;
      row.method = method;
      row.split = spec;
      const auto parts = split(rs, spec);
      const auto fit = outcomes_of(parts.fit);
      const auto test = outcomes_of(parts.test);
      row.uncalibrated = ece(test);
      std::size_t pos = 0;
      for (const auto& x : fit) pos += x.correct;
      const bool both = pos > 0 && pos < fit.size();
      for (CalibratorKind kind : kinds) {
        CalibrationCell cell;
        if (both) {
          try {
            const auto cal = fit_calibrator(kind, fit);
            cell.ece = ece(cal.apply(test));
            cell.model = cal.to_json();
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kNonConvergence && e.code() != ErrorCode::kSingleClass) throw;
          }
        }
        if (!cell.ece) row.flagged = true;
        row.cells[kind] = std::move(cell);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

json to_json(const std::vector<CalibrationRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json cells = json::object();
    for (const auto& [kind, cell] : r.cells) {
      cells[std::string(to_string(kind))] = {{"ece", cell.ece ? json(*cell.ece) : json(nullptr)},
                                             {"model", cell.model ? *cell.model : json(nullptr)}};
    }
    out.push_back({{"method", r.method},
                   {"split", to_string(r.split.kind)},
                   {"seed", r.split.seed},
                   {"uncalibrated", r.uncalibrated},
                   {"calibrated", std::move(cells)},
                   {"flagged", r.flagged}});
  }
  return out;
}

std::string format_calibration(const std::vector<CalibrationRow>& rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.method.size());
  std::string out = fmt::format("{:<{}}  {:<13}  {:>7}", "method", width, "split", "Uncal");
  for (const char* h : {"Temp", "Platt", "Iso", "Beta"}) out += fmt::format("  {:>7}", h);
  out += '\n';
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}  {:<13}  {:>7.3f}", r.method, width, to_string(r.split.kind), r.uncalibrated);
    for (CalibratorKind k : kAllCalibrators) {
      const auto it = r.cells.find(k);
      const bool has = it != r.cells.end() && it->second.ece.has_value();
      out += has ? fmt::format("  {:>7.3f}", *it->second.ece) : fmt::format("  {:>7}", "n/a");
    }
    if (r.flagged) out += "  (flagged)";
    out += '\n';
  }
  return out;
}

std::vector<ControlledNResult> sweep_controlled_n(const RunConfig& config, const SteeredModel& model,
                                                  const TabooVocabulary& vocab, std::vector<int> ns) {
  std::sort(ns.begin(), ns.end());
  const auto order = seeded_word_order(vocab.words(), config.seed);
  std::vector<std::string> labels;
  for (const auto& m : resolve_methods(config)) labels.push_back(m.label());

  std::vector<ControlledNResult> out;
  for (int n : ns) {
    require(n >= 1 && static_cast<std::size_t>(n) <= vocab.size(), ErrorCode::kInvalidArgument,
            fmt::format("controlled N = {} exceeds the vocabulary of {}", n, vocab.size()));
    std::vector<std::string> words;
    if (const auto it = config.controlled_n_lists.find(n); it != config.controlled_n_lists.end()) {
      words = it->second;
      require(static_cast<int>(words.size()) == n, ErrorCode::kInvalidArgument,
              fmt::format("explicit word list for N = {} has {} words", n, words.size()));
    } else {
      words.assign(order.begin(), order.begin() + n);
    }
    const TabooVocabulary sub = vocab.restricted_to(words);
    RunConfig sub_config = config;
    sub_config.out = (fs::path(config.out) / fmt::format("n{}", n)).string();
    json snap = sub_config.snapshot(sub);
    snap["controlled_n"] = n;
    RunLedger ledger = RunLedger::open(sub_config.out, snap);
    run(sub_config, model, sub, ledger);
    auto records = ledger.records();
    canonical_sort(records);
    out.push_back({n, sub.words(), scorecard(records, labels)});
  }
  return out;
}

std::string reliability_csv(const ScorecardReport& report) {
  std::string out = "method,bin_lo,bin_hi,count,mean_confidence,accuracy\n";
  for (const auto& row : report.card.rows) {
    for (const auto& b : report.reliability.at(row.method).bins) {
      out += fmt::format("{},{:.1f},{:.1f},{},{},{}\n", row.method, b.lo, b.hi, b.count, b.mean_confidence, b.accuracy);
    }
  }
  return out;
}

std::string rank_heatmap_csv(const ScorecardReport& report) {
  std::string out = "method,accuracy,ece,brier,nll,auroc,mean_rank\n";
  for (const auto& r : report.ranks) {
    out += r.method;
    for (double v : r.ranks) out += fmt::format(",{}", v);
    out += fmt::format(",{}\n", r.mean_rank);
  }
  return out;
}

}  // namespace oracle_uq

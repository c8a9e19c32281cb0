#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "oracle_uq/harness.hpp"
#include "oracle_uq/random.hpp"
#include "support.hpp"

namespace oracle_uq {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using test_support::code_of;
using test_support::item;
using test_support::small_spec;
using test_support::TempDir;

const std::vector<std::string> kWords{"ship", "moon", "gold", "leaf", "snow", "rock"};

SyntheticOracle generated(int contexts = 4, std::uint64_t seed = 3) {
  auto spec = small_spec(kWords, {});
  spec.contexts = contexts;
  spec.seed = seed;
  spec.generator = ItemGenerator{};
  return SyntheticOracle(spec);
}

RunConfig config_for(const fs::path& out, std::vector<std::string> methods, int contexts = 4) {
  RunConfig c;
  c.backend = "synthetic:test";
  c.contexts = contexts;
  c.methods = std::move(methods);
  c.seed = 17;
  c.out = out.string();
  return c;
}

std::vector<EvalRecord> run_into(const RunConfig& c, const SteeredModel& model, const TabooVocabulary& vocab) {
  auto ledger = RunLedger::open(c.out, c.snapshot(vocab));
  run(c, model, vocab, ledger);
  return ledger.records();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

TEST(Config, JsonRoundTripAndValidation) {
  RunConfig c;
  c.backend = "remote:tcp://127.0.0.1:9000";
  c.words = {"moon", "sky"};
  c.contexts = 3;
  c.verbalizers = 2;
  c.methods = {"bootstrap:T=0.5", "logprob:no_offset"};
  c.n_words = 2;
  c.controlled_n = {2};
  c.controlled_n_lists[2] = {"moon", "sky"};
  c.holdout_words = std::vector<std::string>{"sky"};
  c.verbalizer_prompts = {"a?", "b?"};
  c.max_cells = 10;
  c.ci_seed = 4;
  const json j = c;
  const auto back = j.get<RunConfig>();
  EXPECT_EQ(json(back), j);
  EXPECT_NO_THROW(back.validate());

  TempDir tmp;
  spit(tmp.path() / "run.json", j.dump());
  EXPECT_EQ(json(load_run_config((tmp.path() / "run.json").string())), j);
  spit(tmp.path() / "bad.json", "{");
  EXPECT_EQ(code_of([&] { load_run_config((tmp.path() / "bad.json").string()); }), ErrorCode::kInvalidArgument);

  const auto bad = [&](auto mutate) {
    RunConfig x = back;
    mutate(x);
    return code_of([&] { x.validate(); });
  };
  EXPECT_EQ(bad([](RunConfig& x) { x.backend.clear(); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(bad([](RunConfig& x) { x.contexts = 0; }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(bad([](RunConfig& x) { x.jobs = 0; }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(bad([](RunConfig& x) { x.verbalizers = 3; }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { open_backend("local:x"); }), ErrorCode::kInvalidArgument);
}

TEST(Config, SnapshotIgnoresOutputLocation) {
  const TabooVocabulary v(kWords);
  RunConfig a = config_for("/tmp/a", {"bootstrap:T=1.0"});
  RunConfig b = a;
  b.out = "/tmp/b";
  b.jobs = 4;
  b.max_cells = 3;
  EXPECT_EQ(a.snapshot(v), b.snapshot(v));
  b.seed = 18;
  EXPECT_NE(a.snapshot(v), b.snapshot(v));
}

TEST(Run, CellCountsMatchTheGrid) {
  TempDir tmp;
  const auto model = generated(1);
  const TabooVocabulary two({"ship", "moon"});
  RunConfig c = config_for(tmp.path() / "small", {"logprob:with_offset", "bootstrap:T=1.0"}, 1);
  const auto rs = run_into(c, model, two);
  EXPECT_EQ(rs.size(), 4u);
  for (const auto& r : rs) {
    EXPECT_TRUE(r.key.word == "ship" || r.key.word == "moon");
    EXPECT_EQ(r.correct, r.answer == r.key.word);
  }

  auto spec = small_spec(default_synthetic_words(), {});
  spec.contexts = 5;
  spec.generator = ItemGenerator{};
  const SyntheticOracle big(spec);
  RunConfig full = config_for(tmp.path() / "full", {}, 5);
  full.max_cells = 0;
  auto ledger = RunLedger::open(full.out, full.snapshot(spec.vocab));
  const auto summary = run(full, big, spec.vocab, ledger);
  EXPECT_EQ(summary.total, 1600u);
  EXPECT_EQ(summary.executed, 0u);
  EXPECT_EQ(sample_keys(spec.vocab, full).size(), 100u);
  EXPECT_EQ(resolve_methods(full).size(), 16u);
}

TEST(Run, ResumeSkipsCommittedCells) {
  TempDir tmp;
  const auto model = generated();
  const TabooVocabulary v(kWords);
  RunConfig c = config_for(tmp.path() / "r", {"logprob:with_offset", "bootstrap:T=0.7"});
  c.max_cells = 10;
  {
    auto ledger = RunLedger::open(c.out, c.snapshot(v));
    const auto s = run(c, model, v, ledger);
    EXPECT_EQ(s.executed, 10u);
    EXPECT_FALSE(s.complete());
  }
  c.max_cells.reset();
  auto ledger = RunLedger::open(c.out, c.snapshot(v));
  const auto s = run(c, model, v, ledger);
  EXPECT_EQ(s.already_done, 10u);
  EXPECT_EQ(s.executed, 38u);
  EXPECT_TRUE(s.complete());

  TempDir other;
  const auto fresh = run_into(config_for(other.path() / "r", c.methods), model, v);
  EXPECT_EQ(canonical_ledger_text(ledger.records()), canonical_ledger_text(fresh));
}

TEST(Run, JobsDoNotChangeRecords) {
  TempDir tmp;
  const auto model = generated();
  const TabooVocabulary v(kWords);
  const std::vector<std::string> methods{"bootstrap:T=1.0", "steer_sens", "mcmc_accept:T=0.5"};
  RunConfig one = config_for(tmp.path() / "one", methods);
  RunConfig four = config_for(tmp.path() / "four", methods);
  four.jobs = 4;
  EXPECT_EQ(canonical_ledger_text(run_into(one, model, v)), canonical_ledger_text(run_into(four, model, v)));
}

class Ledger : public ::testing::Test {
 protected:
  void SetUp() override {
    config = config_for(tmp.path() / "run", {"logprob:with_offset"});
    const auto model = generated();
    records = run_into(config, model, vocab);
    ASSERT_EQ(records.size(), 24u);
  }
  fs::path data() const { return fs::path(config.out) / "records.jsonl"; }
  fs::path index() const { return fs::path(config.out) / "index.json"; }

  TempDir tmp;
  TabooVocabulary vocab{kWords};
  RunConfig config;
  std::vector<EvalRecord> records;
};

TEST_F(Ledger, ReopenRestoresRecords) {
  const auto again = RunLedger::reopen(config.out);
  EXPECT_EQ(canonical_ledger_text(again.records()), canonical_ledger_text(records));
  EXPECT_EQ(again.snapshot(), config.snapshot(vocab));
}

TEST_F(Ledger, TornTailIsDropped) {
  const auto committed = fs::file_size(data());
  spit(data(), slurp(data()) + R"({"word":"ship","context_id":)");
  const auto again = RunLedger::reopen(config.out);
  EXPECT_EQ(again.records().size(), 24u);
  EXPECT_EQ(fs::file_size(data()), committed);
}

TEST_F(Ledger, ShortRecordsFileIsCorrupt) {
  fs::resize_file(data(), fs::file_size(data()) - 5);
  EXPECT_EQ(code_of([&] { RunLedger::reopen(config.out); }), ErrorCode::kLedgerCorrupt);
}

TEST_F(Ledger, DuplicateEntryIsCorrupt) {
  const std::string text = slurp(data());
  const std::string first = text.substr(0, text.find('\n') + 1);
  spit(data(), text + first);
  spit(index(), json{{"records_bytes", text.size() + first.size()}, {"count", 25}}.dump());
  EXPECT_EQ(code_of([&] { RunLedger::reopen(config.out); }), ErrorCode::kLedgerCorrupt);
}

TEST_F(Ledger, CountMismatchIsCorrupt) {
  spit(index(), json{{"records_bytes", fs::file_size(data())}, {"count", 23}}.dump());
  EXPECT_EQ(code_of([&] { RunLedger::reopen(config.out); }), ErrorCode::kLedgerCorrupt);
  spit(index(), "not json");
  EXPECT_EQ(code_of([&] { RunLedger::reopen(config.out); }), ErrorCode::kLedgerCorrupt);
}

TEST_F(Ledger, MismatchedSnapshotIsRefused) {
  RunConfig changed = config;
  changed.seed += 1;
  EXPECT_EQ(code_of([&] { RunLedger::open(changed.out, changed.snapshot(vocab)); }), ErrorCode::kInvalidArgument);
  auto ledger = RunLedger::reopen(config.out);
  EXPECT_EQ(code_of([&] { ledger.append({records.front()}); }), ErrorCode::kLedgerCorrupt);
}

TEST(ControlledN, NestedSubsetsAndCounts) {
  TempDir tmp;
  const auto model = generated();
  const TabooVocabulary v(kWords);
  RunConfig c = config_for(tmp.path() / "cn", {"bootstrap:T=1.0"});
  const auto results = sweep_controlled_n(c, model, v, {5, 2, 6});
  ASSERT_EQ(results.size(), 3u);
  EXPECT_EQ(results[0].n, 2);
  EXPECT_EQ(results[2].n, 6);
  for (std::size_t i = 0; i + 1 < results.size(); ++i) {
    for (const auto& w : results[i].words) {
      EXPECT_NE(std::find(results[i + 1].words.begin(), results[i + 1].words.end(), w), results[i + 1].words.end());
    }
  }
  for (const auto& r : results) {
    EXPECT_EQ(r.words.size(), static_cast<std::size_t>(r.n));
    EXPECT_EQ(r.card.rows.at(0).metrics.n, static_cast<std::size_t>(r.n * 4));
    const auto rs = load_records(fs::path(c.out) / ("n" + std::to_string(r.n)));
    for (const auto& rec : rs) {
      if (rec.answer) {
        EXPECT_NE(std::find(r.words.begin(), r.words.end(), *rec.answer), r.words.end());
      }
    }
  }
  const auto order = seeded_word_order(kWords, c.seed);
  EXPECT_EQ(TabooVocabulary(kWords).restricted_to({order[0], order[1]}).words(), results[0].words);

  EXPECT_EQ(code_of([&] { sweep_controlled_n(c, model, v, {7}); }), ErrorCode::kInvalidArgument);
}

TEST(ControlledN, FullVocabularyMatchesUnrestrictedRun) {
  TempDir tmp;
  const auto model = generated();
  const TabooVocabulary v(kWords);
  RunConfig c = config_for(tmp.path() / "cn", {"bootstrap:T=1.0", "logprob:with_offset"});
  sweep_controlled_n(c, model, v, {6});
  const auto swept = load_records(fs::path(c.out) / "n6");
  const auto plain = run_into(config_for(tmp.path() / "plain", c.methods), model, v);
  EXPECT_EQ(canonical_ledger_text(swept), canonical_ledger_text(plain));
}

TEST(ControlledN, ExplicitListsAreUsed) {
  TempDir tmp;
  const auto model = generated();
  const TabooVocabulary v(kWords);
  RunConfig c = config_for(tmp.path() / "cn", {"logprob:with_offset"});
  c.controlled_n_lists[2] = {"rock", "ship"};
  EXPECT_EQ(sweep_controlled_n(c, model, v, {2}).at(0).words, (std::vector<std::string>{"ship", "rock"}));
  c.controlled_n_lists[2] = {"rock"};
  c.out = (tmp.path() / "cn2").string();
  EXPECT_EQ(code_of([&] { sweep_controlled_n(c, model, v, {2}); }), ErrorCode::kInvalidArgument);
}

TEST(TuneT, SingleTemperatureReturnsItself) {
  TempDir tmp;
  const auto model = generated();
  const TabooVocabulary v(kWords);
  const auto rs = run_into(config_for(tmp.path() / "t", {"bootstrap:T=0.7", "logprob:with_offset"}), model, v);
  EXPECT_EQ(tune_bootstrap_temperature(rs, {"ship", "moon"}).best, 0.7);
  EXPECT_EQ(ece_argmin_temperature(rs), 0.7);
}

TEST(TuneT, AlwaysWrongFavoursTheHottest) {
  std::vector<SyntheticItem> items;
  for (int c = 0; c < 5; ++c) {
    items.push_back(item("ship", 0.0, {{"moon", 1.0}, {"gold", 0.8}, {"leaf", 0.6}, {"snow", 0.4}}, std::nullopt, c));
  }
  auto spec = small_spec(kWords, items);
  spec.contexts = 5;
  const SyntheticOracle model(spec);
  TempDir tmp;
  RunConfig c = config_for(tmp.path() / "t", {}, 5);
  for (double t : kBootstrapTemperatures) c.methods.push_back(MethodConfig::bootstrap(t).label());
  std::vector<EvalRecord> rs;
  for (int ctx = 0; ctx < 5; ++ctx) {
    for (const auto& label : c.methods) {
      rs.push_back(run_cell(model, spec.vocab, c, {"ship", ctx, 0}, MethodConfig::parse(label)));
    }
  }
  for (const auto& r : rs) EXPECT_FALSE(r.correct);
  const auto tuned = tune_bootstrap_temperature(rs, {"ship"});
  EXPECT_EQ(tuned.best, 1.5);
  EXPECT_EQ(tuned.gap.size(), 6u);
  EXPECT_EQ(ece_argmin_temperature(rs), 1.5);
}

TEST(TuneT, MissingGridAndHoldout) {
  TempDir tmp;
  const auto model = generated();
  const TabooVocabulary v(kWords);
  const auto rs = run_into(config_for(tmp.path() / "t", {"logprob:with_offset"}), model, v);
  EXPECT_EQ(code_of([&] { tune_bootstrap_temperature(rs, {"ship"}); }), ErrorCode::kMissingGrid);
  EXPECT_EQ(code_of([&] { ece_argmin_temperature(rs); }), ErrorCode::kMissingGrid);
  EXPECT_EQ(code_of([&] { tune_bootstrap_temperature(rs, {}); }), ErrorCode::kEmptyInput);
}

std::vector<EvalRecord> drawn_records(std::uint64_t seed, int words, int per_word,
                                      const std::function<std::pair<double, double>(int, double)>& conf_and_p) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EvalRecord> rs;
  for (int w = 0; w < words; ++w) {
    for (int i = 0; i < per_word; ++i) {
      const auto [conf, p] = conf_and_p(w, u(rng));
      EvalRecord r;
      r.key = {"w" + std::to_string(w), i, 0};
      r.method = "m";
      r.confidence = conf;
      r.correct = u(rng) < p;
      rs.push_back(r);
    }
  }
  return rs;
}

TEST(Calibrate, CalibratedInputStaysCalibrated) {
  const auto rs = drawn_records(1, 20, 100, [](int, double x) { return std::make_pair(x, x); });
  const auto rows = calibrate_report(rs, {SplitSpec::word_disjoint(), SplitSpec::random_half()});
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    EXPECT_LT(row.uncalibrated, 0.05);
    EXPECT_FALSE(row.flagged);
    for (const auto& [kind, cell] : row.cells) EXPECT_LT(*cell.ece, 0.06) << to_string(kind);
  }
}

TEST(Calibrate, AntiCalibratedIsRepaired) {
  const auto rs = drawn_records(2, 20, 100, [](int, double x) {
    return std::make_pair(x < 0.5 ? 0.95 : 0.05, x < 0.5 ? 0.02 : 0.98);
  });
  const auto rows = calibrate_report(rs, {SplitSpec::word_disjoint()});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_GT(rows[0].uncalibrated, 0.5);
  EXPECT_LT(*rows[0].cells.at(CalibratorKind::kPlatt).ece, 0.05);
  const json j = to_json(rows);
  EXPECT_EQ(j[0]["split"], "word_disjoint");
  EXPECT_TRUE(j[0]["calibrated"]["platt"]["model"].is_object());
  EXPECT_NE(format_calibration(rows).find("Platt"), std::string::npos);
}

TEST(Calibrate, SingleClassFitIsFlagged) {
  const auto rs = drawn_records(3, 4, 10, [](int, double x) { return std::make_pair(x, 1.0); });
  const auto rows = calibrate_report(rs, {SplitSpec::word_disjoint()});
  EXPECT_TRUE(rows.at(0).flagged);
  EXPECT_FALSE(rows.at(0).cells.at(CalibratorKind::kIsotonic).ece.has_value());
  EXPECT_NE(format_calibration(rows).find("n/a"), std::string::npos);
}

TEST(Calibrate, WordDisjointIsNoEasierOnHeterogeneousWords) {
  double wd = 0, rh = 0;
  const std::vector<CalibratorKind> iso{CalibratorKind::kIsotonic};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto rs = drawn_records(seed, 10, 200, [](int w, double) { return std::make_pair(0.5, 0.05 + 0.1 * w); });
    wd += *calibrate_report(rs, {SplitSpec::word_disjoint(seed)}, iso).at(0).cells.at(CalibratorKind::kIsotonic).ece;
    rh += *calibrate_report(rs, {SplitSpec::random_half(seed)}, iso).at(0).cells.at(CalibratorKind::kIsotonic).ece;
  }
  EXPECT_GE(wd, rh);
  EXPECT_GT(wd / 10, 0.05);
}

TEST(Scorecard, ReplayIsBitForBit) {
  TempDir tmp;
  const auto model = generated();
  const TabooVocabulary v(kWords);
  const std::vector<std::string> methods{"bootstrap:T=1.0", "logprob:with_offset", "p_true"};
  auto rs = run_into(config_for(tmp.path() / "s", methods), model, v);
  const auto a = scorecard_report(rs, methods, kWords);
  std::mt19937_64 rng(1);
  std::shuffle(rs.begin(), rs.end(), rng);
  const auto b = scorecard_report(load_records(tmp.path() / "s"), methods, kWords);
  const auto c = scorecard_report(rs, methods, kWords);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(a.to_json().dump(), c.to_json().dump());
  EXPECT_EQ(a.to_text(), c.to_text());
  EXPECT_EQ(reliability_csv(a), reliability_csv(c));
  EXPECT_EQ(rank_heatmap_csv(a), rank_heatmap_csv(c));
  ASSERT_EQ(a.card.rows.size(), 3u);
  for (std::size_t i = 0; i < methods.size(); ++i) {
    EXPECT_EQ(a.card.rows[i].method, methods[i]);
    EXPECT_EQ(a.card.rows[i].metrics.n, 24u);
  }
}

TEST(Scorecard, SingleSampleAccuracyTracksGroundTruth) {
  TempDir tmp;
  const auto model = generated(60, 9);
  const TabooVocabulary v(kWords);
  const std::string label = MethodConfig::bootstrap(1.0, 1).label();
  const auto rs = run_into(config_for(tmp.path() / "s", {label}, 60), model, v);
  ASSERT_EQ(rs.size(), 360u);
  double expected = 0, variance = 0;
  for (const auto& r : rs) {
    const double p = model.ground_truth(r.key).correctness_prob;
    expected += p;
    variance += p * (1 - p);
  }
  const auto report = scorecard_report(rs);
  const double hits = report.card.rows.at(0).metrics.accuracy * 360.0;
  EXPECT_NEAR(hits, expected, 3 * std::sqrt(variance));
}

TEST(Scorecard, EmptyLedgerIsAnError) {
  EXPECT_EQ(code_of([] { scorecard_report({}); }), ErrorCode::kEmptyInput);
}

}  // namespace
}  // namespace oracle_uq

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "oracle_uq/error.hpp"
#include "oracle_uq/harness.hpp"
#include "oracle_uq/resampling.hpp"
#include "oracle_uq/synthetic.hpp"
#include "oracle_uq/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oracle_uq;

namespace {

struct CommonFlags {
  std::string config;
  std::string backend;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string methods;
  std::optional<int> n_words;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool run_flags) {
  cmd->add_option("--config", f.config, "run config JSON");
  cmd->add_option("--out", f.out, "run directory (ORACLE_UQ_OUT overrides)");
  if (!run_flags) return;
  cmd->add_option("--backend", f.backend, "synthetic:PRESET or remote:URL");
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--jobs", f.jobs, "parallel cells");
  cmd->add_option("--methods", f.methods, "comma-separated method labels");
  cmd->add_option("--n-words", f.n_words, "seeded vocabulary subset size");
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Method labels contain commas inside their parameter lists ("bootstrap:T=1.0,k=5"),
// so a new label starts only at a known method name.
std::vector<std::string> split_methods(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : split_list(s)) {
    const bool param = !out.empty() && part.find(':') == std::string::npos &&
                       part.find('=') != std::string::npos;
    if (param) {
      out.back() += "," + part;
    } else {
      out.push_back(part);
    }
  }
  return out;
}

std::string resolve_out(const CommonFlags& f, const std::string& fallback) {
  if (const char* env = std::getenv("ORACLE_UQ_OUT"); env && *env) return env;
  if (!f.out.empty()) return f.out;
  return fallback;
}

RunConfig build_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.backend.empty()) c.backend = f.backend;
  if (f.seed) c.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  if (!f.methods.empty()) c.methods = split_methods(f.methods);
  if (f.n_words) c.n_words = *f.n_words;
  c.out = resolve_out(f, c.out);
  c.validate();
  return c;
}

std::string run_dir(const CommonFlags& f) {
  std::string fallback = "runs/default";
  if (!f.config.empty()) fallback = load_run_config(f.config).out;
  return resolve_out(f, fallback);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + p.string());
  out << text;
}

std::vector<std::string> snapshot_list(const RunLedger& ledger, const char* key) {
  const auto& s = ledger.snapshot();
  return s.contains(key) ? s.at(key).get<std::vector<std::string>>() : std::vector<std::string>{};
}

ScorecardReport report_for(const RunLedger& ledger) {
  const auto methods = snapshot_list(ledger, "methods");
  const auto words = snapshot_list(ledger, "words");
  return scorecard_report(ledger.records(), methods, words);
}

void print_summary(const RunSummary& s) {
  fmt::print("cells: {} total, {} already done, {} executed, {} failed\n", s.total, s.already_done, s.executed,
             s.failed);
}

int finish_run(const RunSummary& summary, const RunLedger& ledger) {
  print_summary(summary);
  if (!summary.complete()) {
    fmt::print("run incomplete; rerun resume to retry failed or remaining cells\n");
    return summary.failed > 0 ? 3 : 0;
  }
  const auto report = report_for(ledger);
  write_text(ledger.dir() / "scorecard.json", report.to_json().dump(2) + "\n");
  write_text(ledger.dir() / "scorecard.txt", report.to_text());
  fmt::print("{}", format_scorecard(report.card));
  return 0;
}

int cmd_run(const CommonFlags& f) {
  const RunConfig config = build_config(f);
  Backend backend = open_backend(config.backend);
  const TabooVocabulary vocab = resolve_vocab(config, backend);
  RunLedger ledger = RunLedger::open(config.out, config.snapshot(vocab));
  return finish_run(run(config, *backend.model, vocab, ledger), ledger);
}

int cmd_resume(const CommonFlags& f) {
  RunLedger ledger = RunLedger::reopen(run_dir(f));
  RunConfig config = ledger.snapshot().get<RunConfig>();
  config.out = ledger.dir().string();
  if (f.jobs) config.jobs = *f.jobs;
  Backend backend = open_backend(config.backend);
  const TabooVocabulary vocab(snapshot_list(ledger, "words"));
  return finish_run(run(config, *backend.model, vocab, ledger), ledger);
}

int cmd_scorecard(const CommonFlags& f, bool as_json) {
  const RunLedger ledger = RunLedger::reopen(run_dir(f));
  const auto report = report_for(ledger);
  write_text(ledger.dir() / "scorecard.json", report.to_json().dump(2) + "\n");
  write_text(ledger.dir() / "scorecard.txt", report.to_text());
  fmt::print("{}", as_json ? report.to_json().dump(2) + "\n" : report.to_text());
  return 0;
}

int cmd_ci(const CommonFlags& f, std::optional<int> resamples, std::optional<std::uint64_t> seed, double level) {
  const RunLedger ledger = RunLedger::reopen(run_dir(f));
  const RunConfig config = ledger.snapshot().get<RunConfig>();
  auto report = report_for(ledger);
  attach_cis(report.card, ledger.records(), resamples.value_or(config.ci_resamples), seed.value_or(config.ci_seed),
             level);
  write_text(ledger.dir() / "scorecard_ci.json", to_json(report.card).dump(2) + "\n");
  fmt::print("{}", format_scorecard(report.card));
  return 0;
}

int cmd_calibrate(const CommonFlags& f, std::optional<std::uint64_t> wd_seed, std::optional<std::uint64_t> rh_seed) {
  const RunLedger ledger = RunLedger::reopen(run_dir(f));
  SplitSpec wd{SplitKind::kWordDisjoint, 1};
  SplitSpec rh{SplitKind::kRandomHalf, 2};
  if (wd_seed) wd.seed = *wd_seed;
  if (rh_seed) rh.seed = *rh_seed;
  const auto methods = snapshot_list(ledger, "methods");
  const auto rows = calibrate_report(ledger.records(), {wd, rh}, kAllCalibrators, methods);
  write_text(ledger.dir() / "calibration.json", to_json(rows).dump(2) + "\n");
  fmt::print("{}", format_calibration(rows));
  return 0;
}

int cmd_sweep(const CommonFlags& f, const std::string& ns_text) {
  RunConfig config = build_config(f);
  std::vector<int> ns = config.controlled_n;
  if (!ns_text.empty()) {
    ns.clear();
    for (const auto& s : split_list(ns_text)) ns.push_back(std::stoi(s));
  }
  Backend backend = open_backend(config.backend);
  const TabooVocabulary vocab = resolve_vocab(config, backend);
  json out = json::array();
  for (const auto& r : sweep_controlled_n(config, *backend.model, vocab, ns)) {
    fmt::print("N = {} ({})\n{}\n", r.n, fmt::join(r.words, ", "), format_scorecard(r.card));
    out.push_back({{"n", r.n}, {"words", r.words}, {"scorecard", to_json(r.card)}});
  }
  fs::create_directories(config.out);
  write_text(fs::path(config.out) / "controlled_n.json", out.dump(2) + "\n");
  return 0;
}

int cmd_tune(const CommonFlags& f, const std::string& holdout_text) {
  const RunLedger ledger = RunLedger::reopen(run_dir(f));
  const RunConfig config = ledger.snapshot().get<RunConfig>();
  std::vector<std::string> holdout;
  if (!holdout_text.empty()) {
    holdout = split_list(holdout_text);
  } else if (config.holdout_words) {
    holdout = *config.holdout_words;
  } else {
    holdout = word_disjoint_fit_words(snapshot_list(ledger, "words"), 1);
  }
  const auto tuning = tune_bootstrap_temperature(ledger.records(), holdout);
  fmt::print("holdout words: {}\n", fmt::join(holdout, ", "));
  for (const auto& [t, gap] : tuning.gap) fmt::print("T={:<5} |mode frequency - accuracy| = {:.4f}\n", t, gap);
  fmt::print("T* = {}\n", tuning.best);
  fmt::print("ECE-argmin T over all records = {}\n", ece_argmin_temperature(ledger.records()));
  return 0;
}

int cmd_reliability(const CommonFlags& f, const std::string& method) {
  const RunLedger ledger = RunLedger::reopen(run_dir(f));
  const auto report = report_for(ledger);
  for (const auto& row : report.card.rows) {
    if (!method.empty() && row.method != method) continue;
    fmt::print("{}\n{}\n", row.method, format_reliability(report.reliability.at(row.method)));
  }
  return 0;
}

int cmd_export(const CommonFlags& f) {
  const RunLedger ledger = RunLedger::reopen(run_dir(f));
  const auto report = report_for(ledger);
  write_text(ledger.dir() / "reliability.csv", reliability_csv(report));
  write_text(ledger.dir() / "rank_heatmap.csv", rank_heatmap_csv(report));
  write_text(ledger.dir() / "scorecard.json", report.to_json().dump(2) + "\n");
  fmt::print("wrote {}, {}, {}\n", (ledger.dir() / "reliability.csv").string(),
             (ledger.dir() / "rank_heatmap.csv").string(), (ledger.dir() / "scorecard.json").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty benchmark for activation oracles"};
  app.require_subcommand(1);

  CommonFlags f;
  std::optional<int> resamples;
  std::optional<std::uint64_t> ci_seed, wd_seed, rh_seed;
  double level = 0.95;
  std::string ns_text, holdout_text, method_filter;
  bool as_json = false;

  auto* run_cmd = app.add_subcommand("run", "execute every missing (sample, method) cell");
  add_common(run_cmd, f, true);
  auto* resume_cmd = app.add_subcommand("resume", "continue the run stored in --out");
  add_common(resume_cmd, f, false);
  resume_cmd->add_option("--jobs", f.jobs, "parallel cells");
  auto* score_cmd = app.add_subcommand("scorecard", "metrics tables from a run ledger");
  add_common(score_cmd, f, false);
  score_cmd->add_flag("--json", as_json, "print JSON instead of text");
  auto* cal_cmd = app.add_subcommand("calibrate", "post-hoc calibrator table");
  add_common(cal_cmd, f, false);
  cal_cmd->add_option("--word-seed", wd_seed, "word-disjoint split seed (default 1)");
  cal_cmd->add_option("--random-seed", rh_seed, "random-half split seed (default 2)");
  auto* ci_cmd = app.add_subcommand("ci", "scorecard with percentile bootstrap intervals");
  add_common(ci_cmd, f, false);
  ci_cmd->add_option("--resamples", resamples, "bootstrap resamples");
  ci_cmd->add_option("--ci-seed", ci_seed, "resampling seed");
  ci_cmd->add_option("--level", level, "interval level")->check(CLI::Range(0.0, 1.0));
  auto* sweep_cmd = app.add_subcommand("sweep-n", "rerun on nested vocabulary subsets");
  add_common(sweep_cmd, f, true);
  sweep_cmd->add_option("--ns", ns_text, "comma-separated subset sizes");
  auto* tune_cmd = app.add_subcommand("tune-t", "pick the bootstrap temperature on holdout words");
  add_common(tune_cmd, f, false);
  tune_cmd->add_option("--holdout", holdout_text, "comma-separated holdout words");
  auto* rel_cmd = app.add_subcommand("reliability", "reliability bins per method");
  add_common(rel_cmd, f, false);
  rel_cmd->add_option("--method", method_filter, "only this method label");
  auto* export_cmd = app.add_subcommand("export", "write reliability and rank-heatmap CSVs");
  add_common(export_cmd, f, false);

  std::vector<std::string> preset_words;
  std::string preset_out;
  SyntheticSpec preset;
  ItemGenerator gen;
  auto* preset_cmd = app.add_subcommand("make-preset", "write a generated synthetic preset");
  preset_cmd->add_option("--output", preset_out, "preset path")->required();
  preset_cmd->add_option("--words", preset_words, "vocabulary")->delimiter(',');
  preset_cmd->add_option("--contexts", preset.contexts);
  preset_cmd->add_option("--verbalizers", preset.verbalizers);
  preset_cmd->add_option("--seed", preset.seed);
  preset_cmd->add_option("--slots", gen.slots);
  preset_cmd->add_option("--alpha", gen.alpha);
  preset_cmd->add_option("--null-alpha", gen.null_alpha);
  preset_cmd->add_option("--label-temperature", gen.label_temperature);
  preset_cmd->add_option("--kappa", preset.kappa);
  preset_cmd->add_option("--self-report-bias", preset.self_report_bias);

  std::string serve_preset;
  int serve_port = 0, serve_capacity = 1;
  auto* serve_cmd = app.add_subcommand("serve-synthetic", "serve a synthetic preset over the frame protocol");
  serve_cmd->add_option("--preset", serve_preset, "preset path")->required();
  serve_cmd->add_option("--port", serve_port, "TCP port on 127.0.0.1 (0 picks one)");
  serve_cmd->add_option("--capacity", serve_capacity, "advertised concurrent requests");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return cmd_run(f);
    if (*resume_cmd) return cmd_resume(f);
    if (*score_cmd) return cmd_scorecard(f, as_json);
    if (*cal_cmd) return cmd_calibrate(f, wd_seed, rh_seed);
    if (*ci_cmd) return cmd_ci(f, resamples, ci_seed, level);
    if (*sweep_cmd) return cmd_sweep(f, ns_text);
    if (*tune_cmd) return cmd_tune(f, holdout_text);
    if (*rel_cmd) return cmd_reliability(f, method_filter);
    if (*export_cmd) return cmd_export(f);
    if (*preset_cmd) {
      preset.vocab = TabooVocabulary(preset_words.empty() ? default_synthetic_words() : preset_words);
      preset.generator = gen;
      preset.validate();
      write_text(preset_out, json(preset).dump(2) + "\n");
      return 0;
    }
    if (*serve_cmd) {
      SyntheticOracle oracle(load_synthetic_spec(serve_preset));
      wire::FrameServer server(oracle, serve_port, serve_capacity);
      fmt::print("listening on {}\n", server.url());
      std::fflush(stdout);
      server.wait();
      return 0;
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}

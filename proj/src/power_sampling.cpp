#include "oracle_uq/power_sampling.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <ostream>

#include "oracle_uq/error.hpp"
#include "oracle_uq/random.hpp"

namespace oracle_uq {
namespace {

double sum_from(const std::vector<double>& values, std::size_t from) {
  double s = 0.0;
  for (std::size_t i = from; i < values.size(); ++i) s += values[i];
  return s;
}

bool ended(const Generation& seq, TokenId eos) {
  return !seq.tokens.empty() && seq.tokens.back() == eos;
}

Generation truncated(const Generation& seq, std::size_t n) {
  Generation out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(seq.tokens[i], seq.texts[i], seq.logprobs_t1[i]);
  return out;
}

void append(Generation& seq, const Generation& tail) {
  for (std::size_t i = 0; i < tail.tokens.size(); ++i) {
    seq.push_back(tail.tokens[i], tail.texts[i], tail.logprobs_t1[i]);
  }
}

int call_budget(const MHConfig& cfg, std::size_t block_end, std::size_t from) {
  auto n = static_cast<int>(block_end - from);
  if (cfg.max_tokens_per_call > 0) n = std::min(n, cfg.max_tokens_per_call);
  return n;
}

}  // namespace

void MHConfig::validate() const {
  require(blocks >= 1 && block_len >= 1 && steps_per_block >= 1, ErrorCode::kInvalidArgument,
          "MH blocks, block length and steps must be positive");
  require(proposal_temperature > 0.0 && std::isfinite(proposal_temperature),
          ErrorCode::kInvalidArgument, "proposal temperature must be positive");
}

ChainState run_chain(const SteeredModel& model, const ChatContext& ctx, const MHConfig& cfg,
                     const ChainObserver& observer) {
  cfg.validate();
  const double alpha = cfg.alpha();
  const double temp = cfg.proposal_temperature;
  const TokenId eos = model.eos_token();
  Rng rng(cfg.seed);

  ChainState state;
  ScoredContinuation current_scores;
  int step_counter = 0;

  for (int b = 0; b < cfg.blocks; ++b) {
    state.block_index = b;
    const auto block_end = static_cast<std::size_t>((b + 1) * cfg.block_len);

    if (!ended(state.sequence, eos) && state.sequence.tokens.size() < block_end) {
      const auto fill = model.sample(ctx, temp, call_budget(cfg, block_end, state.sequence.tokens.size()),
                                     rng(), state.sequence.tokens);
      append(state.sequence, fill);
    }
    if (state.sequence.tokens.empty()) continue;
    current_scores = model.score_continuation(ctx, state.sequence.tokens, temp);

    for (int s = 0; s < cfg.steps_per_block; ++s) {
      const std::size_t len = state.sequence.tokens.size();
      const auto block_len = static_cast<std::size_t>(cfg.block_len);
      // A chain that ended before this block keeps refining the block that
      // holds its last token.
      const std::size_t block = std::min(static_cast<std::size_t>(b), (len - 1) / block_len);
      const std::size_t end = (block + 1) * block_len;
      const std::size_t lo = cfg.scope == ProposalScope::kCurrentBlock ? block * block_len : 0;
      const std::size_t j = lo + uniform_index(rng, len - lo);
      const std::uint64_t proposal_seed = rng();
      const double u = uniform01(rng);

      Generation candidate = truncated(state.sequence, j);
      const std::span<const TokenId> prefix(state.sequence.tokens.data(), j);
      append(candidate, model.sample(ctx, temp, call_budget(cfg, end, j), proposal_seed, prefix));
      const auto candidate_scores = model.score_continuation(ctx, candidate.tokens, temp);

      double log_ratio = alpha * (sum_from(candidate_scores.logprobs_t1, j) -
                                  sum_from(current_scores.logprobs_t1, j)) +
                         sum_from(current_scores.logprobs_at_temp, j) -
                         sum_from(candidate_scores.logprobs_at_temp, j);
      if (cfg.length_correction) {
        log_ratio += std::log(static_cast<double>(len - lo)) -
                     std::log(static_cast<double>(candidate.tokens.size() - lo));
      }
      // u lies in [0, 1), so log_ratio >= 0 always accepts.
      const bool accept = std::isnan(log_ratio) ? false : (log_ratio >= 0.0 || u < std::exp(log_ratio));
      ++state.proposed;
      if (accept) {
        ++state.accepted;
        state.sequence = std::move(candidate);
        current_scores = candidate_scores;
      }
      if (observer) observer(ChainStep{step_counter, b, j, accept, log_ratio}, state);
      ++step_counter;
    }
  }
  return state;
}

void write_chain_trace(std::ostream& out, const std::vector<ChainStep>& steps) {
  for (const auto& s : steps) {
    nlohmann::json line = {{"step", s.step},
                           {"block", s.block},
                           {"position", s.position},
                           {"accepted", s.accepted},
                           {"log_ratio", s.log_ratio}};
    out << line.dump() << '\n';
  }
}

Prediction m4_acceptance(const SteeredModel& model, const ChatContext& ctx,
                         const TabooVocabulary& vocab, const MHConfig& cfg) {
  const auto state = run_chain(model, ctx, cfg);
  Prediction p;
  p.config = MethodConfig::mcmc_accept(cfg.proposal_temperature);
  p.config.blocks = cfg.blocks;
  p.config.block_len = cfg.block_len;
  p.config.steps_per_block = cfg.steps_per_block;
  p.raw_text = state.sequence.text();
  p.answer = extract_first_word(p.raw_text, vocab);
  p.confidence = static_cast<double>(state.accepted) / cfg.total_steps();
  p.flags.empty_output = p.raw_text.empty();
  return p;
}

Prediction m5_agreement(const SteeredModel& model, const ChatContext& ctx,
                        const TabooVocabulary& vocab, const MHConfig& cfg, int chains) {
  require(chains >= 1, ErrorCode::kInvalidArgument, "need at least one chain");
  std::vector<std::optional<std::string>> answers;
  std::vector<ExtractedAnswer> extracted;
  std::vector<std::string> texts;
  for (int i = 0; i < chains; ++i) {
    MHConfig chain_cfg = cfg;
    chain_cfg.seed = cfg.seed + static_cast<std::uint64_t>(i);
    const auto state = run_chain(model, ctx, chain_cfg);
    texts.push_back(state.sequence.text());
    extracted.push_back(extract_first_word(texts.back(), vocab));
    answers.push_back(extracted.back().word);
  }
  const auto mode = modal_answer(answers, vocab);
  Prediction p;
  p.config = MethodConfig::mcmc_agree(cfg.proposal_temperature, chains);
  p.config.blocks = cfg.blocks;
  p.config.block_len = cfg.block_len;
  p.config.steps_per_block = cfg.steps_per_block;
  p.answer = extracted[mode.first_index];
  p.raw_text = texts[mode.first_index];
  p.confidence = mode.frequency();
  p.flags.empty_output = p.raw_text.empty();
  return p;
}

}  // namespace oracle_uq

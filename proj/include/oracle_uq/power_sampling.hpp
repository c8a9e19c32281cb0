#pragma once

// Block Metropolis-Hastings sampling from the power law p^alpha of a steered
// model, proposing from the per-position tempered law q_T with alpha = 1/T.
//
// Each block first extends the chain by block_len tokens drawn from q_T, then
// runs steps_per_block MH steps. A step picks a position j, resamples tokens
// j..end-of-current-block from q_T and accepts with probability
//
//   min(1, exp(alpha * [log p(prop_seg) - log p(curr_seg)]
//              + log q_T(curr_seg) - log q_T(prop_seg)))
//
// where both segments are conditioned on the shared prefix tokens [0, j).

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "oracle_uq/methods.hpp"
#include "oracle_uq/model.hpp"

namespace oracle_uq {

enum class ProposalScope {
  kGeneratedSuffix,  // j uniform over every token generated so far
  kCurrentBlock,     // j restricted to the block being refined
};

struct MHConfig {
  int blocks = 4;
  int block_len = 5;
  int steps_per_block = 5;
  double proposal_temperature = 0.5;
  std::uint64_t seed = 0;
  ProposalScope scope = ProposalScope::kGeneratedSuffix;
  // Adds log(|curr| / |prop|) for the position draw when an end-of-sequence
  // token makes the two sequences differ in length. Off by default: with
  // equal lengths the position choice cancels.
  bool length_correction = false;
  int max_tokens_per_call = 0;  // 0 = no extra cap beyond the block end

  double alpha() const { return 1.0 / proposal_temperature; }
  int total_steps() const { return blocks * steps_per_block; }
  void validate() const;
};

struct ChainState {
  Generation sequence;  // tokens, texts, offsets, temperature-1 logprobs
  int accepted = 0;
  int proposed = 0;
  int block_index = 0;

  double acceptance_rate() const {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / proposed;
  }
};

struct ChainStep {
  int step = 0;
  int block = 0;
  std::size_t position = 0;
  bool accepted = false;
  double log_ratio = 0.0;
};

using ChainObserver = std::function<void(const ChainStep&, const ChainState&)>;

ChainState run_chain(const SteeredModel& model, const ChatContext& ctx, const MHConfig& cfg,
                     const ChainObserver& observer = {});

/// Writes one JSON object per line: step, block, position, accepted, log_ratio.
void write_chain_trace(std::ostream& out, const std::vector<ChainStep>& steps);

Prediction m4_acceptance(const SteeredModel& model, const ChatContext& ctx,
                         const TabooVocabulary& vocab, const MHConfig& cfg);

Prediction m5_agreement(const SteeredModel& model, const ChatContext& ctx,
                        const TabooVocabulary& vocab, const MHConfig& cfg, int chains = 10);

}  // namespace oracle_uq

#pragma once

// Token-level Bradley-Terry reward model over minimal-edit preference pairs,
// plus the conventional sequence-level baseline head.
//
// Architecture (desk scale: a causal window MLP, not a transformer): the
// state feature for response position t concatenates the
// embeddings of the previous `window` response tokens (PAD-filled before the
// start), the mean-pooled prompt embedding, the embedding of a_t, and a
// learned per-position scalar. A tanh MLP maps features to a scalar; the
// token-level head squashes it with tanh to (-1, 1), the sequence-level head
// reads the final token's unsquashed scalar as the whole-response score.

#include <cstdint>
#include <string>
#include <vector>

#include "grainrl/corpus.hpp"
#include "grainrl/editdiff.hpp"
#include "grainrl/tensor.hpp"

namespace grainrl {

struct RmConfig {
  enum class Head { token_level, sequence_level };
  enum class Loss { full, approx, sequence };
  // Eq. 3's shared-U0 rewards: evaluated on the edited side's contexts, or
  // averaged across both sides.
  enum class U0Mode { edited_side, average_both };

  Head head = Head::token_level;
  Loss loss = Loss::approx;
  U0Mode u0_mode = U0Mode::edited_side;

  int d_emb = 16;
  int d_hidden = 32;
  int window = 4;  // previous response tokens fed to the context encoder

  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  double heldout_frac = 0.1;
  uint64_t seed = 0;

  // Pairs with empty U1 should have been dropped upstream; losses throw
  // EmptyU1 unless this is set (the sigma(0) code path stays testable).
  bool allow_empty_u1 = false;

  void validate() const;
};

// Per-token rewards and their mean (the trajectory reward of Eq. 1).
struct RewardTrace {
  std::vector<double> rewards;
  double trajectory_reward = 0.0;
};

// p(i beats j) = sigma(R_i - R_j) on trajectory rewards (Eq. 2).
double preference_prob(const RewardTrace& trace_i, const RewardTrace& trace_j);

class RewardModel {
 public:
  RewardModel(const Vocabulary& vocab, const RmConfig& config);          // fresh Xavier init
  RewardModel(const Vocabulary& vocab, const RmConfig& config, ParamStore params);

  const RmConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Per-token rewards for a response in its prompt context; token head only.
  // r_t depends on (prompt, a_1..a_t) alone — appending tokens never changes
  // earlier rewards. Throws EmptyResponse / WrongHead.
  RewardTrace token_rewards(const TokenSequence& prompt, const TokenSequence& response) const;

  // Whole-response score read at the final token state; sequence head only.
  double sequence_score(const TokenSequence& prompt, const TokenSequence& response) const;

  // Builds the mean batch loss over pairs on the tape and returns its node.
  // `which` = full: Eq. 3 (both U1 sums plus the (1/Ti - 1/Tj) * U0 term);
  // approx: Eq. 4 (U1 sums only); sequence: BT on final-state scores.
  // Equal-length pairs make full and approx bitwise identical: the U0
  // coefficient is computed as 1/Ti - 1/Tj and is exactly zero.
  NodeId batch_loss(Tape& tape, const std::vector<EditPair>& pairs, RmConfig::Loss which) const;

 private:
  void build_params(uint64_t seed);
  void check_params() const;

  const Vocabulary* vocab_;
  RmConfig config_;
  ParamStore params_;
};

struct RmEpochLog {
  int epoch = 0;
  double loss = 0.0;
  double heldout_accuracy = 0.0;
};

struct TrainedRm {
  RewardModel model;
  std::vector<RmEpochLog> log;
  std::vector<EditPair> heldout;  // the evaluation split (last heldout_frac)
};

// Adam training with a deterministic 90/10 train/held-out split. config.loss
// selects the objective; config.head must match (sequence loss <-> sequence
// head). Deterministic given config.seed.
TrainedRm train_rm(const Vocabulary& vocab, const std::vector<EditPair>& dataset,
                   const RmConfig& config);

// Fraction of pairs whose oracle-preferred side (the edited response — every
// kept EditPair has a strict oracle margin) gets the strictly higher model
// score: Eq. 1 trajectory reward for the token head, final-state score for
// the sequence head. Ties count 0.5.
double rm_accuracy(const RewardModel& model, const std::vector<EditPair>& pairs);

// Writes the training log as CSV: epoch, loss, heldout_accuracy.
void write_rm_log_csv(const std::string& path, const std::vector<RmEpochLog>& log);

}  // namespace grainrl

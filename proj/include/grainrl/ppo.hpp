#pragma once

// Clipped PPO over the toy vocabulary: a causal window-MLP policy with a
// value head, rollout generation, both reward-assignment schemes (per-token
// reward vector vs classical terminal-reward-minus-KL), and GAE.

#include <cstdint>
#include <string>
#include <vector>

#include "grainrl/corpus.hpp"
#include "grainrl/reward_model.hpp"
#include "grainrl/rng.hpp"
#include "grainrl/tensor.hpp"

namespace grainrl {

struct PolicyConfig {
  int d_emb = 16;
  int d_hidden = 32;
  int window = 4;  // previous response tokens visible to the state encoder
  uint64_t seed = 0;

  void validate() const;
};

// Causal policy: the state for choosing a_t is (prompt, a_1..a_{t-1}),
// featurized exactly like the reward model's context (window of previous
// tokens PAD-filled at the start, mean-pooled prompt embedding, learned
// position scalar) minus the a_t slot. One tanh trunk feeds both the logits
// head (softmax over the full vocabulary) and the scalar value head.
class Policy {
 public:
  Policy(const Vocabulary& vocab, const PolicyConfig& config);              // fresh Xavier init
  Policy(const Vocabulary& vocab, const PolicyConfig& config, ParamStore params);

  const PolicyConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return *vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Log-probabilities [1 x V] for the next token after `generated`; the same
  // code path the batched update uses, so the doubles agree bitwise.
  std::vector<double> next_logprobs(const TokenSequence& prompt,
                                    const std::vector<TokenId>& generated) const;
  // Value estimate for the same state.
  double state_value(const TokenSequence& prompt, const std::vector<TokenId>& generated) const;
  // log pi(a_t | s_t) for every action of a finished response, computed in
  // one batched graph — the recompute the PPO update performs. Bitwise equal
  // to the per-step values a rollout under these params records.
  std::vector<double> response_logprobs(const TokenSequence& prompt,
                                        const TokenSequence& response) const;

 private:
  void build_params(uint64_t seed);
  void check_params() const;

  const Vocabulary* vocab_;
  PolicyConfig config_;
  ParamStore params_;
};

struct PPOConfig {
  enum class RewardScheme { token_level, sequence_terminal };

  double gamma = 1.0;
  double lambda = 0.95;
  double clip_eps = 0.2;
  // Per-token KL penalty. 0 reproduces the bare per-token reward vector; the
  // default keeps the toy policy from reward-hacking the RM.
  double kl_coef = 0.02;
  RewardScheme reward_scheme = RewardScheme::token_level;

  int epochs = 4;          // optimization epochs per rollout batch
  int minibatch_size = 8;  // trajectories per minibatch
  double lr = 1e-4;
  double max_grad_norm = 1.0;

  int rollout_batch = 32;    // trajectories per PPO iteration
  int max_iters = 200;       // hard stop for train_ppo
  double oracle_target = 0.5;  // stop once mean oracle reward reaches this
  uint64_t seed = 0;

  void validate() const;  // gamma in (0,1], lambda in [0,1], eps > 0, beta >= 0
};

struct Trajectory {
  TokenSequence prompt;
  TokenSequence response;        // a_1..a_T; ends with EOS or has length L_max
  std::vector<double> logprobs;  // behavior log pi(a_t | s_t)
  std::vector<double> ref_logprobs;
  std::vector<double> values;    // V(s_t) under the behavior policy
  double bootstrap = 0.0;        // V(s_{T+1}); 0 at termination (EOS and L_max)
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Samples one response autoregressively at temperature 1.0, recording
// log-probs under both policies and the value estimates, then fills rewards
// via assign_rewards and advantages/returns via gae. Deterministic given rng.
Trajectory rollout(const Policy& policy, const Policy& ref_policy,
                   const RewardModel& reward_model, const TokenSequence& prompt,
                   const PPOConfig& config, Rng& rng);

// Reward vector for a sampled trajectory, kl_t = logprobs[t] - ref_logprobs[t]:
//   token_level:        r_t = R_t - beta * kl_t   (R_t from token_rewards)
//   sequence_terminal:  r_t =     - beta * kl_t, plus R_seq added at t = T.
// Throws HeadSchemeMismatch when the RM head does not match the scheme.
std::vector<double> assign_rewards(const Trajectory& traj, const RewardModel& reward_model,
                                   const std::vector<double>& ref_logprobs,
                                   const PPOConfig& config);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + values
};

// delta_t = r_t + gamma * V_{t+1} - V_t; A_t = sum_{l>=0} (gamma*lambda)^l
// delta_{t+l}, computed by the backward recursion. Throws LengthMismatch.
GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
              double bootstrap, double gamma, double lambda);

struct PpoUpdateStats {
  double policy_loss = 0.0;  // mean over minibatch passes
  double value_loss = 0.0;
};

// Builds the clipped-surrogate-plus-value objective over the given
// trajectories on the tape, whitening advantages across them — the same
// construction ppo_update runs per minibatch. Exposed so the objective's
// gradients can be finite-difference checked.
NodeId ppo_loss(Tape& tape, const Policy& policy, const std::vector<Trajectory>& batch,
                const PPOConfig& config);

// Mean negative log-likelihood of the responses given their prompts — the
// maximum-likelihood (SFT) objective. Mean is over all response tokens.
NodeId nll_loss(Tape& tape, const Policy& policy,
                const std::vector<std::pair<const TokenSequence*, const TokenSequence*>>&
                    examples);

// One PPO optimization phase over a rollout batch: advantages whitened across
// the batch (std floor 1e-8), then epochs x minibatch clipped-surrogate steps
//   minimize  -mean_t min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t)
//             + 0.5 * mean_t (V(s_t) - returns_t)^2
// with gradient-norm clipping. adam carries optimizer state across calls
// within a training run; rng drives the minibatch shuffles.
PpoUpdateStats ppo_update(Policy& policy, const std::vector<Trajectory>& batch,
                          const PPOConfig& config, AdamState& adam, Rng& rng);

struct PpoIterLog {
  int iter = 0;
  double mean_oracle_reward = 0.0;  // ground-truth metric; never trains anything
  double mean_rm_reward = 0.0;
  double mean_kl = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
};

struct PpoRunResult {
  Policy policy;
  std::vector<PpoIterLog> log;
  bool reached_target = false;
  int iters_run = 0;  // == log.size(); iterations actually executed
};

// Iterates rollout batches and ppo_update from the (frozen) starting policy,
// which also serves as the KL reference. Stops once the batch's mean oracle
// sequence reward reaches config.oracle_target, or after max_iters.
// Deterministic given (config, seed); max_iters = 0 returns the start policy
// unchanged.
PpoRunResult train_ppo(const Policy& sft_policy, const RewardModel& reward_model,
                       const PPOConfig& config);

// CSV: iter, mean_oracle_reward, mean_rm_reward, mean_kl, policy_loss, value_loss.
void write_ppo_log_csv(const std::string& path, const std::vector<PpoIterLog>& log);

}  // namespace grainrl

#include "grainrl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace grainrl {

void PolicyConfig::validate() const {
  if (d_emb < 1 || d_hidden < 1 || window < 1) throw ConfigError("PolicyConfig: bad dimensions");
}

void PPOConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("PPOConfig: gamma must be in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("PPOConfig: lambda must be in [0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("PPOConfig: clip_eps must be positive");
  if (!(kl_coef >= 0.0)) throw ConfigError("PPOConfig: kl_coef must be non-negative");
  if (epochs < 1 || minibatch_size < 1 || rollout_batch < 1)
    throw ConfigError("PPOConfig: bad batch schedule");
  if (max_iters < 0) throw ConfigError("PPOConfig: max_iters must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("PPOConfig: lr must be positive");
  if (!(max_grad_norm > 0.0)) throw ConfigError("PPOConfig: max_grad_norm must be positive");
  if (!std::isfinite(oracle_target)) throw ConfigError("PPOConfig: oracle_target must be finite");
}

Policy::Policy(const Vocabulary& vocab, const PolicyConfig& config)
    : vocab_(&vocab), config_(config) {
  config_.validate();
  build_params(config.seed);
}

Policy::Policy(const Vocabulary& vocab, const PolicyConfig& config, ParamStore params)
    : vocab_(&vocab), config_(config), params_(std::move(params)) {
  config_.validate();
  check_params();
}

void Policy::build_params(uint64_t seed) {
  const int v = vocab_->size();
  const int d = config_.d_emb;
  const int feat = (config_.window + 1) * d + 1;
  params_.create_xavier("emb", v, d, derive_seed(seed, 1));
  params_.create_xavier("pos", kMaxResponseLen, 1, derive_seed(seed, 2));
  params_.create_xavier("w1", feat, config_.d_hidden, derive_seed(seed, 3));
  params_.create("b1", 1, config_.d_hidden);
  params_.create_xavier("w_logits", config_.d_hidden, v, derive_seed(seed, 4));
  params_.create("b_logits", 1, v);
  params_.create_xavier("w_value", config_.d_hidden, 1, derive_seed(seed, 5));
  params_.create("b_value", 1, 1);
}

void Policy::check_params() const {
  const int d = config_.d_emb;
  const int feat = (config_.window + 1) * d + 1;
  const auto expect = [&](const std::string& name, int rows, int cols) {
    if (!params_.has(name)) throw CheckpointError("policy: missing parameter " + name);
    const Mat& m = params_.get(name);
    if (m.rows != rows || m.cols != cols) throw CheckpointError("policy: bad shape for " + name);
  };
  expect("emb", vocab_->size(), d);
  expect("pos", kMaxResponseLen, 1);
  expect("w1", feat, config_.d_hidden);
  expect("b1", 1, config_.d_hidden);
  expect("w_logits", config_.d_hidden, vocab_->size());
  expect("b_logits", 1, vocab_->size());
  expect("w_value", config_.d_hidden, 1);
  expect("b_value", 1, 1);
}

namespace {

// One group of consecutive policy states sharing a prompt: states
// t in [t_begin, t_end) over the given generated-token prefix.
struct StateGroup {
  const TokenSequence* prompt;
  const std::vector<TokenId>* tokens;
  int t_begin;
  int t_end;
};

struct PolicyNodes {
  NodeId logp_rows;  // [N x V] log-softmax rows
  NodeId values;     // [N x 1]
};

// Shared graph builder for rollouts (one state) and updates (all states of a
// minibatch). Row results are bitwise independent of the other rows in the
// batch: matmul accumulates per row, the prompt mean is pooled per group in
// row order, and log-softmax normalizes per row. That makes behavior
// log-probs recomputed at update time bitwise equal to rollout's.
PolicyNodes policy_graph(Tape& tape, const Policy& policy,
                         const std::vector<StateGroup>& groups) {
  const PolicyConfig& config = policy.config();
  const int k = config.window;
  const TokenId pad = policy.vocab().pad();

  std::vector<std::vector<int>> window_ids(static_cast<size_t>(k));
  std::vector<int> pos_ids, prompt_ids, prompt_seg, group_of_row;
  for (size_t g = 0; g < groups.size(); ++g) {
    const StateGroup& grp = groups[g];
    if (grp.prompt->empty()) throw EmptyResponseError("policy: empty prompt");
    if (grp.t_begin < 0 || grp.t_end > kMaxResponseLen || grp.t_begin >= grp.t_end)
      throw ShapeMismatchError("policy: state range out of bounds");
    for (TokenId id : grp.prompt->ids) {
      prompt_ids.push_back(id);
      prompt_seg.push_back(static_cast<int>(g));
    }
    for (int t = grp.t_begin; t < grp.t_end; ++t) {
      for (int w = 0; w < k; ++w) {
        const int src = t - k + w;
        window_ids[static_cast<size_t>(w)].push_back(
            src >= 0 ? (*grp.tokens)[static_cast<size_t>(src)] : pad);
      }
      pos_ids.push_back(t);
      group_of_row.push_back(static_cast<int>(g));
    }
  }

  const ParamStore& params = policy.params();
  const NodeId emb = tape.param(params, "emb");
  std::vector<NodeId> parts;
  for (int w = 0; w < k; ++w)
    parts.push_back(tape.gather_rows(emb, window_ids[static_cast<size_t>(w)]));
  const NodeId prompt_rows = tape.gather_rows(emb, prompt_ids);
  const NodeId prompt_mean =
      tape.segment_mean_rows(prompt_rows, prompt_seg, static_cast<int>(groups.size()));
  parts.push_back(tape.gather_rows(prompt_mean, group_of_row));
  parts.push_back(tape.gather_rows(tape.param(params, "pos"), pos_ids));

  const NodeId x = tape.concat_cols(parts);
  const NodeId h = tape.tanh_(
      tape.add_rowvec(tape.matmul(x, tape.param(params, "w1")), tape.param(params, "b1")));
  PolicyNodes out;
  out.logp_rows = tape.log_softmax_rows(
      tape.add_rowvec(tape.matmul(h, tape.param(params, "w_logits")),
                      tape.param(params, "b_logits")));
  out.values = tape.add_rowvec(tape.matmul(h, tape.param(params, "w_value")),
                               tape.param(params, "b_value"));
  return out;
}

struct StateEval {
  std::vector<double> logprobs;  // one row of the log-softmax
  double value = 0.0;
};

StateEval eval_state(const Policy& policy, const TokenSequence& prompt,
                     const std::vector<TokenId>& generated) {
  const int t = static_cast<int>(generated.size());
  Tape tape;
  const PolicyNodes nodes = policy_graph(tape, policy, {{&prompt, &generated, t, t + 1}});
  StateEval out;
  out.logprobs = tape.value(nodes.logp_rows).data;
  out.value = tape.value(nodes.values).item();
  return out;
}

// Flattened per-row constants for a set of trajectories.
struct LossInputs {
  std::vector<StateGroup> groups;
  std::vector<int> actions;
  std::vector<double> behavior, adv, ret;

  void append(const Trajectory& traj, const std::vector<double>& whitened_adv) {
    groups.push_back({&traj.prompt, &traj.response.ids, 0, traj.response.size()});
    actions.insert(actions.end(), traj.response.ids.begin(), traj.response.ids.end());
    behavior.insert(behavior.end(), traj.logprobs.begin(), traj.logprobs.end());
    adv.insert(adv.end(), whitened_adv.begin(), whitened_adv.end());
    ret.insert(ret.end(), traj.returns.begin(), traj.returns.end());
  }
};

struct LossNodes {
  NodeId loss;
  NodeId policy_loss;
  NodeId value_loss;
};

LossNodes build_ppo_loss(Tape& tape, const Policy& policy, const LossInputs& in,
                         const PPOConfig& config) {
  const int rows = static_cast<int>(in.actions.size());
  const auto column = [&](const std::vector<double>& v) {
    Mat m(rows, 1);
    m.data = v;
    return m;
  };

  const PolicyNodes nodes = policy_graph(tape, policy, in.groups);
  const NodeId lp_new = tape.take_per_row(nodes.logp_rows, in.actions);
  const NodeId rho = tape.exp_(tape.sub(lp_new, tape.constant(column(in.behavior))));
  const NodeId adv_node = tape.constant(column(in.adv));
  const NodeId surrogate = tape.minimum(
      tape.mul(rho, adv_node),
      tape.mul(tape.clip(rho, 1.0 - config.clip_eps, 1.0 + config.clip_eps), adv_node));
  LossNodes out;
  out.policy_loss = tape.affine(tape.mean_all(surrogate), -1.0);
  const NodeId v_err = tape.sub(nodes.values, tape.constant(column(in.ret)));
  out.value_loss = tape.mean_all(tape.mul(v_err, v_err));
  out.loss = tape.add(out.policy_loss, tape.affine(out.value_loss, 0.5));
  return out;
}

void check_trajectories(const std::vector<Trajectory>& batch) {
  if (batch.empty()) throw ConfigError("ppo: empty trajectory batch");
  for (const Trajectory& traj : batch) {
    const size_t n = traj.response.ids.size();
    if (n == 0 || traj.logprobs.size() != n || traj.values.size() != n ||
        traj.advantages.size() != n || traj.returns.size() != n)
      throw LengthMismatchError("ppo: trajectory fields disagree in length");
  }
}

// Whitened advantages, per trajectory: mean 0, population std 1 (floored).
std::vector<std::vector<double>> whiten_advantages(const std::vector<Trajectory>& batch) {
  double mean = 0.0;
  size_t n_steps = 0;
  for (const Trajectory& traj : batch)
    for (double a : traj.advantages) {
      mean += a;
      ++n_steps;
    }
  mean /= static_cast<double>(n_steps);
  double var = 0.0;
  for (const Trajectory& traj : batch)
    for (double a : traj.advantages) var += (a - mean) * (a - mean);
  const double denom = std::max(std::sqrt(var / static_cast<double>(n_steps)), 1e-8);

  std::vector<std::vector<double>> white(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    white[i].reserve(batch[i].advantages.size());
    for (double a : batch[i].advantages) white[i].push_back((a - mean) / denom);
  }
  return white;
}

}  // namespace

std::vector<double> Policy::next_logprobs(const TokenSequence& prompt,
                                          const std::vector<TokenId>& generated) const {
  return eval_state(*this, prompt, generated).logprobs;
}

double Policy::state_value(const TokenSequence& prompt,
                           const std::vector<TokenId>& generated) const {
  return eval_state(*this, prompt, generated).value;
}

std::vector<double> Policy::response_logprobs(const TokenSequence& prompt,
                                              const TokenSequence& response) const {
  if (response.empty()) throw EmptyResponseError("response_logprobs: empty response");
  Tape tape;
  const PolicyNodes nodes =
      policy_graph(tape, *this, {{&prompt, &response.ids, 0, response.size()}});
  const NodeId lp = tape.take_per_row(nodes.logp_rows, response.ids);
  return tape.value(lp).data;
}

std::vector<double> assign_rewards(const Trajectory& traj, const RewardModel& reward_model,
                                   const std::vector<double>& ref_logprobs,
                                   const PPOConfig& config) {
  const size_t n = traj.response.ids.size();
  if (traj.logprobs.size() != n || ref_logprobs.size() != n)
    throw LengthMismatchError("assign_rewards: log-prob vectors do not match the response");
  const bool token_scheme = config.reward_scheme == PPOConfig::RewardScheme::token_level;
  const bool token_head = reward_model.config().head == RmConfig::Head::token_level;
  if (token_scheme != token_head)
    throw HeadSchemeMismatchError(
        "assign_rewards: reward scheme requires the matching reward-model head");

  std::vector<double> rewards(n);
  for (size_t t = 0; t < n; ++t)
    rewards[t] = -config.kl_coef * (traj.logprobs[t] - ref_logprobs[t]);
  if (token_scheme) {
    const RewardTrace trace = reward_model.token_rewards(traj.prompt, traj.response);
    for (size_t t = 0; t < n; ++t) rewards[t] += trace.rewards[t];
  } else {
    rewards[n - 1] += reward_model.sequence_score(traj.prompt, traj.response);
  }
  return rewards;
}

GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
              double bootstrap, double gamma, double lambda) {
  if (rewards.size() != values.size())
    throw LengthMismatchError("gae: rewards and values differ in length");
  if (rewards.empty()) throw LengthMismatchError("gae: empty trajectory");
  const size_t n = rewards.size();
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double acc = 0.0;
  for (size_t t = n; t-- > 0;) {
    const double next_value = t + 1 < n ? values[t + 1] : bootstrap;
    const double delta = rewards[t] + gamma * next_value - values[t];
    acc = delta + gamma * lambda * acc;
    out.advantages[t] = acc;
    out.returns[t] = acc + values[t];
  }
  return out;
}

Trajectory rollout(const Policy& policy, const Policy& ref_policy,
                   const RewardModel& reward_model, const TokenSequence& prompt,
                   const PPOConfig& config, Rng& rng) {
  config.validate();
  Trajectory traj;
  traj.prompt = prompt;
  traj.response.role = Role::response;
  const TokenId eos = policy.vocab().eos();

  std::vector<TokenId>& gen = traj.response.ids;
  while (static_cast<int>(gen.size()) < kMaxResponseLen) {
    const StateEval state = eval_state(policy, prompt, gen);
    std::vector<double> probs(state.logprobs.size());
    for (size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(state.logprobs[i]);
    const TokenId a = rng.categorical(probs);
    traj.logprobs.push_back(state.logprobs[static_cast<size_t>(a)]);
    traj.values.push_back(state.value);
    traj.ref_logprobs.push_back(
        eval_state(ref_policy, prompt, gen).logprobs[static_cast<size_t>(a)]);
    gen.push_back(a);
    if (a == eos) break;
  }

  traj.bootstrap = 0.0;  // EOS and L_max truncation both count as terminal
  traj.rewards = assign_rewards(traj, reward_model, traj.ref_logprobs, config);
  GaeResult g = gae(traj.rewards, traj.values, traj.bootstrap, config.gamma, config.lambda);
  traj.advantages = std::move(g.advantages);
  traj.returns = std::move(g.returns);
  return traj;
}

NodeId nll_loss(Tape& tape, const Policy& policy,
                const std::vector<std::pair<const TokenSequence*, const TokenSequence*>>&
                    examples) {
  if (examples.empty()) throw ConfigError("nll_loss: no examples");
  std::vector<StateGroup> groups;
  std::vector<int> actions;
  for (const auto& [prompt, response] : examples) {
    if (response->empty()) throw EmptyResponseError("nll_loss: empty response");
    groups.push_back({prompt, &response->ids, 0, response->size()});
    actions.insert(actions.end(), response->ids.begin(), response->ids.end());
  }
  const PolicyNodes nodes = policy_graph(tape, policy, groups);
  return tape.affine(tape.mean_all(tape.take_per_row(nodes.logp_rows, actions)), -1.0);
}

NodeId ppo_loss(Tape& tape, const Policy& policy, const std::vector<Trajectory>& batch,
                const PPOConfig& config) {
  config.validate();
  check_trajectories(batch);
  const auto white = whiten_advantages(batch);
  LossInputs in;
  for (size_t i = 0; i < batch.size(); ++i) in.append(batch[i], white[i]);
  return build_ppo_loss(tape, policy, in, config).loss;
}

PpoUpdateStats ppo_update(Policy& policy, const std::vector<Trajectory>& batch,
                          const PPOConfig& config, AdamState& adam, Rng& rng) {
  config.validate();
  check_trajectories(batch);
  const auto white = whiten_advantages(batch);

  const AdamConfig adam_config{config.lr, 0.9, 0.999, 1e-8};
  std::vector<size_t> order(batch.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  PpoUpdateStats stats;
  int passes = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.minibatch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(config.minibatch_size));
      LossInputs in;
      for (size_t i = start; i < end; ++i) in.append(batch[order[i]], white[order[i]]);

      Tape tape;
      const LossNodes nodes = build_ppo_loss(tape, policy, in, config);
      std::unordered_map<std::string, Mat> grads;
      try {
        grads = tape.backward(nodes.loss);
      } catch (const NonFiniteLossError& e) {
        throw NonFiniteLossError(std::string("ppo_update: aborting, epoch ") +
                                 std::to_string(epoch) + ": " + e.what());
      }
      clip_grad_norm(grads, config.max_grad_norm);
      adam_step(policy.params(), grads, adam, adam_config);

      stats.policy_loss += tape.scalar_value(nodes.policy_loss);
      stats.value_loss += tape.scalar_value(nodes.value_loss);
      ++passes;
    }
  }
  stats.policy_loss /= passes;
  stats.value_loss /= passes;
  return stats;
}

PpoRunResult train_ppo(const Policy& sft_policy, const RewardModel& reward_model,
                       const PPOConfig& config) {
  config.validate();
  const bool token_scheme = config.reward_scheme == PPOConfig::RewardScheme::token_level;
  if (token_scheme != (reward_model.config().head == RmConfig::Head::token_level))
    throw HeadSchemeMismatchError("train_ppo: reward scheme requires the matching RM head");

  const Vocabulary& vocab = sft_policy.vocab();
  const OracleSpec oracle;
  PpoRunResult result{sft_policy, {}, false, 0};
  Policy& policy = result.policy;
  const Policy& ref = sft_policy;
  AdamState adam;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    std::vector<Trajectory> batch;
    batch.reserve(static_cast<size_t>(config.rollout_batch));
    double oracle_sum = 0.0, rm_sum = 0.0, kl_sum = 0.0;
    size_t kl_steps = 0;
    for (int k = 0; k < config.rollout_batch; ++k) {
      const TokenSequence prompt = vocab.sample_prompt(
          derive_seed(config.seed, 0xF00D0000ULL + static_cast<uint64_t>(iter),
                      static_cast<uint64_t>(k)));
      Rng rng(derive_seed(config.seed, 0x0112E000ULL + static_cast<uint64_t>(iter),
                          static_cast<uint64_t>(k)));
      batch.push_back(rollout(policy, ref, reward_model, prompt, config, rng));
      const Trajectory& traj = batch.back();
      oracle_sum += vocab.oracle_sequence_reward(traj.response, oracle);
      rm_sum += token_scheme
                    ? reward_model.token_rewards(traj.prompt, traj.response).trajectory_reward
                    : reward_model.sequence_score(traj.prompt, traj.response);
      for (size_t t = 0; t < traj.logprobs.size(); ++t) {
        kl_sum += traj.logprobs[t] - traj.ref_logprobs[t];
        ++kl_steps;
      }
    }

    Rng update_rng(derive_seed(config.seed, 0x5EED0000ULL + static_cast<uint64_t>(iter)));
    const PpoUpdateStats stats = ppo_update(policy, batch, config, adam, update_rng);

    PpoIterLog row;
    row.iter = iter;
    row.mean_oracle_reward = oracle_sum / config.rollout_batch;
    row.mean_rm_reward = rm_sum / config.rollout_batch;
    row.mean_kl = kl_steps == 0 ? 0.0 : kl_sum / static_cast<double>(kl_steps);
    row.policy_loss = stats.policy_loss;
    row.value_loss = stats.value_loss;
    result.log.push_back(row);

    if (row.mean_oracle_reward >= config.oracle_target) {
      result.reached_target = true;
      break;
    }
  }
  result.iters_run = static_cast<int>(result.log.size());
  return result;
}

void write_ppo_log_csv(const std::string& path, const std::vector<PpoIterLog>& log) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write convergence log: " + path);
  out << "iter,mean_oracle_reward,mean_rm_reward,mean_kl,policy_loss,value_loss\n";
  char buf[256];
  for (const PpoIterLog& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.iter,
                  row.mean_oracle_reward, row.mean_rm_reward, row.mean_kl, row.policy_loss,
                  row.value_loss);
    out << buf;
  }
}

}  // namespace grainrl

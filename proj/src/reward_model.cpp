#include "grainrl/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace grainrl {

void RmConfig::validate() const {
  if (d_emb < 1 || d_hidden < 1 || window < 1) throw ConfigError("RmConfig: bad dimensions");
  if (epochs < 1 || batch_size < 1) throw ConfigError("RmConfig: bad training schedule");
  if (!(lr > 0.0)) throw ConfigError("RmConfig: lr must be positive");
  if (!(heldout_frac >= 0.0 && heldout_frac < 1.0))
    throw ConfigError("RmConfig: heldout_frac must be in [0, 1)");
  const bool seq_loss = loss == Loss::sequence;
  const bool seq_head = head == Head::sequence_level;
  if (seq_loss != seq_head)
    throw ConfigError("RmConfig: sequence loss requires sequence head and vice versa");
}

double preference_prob(const RewardTrace& trace_i, const RewardTrace& trace_j) {
  return logistic_scalar(trace_i.trajectory_reward - trace_j.trajectory_reward);
}

RewardModel::RewardModel(const Vocabulary& vocab, const RmConfig& config)
    : vocab_(&vocab), config_(config) {
  config_.validate();
  build_params(config.seed);
}

RewardModel::RewardModel(const Vocabulary& vocab, const RmConfig& config, ParamStore params)
    : vocab_(&vocab), config_(config), params_(std::move(params)) {
  config_.validate();
  check_params();
}

void RewardModel::build_params(uint64_t seed) {
  const int v = vocab_->size();
  const int d = config_.d_emb;
  const int feat = (config_.window + 2) * d + 1;
  params_.create_xavier("emb", v, d, derive_seed(seed, 1));
  params_.create_xavier("pos", kMaxResponseLen, 1, derive_seed(seed, 2));
  params_.create_xavier("w1", feat, config_.d_hidden, derive_seed(seed, 3));
  params_.create("b1", 1, config_.d_hidden);
  params_.create_xavier("w2", config_.d_hidden, 1, derive_seed(seed, 4));
  params_.create("b2", 1, 1);
  params_.create("head_kind", 1, 1).data[0] =
      config_.head == RmConfig::Head::sequence_level ? 1.0 : 0.0;
}

void RewardModel::check_params() const {
  const int d = config_.d_emb;
  const int feat = (config_.window + 2) * d + 1;
  const auto expect = [&](const std::string& name, int rows, int cols) {
    if (!params_.has(name)) throw CheckpointError("reward model: missing parameter " + name);
    const Mat& m = params_.get(name);
    if (m.rows != rows || m.cols != cols)
      throw CheckpointError("reward model: bad shape for " + name);
  };
  expect("emb", vocab_->size(), d);
  expect("pos", kMaxResponseLen, 1);
  expect("w1", feat, config_.d_hidden);
  expect("b1", 1, config_.d_hidden);
  expect("w2", config_.d_hidden, 1);
  expect("b2", 1, 1);
  expect("head_kind", 1, 1);
  const bool stored_seq = params_.get("head_kind").data[0] != 0.0;
  if (stored_seq != (config_.head == RmConfig::Head::sequence_level))
    throw HeadSchemeMismatchError("reward model: checkpoint head kind disagrees with config");
}

namespace {

struct SeqRef {
  const TokenSequence* prompt;
  const TokenSequence* response;
};

// Raw per-position head outputs [N x 1] for all responses, rows ordered
// sequence-major then position. Single code path for scoring and training.
NodeId raw_scores(Tape& tape, const ParamStore& params, const RmConfig& config, TokenId pad_id,
                  const std::vector<SeqRef>& seqs) {
  const int k = config.window;
  std::vector<std::vector<int>> window_ids(static_cast<size_t>(k));
  std::vector<int> action_ids, pos_ids, prompt_ids, prompt_seg, seg_of_row;

  for (size_t s = 0; s < seqs.size(); ++s) {
    const auto& prompt = *seqs[s].prompt;
    const auto& resp = *seqs[s].response;
    if (resp.empty()) throw EmptyResponseError("reward model: empty response");
    if (resp.size() > kMaxResponseLen)
      throw ShapeMismatchError("reward model: response exceeds L_max");
    if (prompt.empty()) throw EmptyResponseError("reward model: empty prompt");
    for (TokenId id : prompt.ids) {
      prompt_ids.push_back(id);
      prompt_seg.push_back(static_cast<int>(s));
    }
    for (int t = 0; t < static_cast<int>(resp.size()); ++t) {
      for (int w = 0; w < k; ++w) {
        const int src = t - k + w;
        window_ids[static_cast<size_t>(w)].push_back(
            src >= 0 ? resp.ids[static_cast<size_t>(src)] : pad_id);
      }
      action_ids.push_back(resp.ids[static_cast<size_t>(t)]);
      pos_ids.push_back(t);
      seg_of_row.push_back(static_cast<int>(s));
    }
  }

  const NodeId emb = tape.param(params, "emb");
  std::vector<NodeId> parts;
  for (int w = 0; w < k; ++w)
    parts.push_back(tape.gather_rows(emb, window_ids[static_cast<size_t>(w)]));
  const NodeId prompt_rows = tape.gather_rows(emb, prompt_ids);
  const NodeId prompt_mean =
      tape.segment_mean_rows(prompt_rows, prompt_seg, static_cast<int>(seqs.size()));
  parts.push_back(tape.gather_rows(prompt_mean, seg_of_row));
  parts.push_back(tape.gather_rows(emb, action_ids));
  parts.push_back(tape.gather_rows(tape.param(params, "pos"), pos_ids));

  const NodeId x = tape.concat_cols(parts);
  const NodeId h = tape.tanh_(
      tape.add_rowvec(tape.matmul(x, tape.param(params, "w1")), tape.param(params, "b1")));
  return tape.add_rowvec(tape.matmul(h, tape.param(params, "w2")), tape.param(params, "b2"));
}

}  // namespace

RewardTrace RewardModel::token_rewards(const TokenSequence& prompt,
                                       const TokenSequence& response) const {
  if (config_.head != RmConfig::Head::token_level)
    throw WrongHeadError("token_rewards requires the token-level head");
  Tape tape;
  const NodeId raw = raw_scores(tape, params_, config_, vocab_->pad(), {{&prompt, &response}});
  const NodeId r = tape.tanh_(raw);
  RewardTrace trace;
  trace.rewards = tape.value(r).data;
  double sum = 0.0;
  for (double v : trace.rewards) sum += v;
  trace.trajectory_reward = sum / static_cast<double>(trace.rewards.size());
  return trace;
}

double RewardModel::sequence_score(const TokenSequence& prompt,
                                   const TokenSequence& response) const {
  if (config_.head != RmConfig::Head::sequence_level)
    throw WrongHeadError("sequence_score requires the sequence-level head");
  Tape tape;
  const NodeId raw = raw_scores(tape, params_, config_, vocab_->pad(), {{&prompt, &response}});
  const Mat& m = tape.value(raw);
  return m.at(m.rows - 1, 0);
}

NodeId RewardModel::batch_loss(Tape& tape, const std::vector<EditPair>& pairs,
                               RmConfig::Loss which) const {
  if (pairs.empty()) throw ConfigError("batch_loss: empty batch");
  const bool seq_loss = which == RmConfig::Loss::sequence;
  if (seq_loss != (config_.head == RmConfig::Head::sequence_level))
    throw WrongHeadError("batch_loss: loss kind does not match head kind");

  std::vector<SeqRef> seqs;
  seqs.reserve(pairs.size() * 2);
  for (const EditPair& p : pairs) {
    if (!config_.allow_empty_u1 && p.align.u1_edited.empty() && p.align.u1_original.empty())
      throw EmptyU1Error("batch_loss: pair with empty U1 should have been dropped");
    seqs.push_back({&p.prompt, &p.edited});    // tau^i, preferred
    seqs.push_back({&p.prompt, &p.original});  // tau^j
  }

  const NodeId raw = raw_scores(tape, params_, config_, vocab_->pad(), seqs);
  const NodeId scores = seq_loss ? raw : tape.tanh_(raw);

  // Row offsets of each sequence within the stacked score vector.
  std::vector<int> offset(seqs.size() + 1, 0);
  for (size_t s = 0; s < seqs.size(); ++s)
    offset[s + 1] = offset[s] + static_cast<int>(seqs[s].response->size());

  // Margin coefficients: z_b = sum_t S[b,t] * score_t, loss = mean softplus(-z).
  Mat s_mat(static_cast<int>(pairs.size()), offset.back());
  for (size_t b = 0; b < pairs.size(); ++b) {
    const EditPair& p = pairs[b];
    const int oi = offset[2 * b];      // edited rows
    const int oj = offset[2 * b + 1];  // original rows
    const int bi = static_cast<int>(b);
    if (seq_loss) {
      s_mat.at(bi, oj - 1) = 1.0;                // final state of edited
      s_mat.at(bi, offset[2 * b + 2] - 1) = -1.0;  // final state of original
      continue;
    }
    const double inv_ti = 1.0 / static_cast<double>(p.edited.size());
    const double inv_tj = 1.0 / static_cast<double>(p.original.size());
    for (int t : p.align.u1_edited) s_mat.at(bi, oi + t) += inv_ti;
    for (int t : p.align.u1_original) s_mat.at(bi, oj + t) -= inv_tj;
    // Eq. 3's shared-U0 term; the coefficient is exactly zero at equal
    // lengths, which makes full and approx bitwise identical there.
    const double u0_coef = which == RmConfig::Loss::full ? inv_ti - inv_tj : 0.0;
    if (config_.u0_mode == RmConfig::U0Mode::edited_side) {
      for (const auto& [ot, et] : p.align.matched) s_mat.at(bi, oi + et) += u0_coef;
    } else {
      for (const auto& [ot, et] : p.align.matched) {
        s_mat.at(bi, oi + et) += 0.5 * u0_coef;
        s_mat.at(bi, oj + ot) += 0.5 * u0_coef;
      }
    }
  }

  const NodeId z = tape.matmul(tape.constant(std::move(s_mat)), scores);
  return tape.mean_all(tape.softplus(tape.affine(z, -1.0)));
}

double rm_accuracy(const RewardModel& model, const std::vector<EditPair>& pairs) {
  if (pairs.empty()) throw ConfigError("rm_accuracy: no pairs");
  const bool token = model.config().head == RmConfig::Head::token_level;
  double score = 0.0;
  for (const EditPair& p : pairs) {
    const double si = token ? model.token_rewards(p.prompt, p.edited).trajectory_reward
                            : model.sequence_score(p.prompt, p.edited);
    const double sj = token ? model.token_rewards(p.prompt, p.original).trajectory_reward
                            : model.sequence_score(p.prompt, p.original);
    if (si > sj)
      score += 1.0;
    else if (si == sj)
      score += 0.5;
  }
  return score / static_cast<double>(pairs.size());
}

TrainedRm train_rm(const Vocabulary& vocab, const std::vector<EditPair>& dataset,
                   const RmConfig& config) {
  config.validate();
  if (dataset.empty()) throw DatasetError("train_rm: empty dataset");

  std::vector<EditPair> shuffled = dataset;
  Rng split_rng(derive_seed(config.seed, 0xA11));
  split_rng.shuffle(shuffled);
  const int n_held = static_cast<int>(std::llround(config.heldout_frac * shuffled.size()));
  std::vector<EditPair> heldout(shuffled.end() - n_held, shuffled.end());
  std::vector<EditPair> train(shuffled.begin(), shuffled.end() - n_held);
  if (train.empty()) throw DatasetError("train_rm: no training pairs after split");

  RewardModel model(vocab, config);
  AdamState adam;
  const AdamConfig adam_config{config.lr, 0.9, 0.999, 1e-8};
  std::vector<RmEpochLog> log;

  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(config.seed, 0xE60, static_cast<uint64_t>(epoch)));
    epoch_rng.shuffle(order);
    double loss_sum = 0.0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<EditPair> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      Tape tape;
      const NodeId loss = model.batch_loss(tape, batch, config.loss);
      auto grads = tape.backward(loss);
      adam_step(model.params(), grads, adam, adam_config);
      loss_sum += tape.scalar_value(loss);
      ++n_batches;
    }
    RmEpochLog row;
    row.epoch = epoch;
    row.loss = loss_sum / n_batches;
    row.heldout_accuracy = heldout.empty() ? 0.0 : rm_accuracy(model, heldout);
    log.push_back(row);
  }
  return TrainedRm{std::move(model), std::move(log), std::move(heldout)};
}

void write_rm_log_csv(const std::string& path, const std::vector<RmEpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write training log: " + path);
  out << "epoch,loss,heldout_accuracy\n";
  char buf[128];
  for (const RmEpochLog& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", row.epoch, row.loss,
                  row.heldout_accuracy);
    out << buf;
  }
}

}  // namespace grainrl

#include "grainrl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grainrl/errors.hpp"
#include "grainrl/rng.hpp"
#include "grainrl/tensor.hpp"

namespace grainrl {
namespace {

// Seed-stream tags (see rng.hpp for the derivation scheme).
constexpr uint64_t kSftPromptStream = 0x5F7;
constexpr uint64_t kSftTokenStream = 0xDE60;
constexpr uint64_t kSftSplitStream = 0xA11;
constexpr uint64_t kSftEpochStream = 0xE60;
constexpr uint64_t kEvalPromptStream = 0xE7A1;
constexpr uint64_t kEvalPolicyStream = 0xA1B;
constexpr uint64_t kEvalReferenceStream = 0xB2C;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Shortest representation that parses back to the same double — for the
// human-edited config files.
std::string fmt_shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot hash file: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::string hex64(uint64_t value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

void SftConfig::validate() const {
  if (n_demos < 10) throw ConfigError("SftConfig: n_demos must be >= 10");
  if (response_len < 1 || response_len + 1 > kMaxResponseLen)
    throw ConfigError("SftConfig: response_len out of range");
  if (p_bad < 0.0 || p_good < 0.0 || p_bad + p_good > 1.0)
    throw ConfigError("SftConfig: token mix must be a sub-distribution");
  if (epochs < 1) throw ConfigError("SftConfig: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("SftConfig: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("SftConfig: lr must be > 0");
  if (!(heldout_frac > 0.0 && heldout_frac < 1.0))
    throw ConfigError("SftConfig: heldout_frac must be in (0, 1)");
  const int heldout = static_cast<int>(std::llround(heldout_frac * n_demos));
  if (heldout < 1 || heldout >= n_demos)
    throw ConfigError("SftConfig: heldout split leaves an empty side");
  policy.validate();
}

SftResult sft_pretrain(const Vocabulary& vocab, const SftConfig& config) {
  config.validate();

  // Synthetic demonstrations: fluent but imperfect responses.
  std::vector<std::pair<TokenSequence, TokenSequence>> demos;
  demos.reserve(static_cast<size_t>(config.n_demos));
  for (int i = 0; i < config.n_demos; ++i) {
    TokenSequence prompt = vocab.sample_prompt(derive_seed(config.seed, kSftPromptStream, i));
    Rng rng(derive_seed(config.seed, kSftTokenStream, i));
    TokenSequence response;
    for (int t = 0; t < config.response_len; ++t) {
      const double u = rng.u01();
      const std::vector<TokenId>& pool =
          u < config.p_bad ? vocab.bad_ids()
                           : (u < config.p_bad + config.p_good ? vocab.good_ids()
                                                               : vocab.neutral_ids());
      response.ids.push_back(pool[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
    }
    response.ids.push_back(vocab.eos());
    demos.emplace_back(std::move(prompt), std::move(response));
  }

  // Deterministic shuffle, then the tail is held out (same split rule as RM
  // training).
  std::vector<int> order(demos.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng split_rng(derive_seed(config.seed, kSftSplitStream));
  split_rng.shuffle(order);
  const int n_heldout = static_cast<int>(std::llround(config.heldout_frac * demos.size()));
  const int n_train = static_cast<int>(demos.size()) - n_heldout;

  using Example = std::pair<const TokenSequence*, const TokenSequence*>;
  const auto example_at = [&](int idx) -> Example {
    const auto& [p, r] = demos[static_cast<size_t>(order[static_cast<size_t>(idx)])];
    return {&p, &r};
  };
  std::vector<Example> heldout;
  heldout.reserve(static_cast<size_t>(n_heldout));
  for (int i = n_train; i < static_cast<int>(demos.size()); ++i) heldout.push_back(example_at(i));

  SftResult result{Policy(vocab, config.policy), {}};
  AdamState adam;
  const AdamConfig adam_config{config.lr, 0.9, 0.999, 1e-8};
  std::vector<int> train_order(static_cast<size_t>(n_train));
  for (int i = 0; i < n_train; ++i) train_order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(config.seed, kSftEpochStream, epoch));
    epoch_rng.shuffle(train_order);
    double loss_sum = 0.0;
    int n_batches = 0;
    for (int begin = 0; begin < n_train; begin += config.batch_size) {
      const int end = std::min(begin + config.batch_size, n_train);
      std::vector<Example> batch;
      batch.reserve(static_cast<size_t>(end - begin));
      for (int i = begin; i < end; ++i)
        batch.push_back(example_at(train_order[static_cast<size_t>(i)]));
      Tape tape;
      const NodeId loss = nll_loss(tape, result.policy, batch);
      auto grads = tape.backward(loss);
      adam_step(result.policy.params(), grads, adam, adam_config);
      loss_sum += tape.scalar_value(loss);
      ++n_batches;
    }
    Tape eval_tape;
    const double heldout_nll = eval_tape.scalar_value(nll_loss(eval_tape, result.policy, heldout));
    result.log.push_back({epoch, loss_sum / n_batches, std::exp(heldout_nll)});
  }
  return result;
}

TokenSequence sample_response(const Policy& policy, const TokenSequence& prompt, Rng& rng) {
  // Identical draw sequence to a rollout: one categorical per step over
  // exp(log-softmax) weights.
  const TokenId eos = policy.vocab().eos();
  TokenSequence response;
  while (response.size() < kMaxResponseLen) {
    const std::vector<double> logp = policy.next_logprobs(prompt, response.ids);
    std::vector<double> probs(logp.size());
    for (size_t v = 0; v < logp.size(); ++v) probs[v] = std::exp(logp[v]);
    const TokenId a = static_cast<TokenId>(rng.categorical(probs));
    response.ids.push_back(a);
    if (a == eos) break;
  }
  return response;
}

WinRateReport win_rate(const Policy& policy, const Policy& reference,
                       const std::vector<TokenSequence>& prompts, uint64_t seed,
                       bool paired_seeds) {
  if (prompts.size() < 100)
    throw ConfigError("win_rate: need >= 100 prompts for a stable estimate, got " +
                      std::to_string(prompts.size()));
  const Vocabulary& vocab = policy.vocab();
  const OracleSpec oracle;

  WinRateReport report;
  report.outcomes.reserve(prompts.size());
  double sum = 0.0;
  for (size_t i = 0; i < prompts.size(); ++i) {
    const uint64_t policy_seed = derive_seed(seed, kEvalPolicyStream, static_cast<uint64_t>(i));
    Rng policy_rng(policy_seed);
    Rng reference_rng(paired_seeds
                          ? policy_seed
                          : derive_seed(seed, kEvalReferenceStream, static_cast<uint64_t>(i)));
    const TokenSequence ours = sample_response(policy, prompts[i], policy_rng);
    const TokenSequence theirs = sample_response(reference, prompts[i], reference_rng);
    const double r_ours = vocab.oracle_sequence_reward(ours, oracle);
    const double r_theirs = vocab.oracle_sequence_reward(theirs, oracle);
    const double outcome = r_ours > r_theirs ? 1.0 : (r_ours < r_theirs ? 0.0 : 0.5);
    report.outcomes.push_back(outcome);
    sum += outcome;
  }
  const int n = static_cast<int>(prompts.size());
  report.n_comparisons = n;
  report.win_rate = sum / n;
  double ssq = 0.0;
  for (const double o : report.outcomes) ssq += (o - report.win_rate) * (o - report.win_rate);
  report.std_error = n > 1 ? std::sqrt(ssq / (n - 1)) / std::sqrt(static_cast<double>(n)) : 0.0;
  return report;
}

void ExperimentConfig::validate() const {
  if (dataset_size < 10) throw ConfigError("ExperimentConfig: dataset_size must be >= 10");
  if (eval_prompts < 100) throw ConfigError("ExperimentConfig: eval_prompts must be >= 100");
  if (seeds.empty()) throw ConfigError("ExperimentConfig: seeds must be non-empty");
  std::vector<uint64_t> sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("ExperimentConfig: duplicate seeds");
  if (out_dir.empty()) throw ConfigError("ExperimentConfig: out_dir must be non-empty");
  if (rm.loss == RmConfig::Loss::sequence)
    throw ConfigError(
        "ExperimentConfig: rm loss is the token arm's objective (full or approx); "
        "the sequence arm derives its own");
  RmConfig rm_check = rm;
  rm_check.head = RmConfig::Head::token_level;
  rm_check.validate();
  ppo.validate();
  sft.validate();
}

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty set");
  std::sort(values.begin(), values.end());
  const size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

std::vector<TokenSequence> sample_eval_prompts(const Vocabulary& vocab, int n, uint64_t seed) {
  if (n < 1) throw ConfigError("sample_eval_prompts: n must be >= 1");
  std::vector<TokenSequence> prompts;
  prompts.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    prompts.push_back(vocab.sample_prompt(derive_seed(seed, kEvalPromptStream, i)));
  return prompts;
}

namespace {

RmConfig derive_rm_config(const ExperimentConfig& config, RmConfig::Head head, uint64_t seed) {
  RmConfig rm = config.rm;
  rm.head = head;
  rm.loss = head == RmConfig::Head::token_level ? config.rm.loss : RmConfig::Loss::sequence;
  rm.seed = seed;
  return rm;
}

std::string prompts_bytes(const std::vector<TokenSequence>& prompts) {
  std::ostringstream out;
  for (const TokenSequence& p : prompts) {
    for (const TokenId id : p.ids) out << id << ',';
    out << ';';
  }
  return out.str();
}

struct MedianRow {
  double acc_token, acc_sequence;
  double iters_token, iters_sequence;
  double win_token, win_sequence;
};

MedianRow medians_of(const std::vector<ArmSeedResult>& rows) {
  const auto column = [&](auto field) {
    std::vector<double> values;
    values.reserve(rows.size());
    for (const ArmSeedResult& r : rows) values.push_back(static_cast<double>(field(r)));
    return median(std::move(values));
  };
  return {column([](const ArmSeedResult& r) { return r.acc_token; }),
          column([](const ArmSeedResult& r) { return r.acc_sequence; }),
          column([](const ArmSeedResult& r) { return r.iters_token; }),
          column([](const ArmSeedResult& r) { return r.iters_sequence; }),
          column([](const ArmSeedResult& r) { return r.win_token; }),
          column([](const ArmSeedResult& r) { return r.win_sequence; })};
}

// Rewritten after every completed seed so partial results persist.
void write_reports(const std::string& dir, const std::vector<ArmSeedResult>& rows) {
  const auto open = [](const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write report: " + path);
    return out;
  };
  std::ofstream t1 = open(dir + "/t1.csv");
  t1 << "seed,win_rate_token,se_token,win_rate_sequence,se_sequence\n";
  std::ofstream t2 = open(dir + "/t2.csv");
  t2 << "seed,heldout_accuracy_token,heldout_accuracy_sequence,gap\n";
  std::ofstream t3 = open(dir + "/t3.csv");
  t3 << "seed,iters_to_target_token,reached_token,iters_to_target_sequence,reached_sequence\n";
  for (const ArmSeedResult& r : rows) {
    t1 << r.seed << ',' << fmt17(r.win_token) << ',' << fmt17(r.win_se_token) << ','
       << fmt17(r.win_sequence) << ',' << fmt17(r.win_se_sequence) << '\n';
    t2 << r.seed << ',' << fmt17(r.acc_token) << ',' << fmt17(r.acc_sequence) << ','
       << fmt17(r.acc_token - r.acc_sequence) << '\n';
    t3 << r.seed << ',' << r.iters_token << ',' << (r.reached_token ? 1 : 0) << ','
       << r.iters_sequence << ',' << (r.reached_sequence ? 1 : 0) << '\n';
  }
  if (!rows.empty()) {
    const MedianRow m = medians_of(rows);
    t1 << "median," << fmt17(m.win_token) << ",," << fmt17(m.win_sequence) << ",\n";
    t2 << "median," << fmt17(m.acc_token) << ',' << fmt17(m.acc_sequence) << ','
       << fmt17(m.acc_token - m.acc_sequence) << '\n';
    t3 << "median," << fmt17(m.iters_token) << ",," << fmt17(m.iters_sequence) << ",\n";
  }
}

void write_sft_log_csv(const std::string& path, const std::vector<SftEpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write training log: " + path);
  out << "epoch,nll,heldout_perplexity\n";
  for (const SftEpochLog& row : log)
    out << row.epoch << ',' << fmt17(row.nll) << ',' << fmt17(row.heldout_perplexity) << '\n';
}

}  // namespace

ExperimentReport run_table_experiments(const Vocabulary& vocab, const ExperimentConfig& config) {
  config.validate();
  namespace fs = std::filesystem;
  const std::string reports_dir = config.out_dir + "/reports";
  std::error_code ec;
  fs::create_directories(reports_dir, ec);
  if (ec) throw ConfigError("cannot create run directory: " + config.out_dir);

  using Clock = std::chrono::steady_clock;
  const auto seconds_since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };

  ExperimentReport report;

  // --- Shared inputs, built once. -----------------------------------------
  auto t0 = Clock::now();
  const EditorBackend backend;  // synthetic
  DatasetStats stats;
  const std::vector<EditPair> dataset =
      build_dataset(vocab, config.dataset_size, backend, config.dataset_seed, &stats, config.data);
  const std::string dataset_path = config.out_dir + "/dataset.jsonl";
  write_dataset_jsonl(dataset_path, vocab, dataset);
  report.dataset_hash = hex64(fnv1a64_file(dataset_path));
  report.rm_seconds += seconds_since(t0);

  t0 = Clock::now();
  const SftResult sft = sft_pretrain(vocab, config.sft);
  const std::string sft_path = config.out_dir + "/sft.ckpt";
  save_checkpoint(sft_path, sft.policy.params());
  write_sft_log_csv(config.out_dir + "/sft_log.csv", sft.log);
  report.sft_hash = hex64(fnv1a64_file(sft_path));
  report.ppo_seconds += seconds_since(t0);

  const std::vector<TokenSequence> prompts =
      sample_eval_prompts(vocab, config.eval_prompts, config.eval_seed);
  const std::string prompt_bytes = prompts_bytes(prompts);
  report.prompts_hash = hex64(fnv1a64(prompt_bytes.data(), prompt_bytes.size()));

  write_experiment_config(config.out_dir + "/experiment.cfg", config);
  {
    std::ofstream prov(config.out_dir + "/provenance.txt");
    prov << "dataset_hash = " << report.dataset_hash << "\n"
         << "sft_hash = " << report.sft_hash << "\n"
         << "prompts_hash = " << report.prompts_hash << "\n";
  }

  // Fair-comparison invariant: every arm of every seed must see bit-identical
  // shared inputs. Checked against the frozen hashes before each arm pair.
  const auto check_invariant = [&]() {
    if (hex64(fnv1a64_file(dataset_path)) != report.dataset_hash ||
        hex64(fnv1a64_file(sft_path)) != report.sft_hash ||
        hex64(fnv1a64(prompt_bytes.data(), prompt_bytes.size())) != report.prompts_hash)
      throw ConfigError("fair-comparison invariant violated: shared inputs changed mid-run");
  };

  // --- Per-seed arms. ------------------------------------------------------
  for (const uint64_t seed : config.seeds) {
    check_invariant();
    const std::string seed_dir = config.out_dir + "/seed" + std::to_string(seed);
    fs::create_directories(seed_dir, ec);
    if (ec) throw ConfigError("cannot create run directory: " + seed_dir);
    ArmSeedResult row;
    row.seed = seed;

    t0 = Clock::now();
    const TrainedRm rm_token =
        train_rm(vocab, dataset, derive_rm_config(config, RmConfig::Head::token_level, seed));
    const TrainedRm rm_sequence =
        train_rm(vocab, dataset, derive_rm_config(config, RmConfig::Head::sequence_level, seed));
    row.acc_token = rm_accuracy(rm_token.model, rm_token.heldout);
    row.acc_sequence = rm_accuracy(rm_sequence.model, rm_sequence.heldout);
    save_checkpoint(seed_dir + "/rm_token.ckpt", rm_token.model.params());
    save_checkpoint(seed_dir + "/rm_sequence.ckpt", rm_sequence.model.params());
    write_rm_log_csv(seed_dir + "/rm_token_log.csv", rm_token.log);
    write_rm_log_csv(seed_dir + "/rm_sequence_log.csv", rm_sequence.log);
    report.rm_seconds += seconds_since(t0);

    t0 = Clock::now();
    PPOConfig ppo = config.ppo;
    ppo.seed = seed;
    ppo.reward_scheme = PPOConfig::RewardScheme::token_level;
    const PpoRunResult run_token = train_ppo(sft.policy, rm_token.model, ppo);
    ppo.reward_scheme = PPOConfig::RewardScheme::sequence_terminal;
    const PpoRunResult run_sequence = train_ppo(sft.policy, rm_sequence.model, ppo);
    row.iters_token = run_token.iters_run;
    row.iters_sequence = run_sequence.iters_run;
    row.reached_token = run_token.reached_target;
    row.reached_sequence = run_sequence.reached_target;
    save_checkpoint(seed_dir + "/policy_token.ckpt", run_token.policy.params());
    save_checkpoint(seed_dir + "/policy_sequence.ckpt", run_sequence.policy.params());
    write_ppo_log_csv(seed_dir + "/ppo_token_log.csv", run_token.log);
    write_ppo_log_csv(seed_dir + "/ppo_sequence_log.csv", run_sequence.log);
    report.ppo_seconds += seconds_since(t0);

    t0 = Clock::now();
    const WinRateReport win_token = win_rate(run_token.policy, sft.policy, prompts,
                                             config.eval_seed);
    const WinRateReport win_sequence = win_rate(run_sequence.policy, sft.policy, prompts,
                                                config.eval_seed);
    row.win_token = win_token.win_rate;
    row.win_sequence = win_sequence.win_rate;
    row.win_se_token = win_token.std_error;
    row.win_se_sequence = win_sequence.std_error;
    report.eval_seconds += seconds_since(t0);

    report.rows.push_back(row);
    write_reports(reports_dir, report.rows);
  }
  return report;
}

// --- Config file ------------------------------------------------------------

namespace {

int parse_int(const std::string& key, const std::string& value) {
  size_t used = 0;
  long long parsed = 0;
  try {
    parsed = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an integer: '" + value + "'");
  }
  if (used != value.size() || parsed < INT_MIN || parsed > INT_MAX)
    throw ConfigError("config key " + key + ": not an integer: '" + value + "'");
  return static_cast<int>(parsed);
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  size_t used = 0;
  unsigned long long parsed = 0;
  try {
    parsed = std::stoull(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an unsigned integer: '" + value + "'");
  }
  if (used != value.size())
    throw ConfigError("config key " + key + ": not an unsigned integer: '" + value + "'");
  return parsed;
}

double parse_double(const std::string& key, const std::string& value) {
  size_t used = 0;
  double parsed = 0.0;
  try {
    parsed = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a number: '" + value + "'");
  }
  if (used != value.size())
    throw ConfigError("config key " + key + ": not a number: '" + value + "'");
  return parsed;
}

std::string trim(const std::string& s) {
  const size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  ExperimentConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "dataset_size") config.dataset_size = parse_int(key, value);
    else if (key == "dataset_seed") config.dataset_seed = parse_u64(key, value);
    else if (key == "data_p_bad") config.data.p_bad = parse_double(key, value);
    else if (key == "data_response_len") config.data.response_len = parse_int(key, value);
    else if (key == "data_max_change_ratio") config.data.max_change_ratio = parse_double(key, value);
    else if (key == "rm_loss") {
      if (value == "approx") config.rm.loss = RmConfig::Loss::approx;
      else if (value == "full") config.rm.loss = RmConfig::Loss::full;
      else throw ConfigError("config key rm_loss: expected approx|full, got '" + value + "'");
    } else if (key == "rm_u0_mode") {
      if (value == "edited_side") config.rm.u0_mode = RmConfig::U0Mode::edited_side;
      else if (value == "average_both") config.rm.u0_mode = RmConfig::U0Mode::average_both;
      else
        throw ConfigError("config key rm_u0_mode: expected edited_side|average_both, got '" +
                          value + "'");
    } else if (key == "rm_d_emb") config.rm.d_emb = parse_int(key, value);
    else if (key == "rm_d_hidden") config.rm.d_hidden = parse_int(key, value);
    else if (key == "rm_window") config.rm.window = parse_int(key, value);
    else if (key == "rm_epochs") config.rm.epochs = parse_int(key, value);
    else if (key == "rm_batch_size") config.rm.batch_size = parse_int(key, value);
    else if (key == "rm_lr") config.rm.lr = parse_double(key, value);
    else if (key == "rm_heldout_frac") config.rm.heldout_frac = parse_double(key, value);
    else if (key == "ppo_gamma") config.ppo.gamma = parse_double(key, value);
    else if (key == "ppo_lambda") config.ppo.lambda = parse_double(key, value);
    else if (key == "ppo_clip_eps") config.ppo.clip_eps = parse_double(key, value);
    else if (key == "ppo_kl_coef") config.ppo.kl_coef = parse_double(key, value);
    else if (key == "ppo_epochs") config.ppo.epochs = parse_int(key, value);
    else if (key == "ppo_minibatch_size") config.ppo.minibatch_size = parse_int(key, value);
    else if (key == "ppo_lr") config.ppo.lr = parse_double(key, value);
    else if (key == "ppo_max_grad_norm") config.ppo.max_grad_norm = parse_double(key, value);
    else if (key == "ppo_rollout_batch") config.ppo.rollout_batch = parse_int(key, value);
    else if (key == "ppo_max_iters") config.ppo.max_iters = parse_int(key, value);
    else if (key == "ppo_oracle_target") config.ppo.oracle_target = parse_double(key, value);
    else if (key == "sft_n_demos") config.sft.n_demos = parse_int(key, value);
    else if (key == "sft_response_len") config.sft.response_len = parse_int(key, value);
    else if (key == "sft_p_bad") config.sft.p_bad = parse_double(key, value);
    else if (key == "sft_p_good") config.sft.p_good = parse_double(key, value);
    else if (key == "sft_epochs") config.sft.epochs = parse_int(key, value);
    else if (key == "sft_batch_size") config.sft.batch_size = parse_int(key, value);
    else if (key == "sft_lr") config.sft.lr = parse_double(key, value);
    else if (key == "sft_heldout_frac") config.sft.heldout_frac = parse_double(key, value);
    else if (key == "sft_seed") config.sft.seed = parse_u64(key, value);
    else if (key == "eval_prompts") config.eval_prompts = parse_int(key, value);
    else if (key == "eval_seed") config.eval_seed = parse_u64(key, value);
    else if (key == "seeds") {
      config.seeds.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) config.seeds.push_back(parse_u64(key, item));
      }
      if (config.seeds.empty()) throw ConfigError("config key seeds: empty list");
    } else if (key == "out_dir") {
      if (value.empty()) throw ConfigError("config key out_dir: empty value");
      config.out_dir = value;
    } else {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  return config;
}

void write_experiment_config(const std::string& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path);
  out << render_experiment_config(config);
}

std::string render_experiment_config(const ExperimentConfig& config) {
  std::ostringstream out;
  out << "# grainrl experiment configuration (key = value; '#' starts a comment)\n";
  out << "dataset_size = " << config.dataset_size << "\n";
  out << "dataset_seed = " << config.dataset_seed << "\n";
  out << "data_p_bad = " << fmt_shortest(config.data.p_bad) << "\n";
  out << "data_response_len = " << config.data.response_len << "\n";
  out << "data_max_change_ratio = " << fmt_shortest(config.data.max_change_ratio) << "\n";
  out << "\n# Reward model (token arm trains this objective; the sequence arm derives\n"
         "# the sequence head/loss from the same base).\n";
  out << "rm_loss = " << (config.rm.loss == RmConfig::Loss::full ? "full" : "approx") << "\n";
  out << "rm_u0_mode = "
      << (config.rm.u0_mode == RmConfig::U0Mode::average_both ? "average_both" : "edited_side")
      << "\n";
  out << "rm_d_emb = " << config.rm.d_emb << "\n";
  out << "rm_d_hidden = " << config.rm.d_hidden << "\n";
  out << "rm_window = " << config.rm.window << "\n";
  out << "rm_epochs = " << config.rm.epochs << "\n";
  out << "rm_batch_size = " << config.rm.batch_size << "\n";
  out << "rm_lr = " << fmt_shortest(config.rm.lr) << "\n";
  out << "rm_heldout_frac = " << fmt_shortest(config.rm.heldout_frac) << "\n";
  out << "\n# PPO (shared schedule; each arm only switches the reward scheme).\n";
  out << "ppo_gamma = " << fmt_shortest(config.ppo.gamma) << "\n";
  out << "ppo_lambda = " << fmt_shortest(config.ppo.lambda) << "\n";
  out << "ppo_clip_eps = " << fmt_shortest(config.ppo.clip_eps) << "\n";
  out << "ppo_kl_coef = " << fmt_shortest(config.ppo.kl_coef) << "\n";
  out << "ppo_epochs = " << config.ppo.epochs << "\n";
  out << "ppo_minibatch_size = " << config.ppo.minibatch_size << "\n";
  out << "ppo_lr = " << fmt_shortest(config.ppo.lr) << "\n";
  out << "ppo_max_grad_norm = " << fmt_shortest(config.ppo.max_grad_norm) << "\n";
  out << "ppo_rollout_batch = " << config.ppo.rollout_batch << "\n";
  out << "ppo_max_iters = " << config.ppo.max_iters << "\n";
  out << "ppo_oracle_target = " << fmt_shortest(config.ppo.oracle_target) << "\n";
  out << "\n# SFT stand-in.\n";
  out << "sft_n_demos = " << config.sft.n_demos << "\n";
  out << "sft_response_len = " << config.sft.response_len << "\n";
  out << "sft_p_bad = " << fmt_shortest(config.sft.p_bad) << "\n";
  out << "sft_p_good = " << fmt_shortest(config.sft.p_good) << "\n";
  out << "sft_epochs = " << config.sft.epochs << "\n";
  out << "sft_batch_size = " << config.sft.batch_size << "\n";
  out << "sft_lr = " << fmt_shortest(config.sft.lr) << "\n";
  out << "sft_heldout_frac = " << fmt_shortest(config.sft.heldout_frac) << "\n";
  out << "sft_seed = " << config.sft.seed << "\n";
  out << "\n# Evaluation and run layout.\n";
  out << "eval_prompts = " << config.eval_prompts << "\n";
  out << "eval_seed = " << config.eval_seed << "\n";
  out << "seeds = ";
  for (size_t i = 0; i < config.seeds.size(); ++i)
    out << (i ? "," : "") << config.seeds[i];
  out << "\n";
  out << "out_dir = " << config.out_dir << "\n";
  return out.str();
}

}  // namespace grainrl

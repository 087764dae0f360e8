// Acceptance gate: nine go/no-go checks, one [PASS]/[FAIL] line each, exit 0
// only when every criterion holds. The cheap criteria (1-4, 8) verify exact
// properties the unit tests also probe, but at release strength: bitwise
// identities, finite-difference gradients, exhaustive enumeration. Criteria
// 5-7 evaluate the three report tables on one shared five-seed experiment —
// the same artifact `grainrl report` produces — against its per-phase time
// budgets. Criterion 9 drives the actual CLI binary through the smoke
// pipeline twice and compares artifact hashes.
//
// Run it directly or via ctest; it needs no arguments. GRAINRL_CLI_PATH must
// point at the built `grainrl` executable (CMake wires this up).

#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "brute_force.hpp"
#include "grainrl/corpus.hpp"
#include "grainrl/editdiff.hpp"
#include "grainrl/errors.hpp"
#include "grainrl/harness.hpp"
#include "grainrl/ppo.hpp"
#include "grainrl/reward_model.hpp"
#include "grainrl/tensor.hpp"

namespace fs = std::filesystem;
using namespace grainrl;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::standard();
  return v;
}

#if defined(__GNUC__)
__attribute__((format(printf, 1, 2)))
#endif
std::string strf(const char* fmt, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  bool ok = false;
  std::string detail;
};

TokenSequence response_of(std::vector<TokenId> ids) {
  TokenSequence s;
  s.ids = std::move(ids);
  s.role = Role::response;
  return s;
}

EditPair make_edit_pair(const TokenSequence& prompt, std::vector<TokenId> orig,
                        std::vector<TokenId> edit) {
  EditPair p;
  p.prompt = prompt;
  p.original = response_of(std::move(orig));
  p.edited = response_of(std::move(edit));
  p.align = align(p.original, p.edited);
  return p;
}

bool same_bits(double a, double b) {
  return std::bit_cast<uint64_t>(a) == std::bit_cast<uint64_t>(b);
}

// ---------------------------------------------------------------------------
// Criterion 1: on equal-length pairs the full loss and the approximation are
// the same function — the shared-context coefficient (1/Ti - 1/Tj) is exactly
// zero — so their values (and gradients) must agree bitwise, not just closely.

Outcome equal_length_identity() {
  std::vector<TokenId> pool = vocab().good_ids();
  pool.insert(pool.end(), vocab().bad_ids().begin(), vocab().bad_ids().end());
  pool.insert(pool.end(), vocab().neutral_ids().begin(), vocab().neutral_ids().end());

  std::vector<RewardModel> models;
  for (uint64_t s = 0; s < 10; ++s) {
    RmConfig config;
    config.seed = 1000 + s;
    models.emplace_back(vocab(), config);
  }

  Rng rng(0xACC1);
  std::vector<EditPair> all;
  all.reserve(1000);
  int n_equal = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const TokenSequence prompt = vocab().sample_prompt(derive_seed(0xACC1, 7, trial));
    const int t_len = rng.uniform_int(1, 12);
    std::vector<TokenId> orig(static_cast<size_t>(t_len));
    for (TokenId& id : orig) id = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    std::vector<TokenId> edit = orig;
    const int flips = rng.uniform_int(1, t_len);
    for (int f = 0; f < flips; ++f) {
      const size_t at = static_cast<size_t>(rng.uniform_int(0, t_len - 1));
      TokenId repl = orig[at];
      while (repl == orig[at])
        repl = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
      edit[at] = repl;
    }
    EditPair pair = make_edit_pair(prompt, std::move(orig), std::move(edit));

    const RewardModel& model = models[static_cast<size_t>(trial % 10)];
    const std::vector<EditPair> one{pair};
    Tape ta;
    const double la = ta.scalar_value(model.batch_loss(ta, one, RmConfig::Loss::approx));
    Tape tf;
    const double lf = tf.scalar_value(model.batch_loss(tf, one, RmConfig::Loss::full));
    if (same_bits(la, lf)) ++n_equal;
    all.push_back(std::move(pair));
  }
  if (n_equal != 1000)
    return {false, strf("only %d/1000 equal-length pairs had loss_full == loss_approx bitwise",
                        n_equal)};

  // The whole batch at once, gradients included.
  Tape ta;
  const NodeId na = models[0].batch_loss(ta, all, RmConfig::Loss::approx);
  const auto ga = ta.backward(na);
  Tape tf;
  const NodeId nf = models[0].batch_loss(tf, all, RmConfig::Loss::full);
  const auto gf = tf.backward(nf);
  if (!same_bits(ta.scalar_value(na), tf.scalar_value(nf)))
    return {false, "batch losses differ bitwise"};
  for (const auto& [name, grad] : ga) {
    const auto it = gf.find(name);
    if (it == gf.end() || it->second.data.size() != grad.data.size() ||
        std::memcmp(it->second.data.data(), grad.data.data(),
                    grad.data.size() * sizeof(double)) != 0)
      return {false, "batch gradients differ for param " + name};
  }
  return {true, "1000/1000 equal-length pairs: loss_full == loss_approx bitwise; "
                "whole-batch loss and gradients bitwise too"};
}

// ---------------------------------------------------------------------------
// Criterion 2: every trainable objective — both preference losses, the
// sequence baseline, and the clipped PPO surrogate — passes a central
// finite-difference check on 64 random coordinates for three seeds each.

Outcome gradient_checks() {
  const TokenId g0 = vocab().good_ids()[0], g1 = vocab().good_ids()[1];
  const TokenId b0 = vocab().bad_ids()[0], b1 = vocab().bad_ids()[1];
  const TokenId n0 = vocab().neutral_ids()[0], n1 = vocab().neutral_ids()[1];
  const TokenId n2 = vocab().neutral_ids()[2];

  // Mixed lengths so the full loss's shared-context term is live.
  std::vector<EditPair> pairs;
  pairs.push_back(make_edit_pair(vocab().sample_prompt(1), {b0, n0, n1}, {g0, n0, n1}));
  pairs.push_back(make_edit_pair(vocab().sample_prompt(2), {b0, n0}, {g0, n0, n2}));
  pairs.push_back(make_edit_pair(vocab().sample_prompt(3), {n0, b1, n1, b0}, {n0, g1, n1}));
  pairs.push_back(make_edit_pair(vocab().sample_prompt(4), {b0}, {g0, g1}));
  pairs.push_back(make_edit_pair(vocab().sample_prompt(5), {n0, n1, b0, n2}, {n0, n1, g0, n2, g1}));
  pairs.push_back(make_edit_pair(vocab().sample_prompt(6), {b1, b0, n0}, {g1, n0}));

  int n_passed = 0, n_run = 0;
  double worst_err = 0.0;
  std::string worst_what;
  std::string failures;
  const auto record = [&](const char* label, uint64_t seed, const GradCheckReport& report) {
    ++n_run;
    if (report.passed && report.n_checked == 64) ++n_passed;
    else failures += strf(" [%s seed %llu: rel err %.2e at %s[%d]]", label,
                          static_cast<unsigned long long>(seed), report.max_rel_err,
                          report.worst_param.c_str(), report.worst_index);
    if (report.max_rel_err > worst_err) {
      worst_err = report.max_rel_err;
      worst_what = strf("%s seed %llu", label, static_cast<unsigned long long>(seed));
    }
  };

  const auto check_rm = [&](const char* label, RmConfig::Head head, RmConfig::Loss which,
                            uint64_t seed) {
    RmConfig config;
    config.d_emb = 4;
    config.d_hidden = 6;
    config.window = 2;
    config.head = head;
    config.loss = which;
    config.seed = 100 + seed;
    RewardModel model(vocab(), config);
    const LossFn fn = [&](const ParamStore&, std::unordered_map<std::string, Mat>* grads) {
      Tape tape;
      const NodeId loss = model.batch_loss(tape, pairs, which);
      if (grads != nullptr) *grads = tape.backward(loss);
      return tape.scalar_value(loss);
    };
    record(label, seed, grad_check(fn, model.params(), 1e-4, seed, 64));
  };

  // Token-head RM whose rewards equal the oracle, so PPO rollouts see a
  // meaningful reward signal (same probe the unit tests verify bitwise).
  RmConfig probe_config;
  RewardModel probe(vocab(), probe_config);
  {
    ParamStore& ps = probe.params();
    for (const std::string& name : ps.names()) {
      if (name == "head_kind") continue;
      for (double& v : ps.get(name).data) v = 0.0;
    }
    const OracleSpec spec;
    Mat& emb = ps.get("emb");
    for (TokenId a = 0; a < vocab().size(); ++a)
      emb.at(a, 0) = 100.0 * vocab().oracle_token_reward(a, spec);
    ps.get("w1").at((probe_config.window + 1) * probe_config.d_emb, 0) = 1.0;
    ps.get("w2").at(0, 0) = 100.0;
  }

  const auto check_ppo = [&](uint64_t seed) {
    PolicyConfig small;
    small.d_emb = 4;
    small.d_hidden = 6;
    small.window = 2;
    small.seed = 200 + seed;
    const Policy behavior(vocab(), small);
    small.seed = 300 + seed;  // off-policy: ratios spread, the clip is active
    Policy policy(vocab(), small);
    PPOConfig config;
    std::vector<Trajectory> batch;
    for (int k = 0; k < 4; ++k) {
      const TokenSequence prompt = vocab().sample_prompt(derive_seed(900 + seed, 1, static_cast<uint64_t>(k)));
      Rng rng(derive_seed(900 + seed, 2, static_cast<uint64_t>(k)));
      batch.push_back(rollout(behavior, behavior, probe, prompt, config, rng));
    }
    const LossFn fn = [&](const ParamStore&, std::unordered_map<std::string, Mat>* grads) {
      Tape tape;
      const NodeId loss = ppo_loss(tape, policy, batch, config);
      if (grads != nullptr) *grads = tape.backward(loss);
      return tape.scalar_value(loss);
    };
    record("ppo objective", seed, grad_check(fn, policy.params(), 1e-4, seed, 64));
  };

  for (uint64_t seed : {1, 2, 3}) {
    check_rm("loss_approx", RmConfig::Head::token_level, RmConfig::Loss::approx, seed);
    check_rm("loss_full", RmConfig::Head::token_level, RmConfig::Loss::full, seed);
    check_rm("loss_sequence", RmConfig::Head::sequence_level, RmConfig::Loss::sequence, seed);
    check_ppo(seed);
  }

  if (n_passed != n_run)
    return {false, strf("%d/%d gradient checks failed:%s", n_run - n_passed, n_run,
                        failures.c_str())};
  return {true, strf("12/12 checks passed ({loss_approx, loss_full, loss_sequence, "
                     "ppo objective} x 3 seeds, 64 coords each); max rel err %.1e (%s), "
                     "tolerance 1e-4",
                     worst_err, worst_what.c_str())};
}

// ---------------------------------------------------------------------------
// Criterion 3: the backward GAE recursion equals the explicit (gamma*lambda)-
// weighted double sum, and lambda = 0 collapses advantages to the one-step
// TD errors exactly.

Outcome gae_equivalence() {
  const double grid[4] = {0.0, 0.5, 0.95, 1.0};
  Rng rng(0x6AE);
  double worst = 0.0;
  int lambda0_inexact = 0, returns_inexact = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int t_len = rng.uniform_int(1, 10);
    std::vector<double> rewards(static_cast<size_t>(t_len)), values(static_cast<size_t>(t_len));
    for (double& r : rewards) r = rng.normal();
    for (double& v : values) v = rng.normal();
    // Both the truncation convention (bootstrap 0) and a free tail value.
    const double drawn = rng.normal();
    const double bootstrap = (trial % 2 == 0) ? 0.0 : drawn;

    for (double gamma : grid) {
      if (gamma == 0.0) continue;  // gamma must be in (0, 1]
      for (double lambda : grid) {
        const GaeResult got = gae(rewards, values, bootstrap, gamma, lambda);
        std::vector<double> delta(static_cast<size_t>(t_len));
        for (int t = 0; t < t_len; ++t) {
          const double next_value = t + 1 < t_len ? values[static_cast<size_t>(t + 1)] : bootstrap;
          delta[static_cast<size_t>(t)] =
              rewards[static_cast<size_t>(t)] + gamma * next_value - values[static_cast<size_t>(t)];
        }
        for (int t = 0; t < t_len; ++t) {
          double sum = 0.0, weight = 1.0;
          for (int l = 0; t + l < t_len; ++l) {
            sum += weight * delta[static_cast<size_t>(t + l)];
            weight *= gamma * lambda;
          }
          worst = std::max(worst, std::abs(got.advantages[static_cast<size_t>(t)] - sum));
          if (lambda == 0.0 &&
              !same_bits(got.advantages[static_cast<size_t>(t)], delta[static_cast<size_t>(t)]))
            ++lambda0_inexact;
          if (!same_bits(got.returns[static_cast<size_t>(t)],
                         got.advantages[static_cast<size_t>(t)] + values[static_cast<size_t>(t)]))
            ++returns_inexact;
        }
      }
    }
  }
  if (worst > 1e-12 || lambda0_inexact > 0 || returns_inexact > 0)
    return {false, strf("max |recursive - double sum| %.2e (limit 1e-12); %d lambda=0 "
                        "mismatches; %d returns mismatches",
                        worst, lambda0_inexact, returns_inexact)};
  return {true, strf("200 trajectories x 12 (gamma,lambda) grid points: max |recursive - "
                     "double sum| %.1e <= 1e-12; lambda=0 gives A_t == delta_t bitwise",
                     worst)};
}

// ---------------------------------------------------------------------------
// Criterion 4: preference probabilities are symmetric, sigma(0) is exactly
// 0.5, and the trajectory reward the model reports is exactly the mean of its
// token rewards (Eq. 1).

Outcome bt_identities() {
  RmConfig config;
  config.seed = 0xB7;
  const RewardModel model(vocab(), config);

  std::vector<TokenId> pool = vocab().good_ids();
  pool.insert(pool.end(), vocab().bad_ids().begin(), vocab().bad_ids().end());
  pool.insert(pool.end(), vocab().neutral_ids().begin(), vocab().neutral_ids().end());

  Rng rng(0xB7B7);
  std::vector<RewardTrace> traces;
  traces.reserve(1000);
  int mean_inexact = 0, sigma0_inexact = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const TokenSequence prompt = vocab().sample_prompt(derive_seed(0xB7B7, 3, trial));
    std::vector<TokenId> ids(static_cast<size_t>(rng.uniform_int(1, 12)));
    for (TokenId& id : ids) id = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    const RewardTrace trace = model.token_rewards(prompt, response_of(std::move(ids)));

    double sum = 0.0;
    for (double r : trace.rewards) sum += r;
    if (!same_bits(trace.trajectory_reward, sum / static_cast<double>(trace.rewards.size())))
      ++mean_inexact;
    if (preference_prob(trace, trace) != 0.5) ++sigma0_inexact;
    traces.push_back(trace);
  }

  double worst_sym = 0.0;
  for (size_t i = 0; i < traces.size(); ++i) {
    const RewardTrace& a = traces[i];
    const RewardTrace& b = traces[(i + 37) % traces.size()];
    worst_sym = std::max(worst_sym,
                         std::abs(preference_prob(a, b) + preference_prob(b, a) - 1.0));
  }

  if (mean_inexact > 0 || sigma0_inexact > 0 || worst_sym > 1e-12)
    return {false, strf("%d mean mismatches, %d sigma(0) mismatches, symmetry residual %.2e "
                        "(limit 1e-12)",
                        mean_inexact, sigma0_inexact, worst_sym)};
  return {true, strf("1000/1000 traces: trajectory reward == mean(token rewards) bitwise, "
                     "sigma(0) == 0.5 exactly; max |p_ij + p_ji - 1| = %.1e <= 1e-12",
                     worst_sym)};
}

// ---------------------------------------------------------------------------
// Criteria 5-7 read one shared five-seed experiment (defaults: 2000 pairs,
// 500 eval prompts), judged against the per-phase wall-time budgets.

std::vector<double> column(const std::vector<ArmSeedResult>& rows,
                           double (*get)(const ArmSeedResult&)) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const ArmSeedResult& r : rows) out.push_back(get(r));
  return out;
}

Outcome rm_accuracy_gap(const ExperimentReport& report) {
  const double med_tok = median(column(report.rows, [](const ArmSeedResult& r) { return r.acc_token; }));
  const double med_seq = median(column(report.rows, [](const ArmSeedResult& r) { return r.acc_sequence; }));
  const double gap = med_tok - med_seq;
  const bool ok = med_tok >= 0.90 && gap >= 0.10 && report.rm_seconds < 180.0;
  return {ok, strf("median held-out accuracy over %d seeds: token %.3f (needs >= 0.90) vs "
                   "sequence %.3f, gap %.3f (needs >= 0.10); rm phase %.0fs (budget 180s)",
                   static_cast<int>(report.rows.size()), med_tok, med_seq, gap,
                   report.rm_seconds)};
}

Outcome ppo_iteration_gap(const ExperimentReport& report) {
  int unreached_tok = 0, unreached_seq = 0;
  for (const ArmSeedResult& r : report.rows) {
    unreached_tok += r.reached_token ? 0 : 1;
    unreached_seq += r.reached_sequence ? 0 : 1;
  }
  const double med_tok = median(column(report.rows, [](const ArmSeedResult& r) {
    return static_cast<double>(r.iters_token);
  }));
  const double med_seq = median(column(report.rows, [](const ArmSeedResult& r) {
    return static_cast<double>(r.iters_sequence);
  }));
  // An unreached sequence arm reports max_iters, which only helps it lose the
  // strict comparison honestly; an unreached token arm fails the criterion.
  const bool ok = unreached_tok == 0 && med_tok < med_seq && report.ppo_seconds < 600.0;
  std::string reach;
  if (unreached_tok + unreached_seq > 0)
    reach = strf("; %d token / %d sequence runs hit max_iters", unreached_tok, unreached_seq);
  return {ok, strf("median iterations to mean oracle reward >= 0.5: token %g < sequence %g "
                   "(strict)%s; ppo phase %.0fs (budget 600s)",
                   med_tok, med_seq, reach.c_str(), report.ppo_seconds)};
}

Outcome win_rate_order(const ExperimentReport& report, int eval_prompts) {
  const double med_tok = median(column(report.rows, [](const ArmSeedResult& r) { return r.win_token; }));
  const double med_seq = median(column(report.rows, [](const ArmSeedResult& r) { return r.win_sequence; }));
  const bool ok = eval_prompts >= 500 && med_tok >= med_seq && med_tok > 0.5 && med_seq > 0.5 &&
                  report.eval_seconds < 180.0;
  return {ok, strf("median win rate vs the shared SFT reference (%d prompts/seed): token %.3f "
                   ">= sequence %.3f, both > 0.5; eval phase %.0fs (budget 180s)",
                   eval_prompts, med_tok, med_seq, report.eval_seconds)};
}

// ---------------------------------------------------------------------------
// Criterion 8: align() equals the brute-force lex-min maximum monotone
// matching on every pair of sequences with lengths 1..6 over a 4-symbol
// alphabet, and the U1 index sets are exactly the unmatched complements.
// Empty inputs throw by contract, checked separately.

Outcome diff_exhaustive() {
  const TokenId symbols[4] = {vocab().neutral_ids()[0], vocab().neutral_ids()[1],
                              vocab().good_ids()[0], vocab().bad_ids()[0]};

  try {
    align(response_of({}), response_of({symbols[0]}));
    return {false, "align accepted an empty original"};
  } catch (const EmptySequenceError&) {
  }
  try {
    align(response_of({symbols[0]}), response_of({}));
    return {false, "align accepted an empty edit"};
  } catch (const EmptySequenceError&) {
  }

  std::vector<std::vector<TokenId>> ids;
  for (int len = 1; len <= 6; ++len) {
    std::vector<int> digits(static_cast<size_t>(len), 0);
    while (true) {
      std::vector<TokenId> seq(static_cast<size_t>(len));
      for (int k = 0; k < len; ++k) seq[static_cast<size_t>(k)] = symbols[digits[static_cast<size_t>(k)]];
      ids.push_back(std::move(seq));
      int k = len - 1;
      while (k >= 0 && digits[static_cast<size_t>(k)] == 3) digits[static_cast<size_t>(k--)] = 0;
      if (k < 0) break;
      ++digits[static_cast<size_t>(k)];
    }
  }
  std::vector<TokenSequence> wrapped;
  wrapped.reserve(ids.size());
  for (const auto& seq : ids) wrapped.push_back(response_of(seq));

  const int n = static_cast<int>(ids.size());
  const int n_threads = std::max(1u, std::min(4u, std::thread::hardware_concurrency()));
  std::atomic<long long> n_bad{0};
  std::mutex mu;
  std::string first_bad;

  const auto worker = [&](int tid) {
    for (int i = tid; i < n; i += n_threads) {
      const unsigned full_o = (1u << ids[static_cast<size_t>(i)].size()) - 1u;
      for (int j = 0; j < n; ++j) {
        const Alignment got = align(wrapped[static_cast<size_t>(i)], wrapped[static_cast<size_t>(j)]);
        const grainrl_test::Match want =
            grainrl_test::brute_force_matching(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
        bool ok = got.matched == want;
        if (ok) {
          // U1 sets must be exactly the unmatched index complements.
          unsigned mask_o = 0, mask_e = 0;
          for (const auto& [o, e] : got.matched) {
            mask_o |= 1u << o;
            mask_e |= 1u << e;
          }
          const unsigned full_e = (1u << ids[static_cast<size_t>(j)].size()) - 1u;
          for (int t : got.u1_original) {
            if (mask_o & (1u << t)) ok = false;
            mask_o |= 1u << t;
          }
          for (int t : got.u1_edited) {
            if (mask_e & (1u << t)) ok = false;
            mask_e |= 1u << t;
          }
          ok = ok && mask_o == full_o && mask_e == full_e;
        }
        if (!ok) {
          ++n_bad;
          const std::lock_guard<std::mutex> lock(mu);
          if (first_bad.empty()) first_bad = strf("first mismatch at pair (%d, %d)", i, j);
        }
      }
    }
  };
  std::vector<std::thread> threads;
  for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker, t);
  for (std::thread& t : threads) t.join();

  const long long total = static_cast<long long>(n) * n;
  if (n_bad.load() != 0)
    return {false, strf("%lld/%lld pairs disagree with the brute-force oracle; %s",
                        n_bad.load(), total, first_bad.c_str())};
  return {true, strf("%lld/%lld pairs (lengths 1..6, 4 symbols) match the brute-force "
                     "lex-min maximum matching, U1 complements exact; empty inputs throw",
                     total, total)};
}

// ---------------------------------------------------------------------------
// Criterion 9: the smoke pipeline, run twice through the CLI binary with the
// same seeds, produces bitwise-identical artifacts (manifests differ only by
// their timestamps and are deliberately excluded).

struct CliResult {
  int status = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(GRAINRL_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return {-1, "popen failed"};
  char buf[4096];
  std::string out;
  size_t got = 0;
  while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, got);
  const int rc = pclose(pipe);
  return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, out};
}

Outcome pipeline_determinism() {
  const fs::path base = fs::temp_directory_path() / "grainrl-acceptance-det";
  fs::remove_all(base);
  fs::create_directories(base);

  ExperimentConfig tiny;
  tiny.dataset_size = 150;
  tiny.rm.epochs = 2;
  tiny.sft.n_demos = 200;
  tiny.sft.epochs = 2;
  tiny.ppo.max_iters = 2;
  tiny.eval_prompts = 100;
  tiny.seeds = {1};
  const fs::path cfg = base / "tiny.cfg";
  write_experiment_config(cfg.string(), tiny);

  for (const char* run : {"a", "b"}) {
    const std::string dir = (base / run).string();
    const std::string steps[] = {
        "gen-data --n 150 --seed 7 --out " + dir + "/data",
        "train-rm --data " + dir + "/data/dataset.jsonl --seed 1 --out " + dir + "/rm",
        "train-ppo --rm " + dir + "/rm/rm.ckpt --seed 1 --out " + dir + "/ppo",
        "eval --policy " + dir + "/ppo/policy.ckpt --reference " + dir + "/ppo/sft.ckpt" +
            " --seed 5 --out " + dir + "/eval",
    };
    for (const std::string& step : steps) {
      const CliResult result = run_cli("--config " + cfg.string() + " " + step);
      if (result.status != 0) {
        const std::string tail =
            result.output.size() > 200 ? result.output.substr(result.output.size() - 200)
                                       : result.output;
        return {false, strf("`%s` exited %d: %s", step.substr(0, step.find(' ')).c_str(),
                            result.status, tail.c_str())};
      }
    }
  }

  const char* artifacts[] = {"data/dataset.jsonl", "data/stats.json", "rm/rm.ckpt",
                             "rm/rm_log.csv",      "ppo/sft.ckpt",    "ppo/policy.ckpt",
                             "ppo/ppo_log.csv",    "eval/winrate.csv"};
  std::string mismatched;
  int n_same = 0;
  for (const char* name : artifacts) {
    const uint64_t ha = fnv1a64_file((base / "a" / name).string());
    const uint64_t hb = fnv1a64_file((base / "b" / name).string());
    if (ha == hb) ++n_same;
    else mismatched += std::string(" ") + name;
  }
  const int n_artifacts = static_cast<int>(std::size(artifacts));
  if (n_same != n_artifacts)
    return {false, strf("%d/%d artifact hashes differ across reruns:%s",
                        n_artifacts - n_same, n_artifacts, mismatched.c_str())};
  return {true, strf("%d/%d artifact hashes identical across two runs of gen-data -> "
                     "train-rm -> train-ppo -> eval (manifests excluded: timestamps)",
                     n_artifacts, n_artifacts)};
}

}  // namespace

int main() {
  std::printf("grainrl acceptance gate: 9 criteria\n");
  bool all_ok = true;
  const auto run = [&all_ok](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s -- %s [%.1fs]\n", out.ok ? "PASS" : "FAIL", id, name,
                out.detail.c_str(), secs);
    std::fflush(stdout);
    all_ok = all_ok && out.ok;
  };

  run(1, "equal-length loss identity", equal_length_identity);
  run(2, "gradient correctness", gradient_checks);
  run(3, "gae equals the explicit double sum", gae_equivalence);
  run(4, "preference-probability identities", bt_identities);

  std::printf("... running the shared five-seed experiment for criteria 5-7\n");
  std::fflush(stdout);
  ExperimentConfig config;
  config.out_dir = (fs::temp_directory_path() / "grainrl-acceptance-exp").string();
  fs::remove_all(config.out_dir);
  std::optional<ExperimentReport> report;
  std::string experiment_error;
  try {
    report = run_table_experiments(vocab(), config);
  } catch (const std::exception& e) {
    experiment_error = e.what();
  }
  const auto table = [&](const std::function<Outcome(const ExperimentReport&)>& fn) {
    return [&, fn]() -> Outcome {
      if (!report) return {false, "shared experiment failed: " + experiment_error};
      return fn(*report);
    };
  };
  run(5, "held-out rm accuracy gap (reports/t2)", table(rm_accuracy_gap));
  run(6, "ppo iterations to target (reports/t3)", table(ppo_iteration_gap));
  run(7, "oracle-judge win rates (reports/t1)", table([&](const ExperimentReport& r) {
        return win_rate_order(r, config.eval_prompts);
      }));

  run(8, "align equals the brute-force oracle, exhaustively", diff_exhaustive);
  run(9, "pipeline determinism through the cli", pipeline_determinism);

  std::printf("acceptance: %s\n", all_ok ? "all 9 criteria passed" : "FAILED");
  return all_ok ? 0 : 1;
}

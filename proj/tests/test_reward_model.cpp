#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grainrl/reward_model.hpp"

using namespace grainrl;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::standard();
  return v;
}

std::vector<EditPair> synthetic_dataset(int n, uint64_t seed) {
  return build_dataset(vocab(), n, EditorBackend{}, seed);
}

// Hand-built model whose token rewards equal the oracle exactly: the
// embedding's first column carries 100 * oracle(a), one w1 row forwards the
// a_t slot, and w2 re-saturates, so tanh lands on exactly -1, 0, or +1.
RewardModel make_probe(const RmConfig& config, double w2_scale) {
  RewardModel model(vocab(), config);
  ParamStore& ps = model.params();
  for (const std::string& name : ps.names()) {
    if (name == "head_kind") continue;
    for (double& v : ps.get(name).data) v = 0.0;
  }
  const OracleSpec spec;
  Mat& emb = ps.get("emb");
  for (TokenId a = 0; a < vocab().size(); ++a)
    emb.at(a, 0) = 100.0 * vocab().oracle_token_reward(a, spec);
  ps.get("w1").at((config.window + 1) * config.d_emb, 0) = 1.0;  // the a_t slot
  ps.get("w2").at(0, 0) = w2_scale;
  return model;
}

TokenSequence response_of(std::vector<TokenId> ids) {
  return TokenSequence{std::move(ids), Role::response};
}

EditPair make_pair(const TokenSequence& prompt, std::vector<TokenId> orig,
                   std::vector<TokenId> edit) {
  EditPair p;
  p.prompt = prompt;
  p.original = response_of(std::move(orig));
  p.edited = response_of(std::move(edit));
  p.align = align(p.original, p.edited);
  return p;
}

double softplus_ref(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

bool bitwise_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("saturated probe model reproduces the oracle bitwise") {
  RmConfig config;
  const RewardModel model = make_probe(config, 100.0);
  const TokenSequence prompt = vocab().sample_prompt(7);

  const TokenId good = vocab().good_ids()[0];
  const TokenId bad = vocab().bad_ids()[0];
  const TokenId neutral = vocab().neutral_ids()[0];
  const RewardTrace trace = model.token_rewards(prompt, response_of({good, bad, neutral, bad}));
  REQUIRE(trace.rewards.size() == 4);
  CHECK(bitwise_equal(trace.rewards[0], 1.0));
  CHECK(bitwise_equal(trace.rewards[1], -1.0));
  CHECK(bitwise_equal(trace.rewards[2], 0.0));
  CHECK(bitwise_equal(trace.rewards[3], -1.0));

  // Eq. 1: the trajectory reward is exactly the left-to-right mean.
  double sum = 0.0;
  for (double r : trace.rewards) sum += r;
  CHECK(bitwise_equal(trace.trajectory_reward, sum / 4.0));

  // Every kept pair replaces bad tokens with good ones, so the oracle-exact
  // model separates all of them.
  const auto pairs = synthetic_dataset(200, 41);
  CHECK(rm_accuracy(model, pairs) == 1.0);
}

TEST_CASE("frozen loss values") {
  RmConfig config;
  const RewardModel model = make_probe(config, 100.0);
  const TokenSequence prompt = vocab().sample_prompt(3);
  const TokenId good = vocab().good_ids()[2];
  const TokenId bad = vocab().bad_ids()[2];
  const TokenId n0 = vocab().neutral_ids()[0];
  const TokenId n1 = vocab().neutral_ids()[1];

  SUBCASE("one substituted token at length three") {
    // Margin (1/3) * (+1) - (1/3) * (-1); loss = softplus(-2/3).
    const EditPair p = make_pair(prompt, {bad, n0, n1}, {good, n0, n1});
    REQUIRE(p.align.u1_original == std::vector<int>{0});
    REQUIRE(p.align.u1_edited == std::vector<int>{0});
    Tape tape;
    const double loss = tape.scalar_value(model.batch_loss(tape, {p}, RmConfig::Loss::approx));
    CHECK(bitwise_equal(loss, 0.41437008685207206));
    Tape tape_full;
    const double full =
        tape_full.scalar_value(model.batch_loss(tape_full, {p}, RmConfig::Loss::full));
    CHECK(bitwise_equal(full, loss));  // equal lengths: U0 coefficient is exactly zero
  }

  SUBCASE("identical responses give ln 2") {
    RmConfig lenient = config;
    lenient.allow_empty_u1 = true;
    const RewardModel m = make_probe(lenient, 100.0);
    const EditPair p = make_pair(prompt, {n0, n1}, {n0, n1});
    REQUIRE(p.align.u1_edited.empty());
    Tape tape;
    const double loss = tape.scalar_value(m.batch_loss(tape, {p}, RmConfig::Loss::approx));
    CHECK(bitwise_equal(loss, 0.6931471805599453));
  }

  SUBCASE("sequence head with unit margin") {
    RmConfig seq = config;
    seq.head = RmConfig::Head::sequence_level;
    seq.loss = RmConfig::Loss::sequence;
    // Single-token responses; w2 = 0.5 puts the final raw scores at +-0.5.
    const RewardModel m = make_probe(seq, 0.5);
    CHECK(bitwise_equal(m.sequence_score(prompt, response_of({good})), 0.5));
    CHECK(bitwise_equal(m.sequence_score(prompt, response_of({bad})), -0.5));
    const EditPair p = make_pair(prompt, {bad}, {good});
    Tape tape;
    const double loss = tape.scalar_value(m.batch_loss(tape, {p}, RmConfig::Loss::sequence));
    CHECK(bitwise_equal(loss, 0.31326168751822286));  // softplus(-1)
  }
}

TEST_CASE("preference probability is a symmetric Bradley-Terry link") {
  RewardTrace a{{0.5, -0.5}, 0.0};
  CHECK(preference_prob(a, a) == 0.5);  // sigma(0), exact

  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    RewardTrace i{{}, rng.uniform(-5.0, 5.0)};
    RewardTrace j{{}, rng.uniform(-5.0, 5.0)};
    const double pij = preference_prob(i, j);
    const double pji = preference_prob(j, i);
    CHECK(std::abs(pij + pji - 1.0) <= 1e-12);
    CHECK(pij > 0.0);
    CHECK(pij < 1.0);
  }
  // sigma(1), frozen
  RewardTrace one{{}, 1.0};
  RewardTrace zero{{}, 0.0};
  CHECK(bitwise_equal(preference_prob(one, zero), 0.7310585786300049));
}

TEST_CASE("full and approx losses agree bitwise on equal-length pairs") {
  const auto pairs = synthetic_dataset(200, 11);
  for (const EditPair& p : pairs) REQUIRE(p.original.size() == p.edited.size());

  RmConfig config;
  config.seed = 5;
  const RewardModel model(vocab(), config);
  Tape ta, tf;
  const double approx = ta.scalar_value(model.batch_loss(ta, pairs, RmConfig::Loss::approx));
  const double full = tf.scalar_value(model.batch_loss(tf, pairs, RmConfig::Loss::full));
  CHECK(bitwise_equal(approx, full));

  // And the gradients match bitwise too, so training trajectories coincide.
  Tape ga, gf;
  auto grads_a = ga.backward(model.batch_loss(ga, pairs, RmConfig::Loss::approx));
  auto grads_f = gf.backward(model.batch_loss(gf, pairs, RmConfig::Loss::full));
  REQUIRE(grads_a.size() == grads_f.size());
  for (const auto& [name, mat] : grads_a) {
    REQUIRE(grads_f.count(name) == 1);
    const Mat& other = grads_f.at(name);
    REQUIRE(mat.data.size() == other.data.size());
    CHECK(std::memcmp(mat.data.data(), other.data.data(),
                      mat.data.size() * sizeof(double)) == 0);
  }

  // Unequal lengths break the identity: the U0 term kicks in.
  const TokenSequence prompt = vocab().sample_prompt(1);
  const TokenId g = vocab().good_ids()[0];
  const TokenId b = vocab().bad_ids()[0];
  const TokenId n = vocab().neutral_ids()[0];
  const EditPair uneven = make_pair(prompt, {b, n, n, n}, {g, n, n});
  Tape ua, uf;
  const double u_approx =
      ua.scalar_value(model.batch_loss(ua, {uneven}, RmConfig::Loss::approx));
  const double u_full = uf.scalar_value(model.batch_loss(uf, {uneven}, RmConfig::Loss::full));
  CHECK(u_approx != u_full);
}

TEST_CASE("batch loss matches a by-hand computation") {
  RmConfig config;
  config.seed = 21;
  const RewardModel model(vocab(), config);
  auto pairs = synthetic_dataset(40, 77);
  // Mix in unequal lengths so the full loss's U0 term is exercised.
  const TokenSequence prompt = vocab().sample_prompt(5);
  const TokenId g = vocab().good_ids()[1];
  const TokenId b = vocab().bad_ids()[1];
  const TokenId n0 = vocab().neutral_ids()[3];
  const TokenId n1 = vocab().neutral_ids()[4];
  pairs.push_back(make_pair(prompt, {b, n0, n1, n0, b}, {g, n0, n1}));
  pairs.push_back(make_pair(prompt, {n0, b, n1}, {n0, g, n1, n1}));

  const auto hand_loss = [&](RmConfig::Loss which) {
    double total = 0.0;
    for (const EditPair& p : pairs) {
      const RewardTrace ei = model.token_rewards(p.prompt, p.edited);
      const RewardTrace ej = model.token_rewards(p.prompt, p.original);
      const double inv_ti = 1.0 / p.edited.size();
      const double inv_tj = 1.0 / p.original.size();
      double z = 0.0;
      for (int t : p.align.u1_edited) z += inv_ti * ei.rewards[static_cast<size_t>(t)];
      for (int t : p.align.u1_original) z -= inv_tj * ej.rewards[static_cast<size_t>(t)];
      if (which == RmConfig::Loss::full) {
        for (const auto& [ot, et] : p.align.matched)
          z += (inv_ti - inv_tj) * ei.rewards[static_cast<size_t>(et)];
      }
      total += softplus_ref(-z);
    }
    return total / static_cast<double>(pairs.size());
  };

  for (const RmConfig::Loss which : {RmConfig::Loss::approx, RmConfig::Loss::full}) {
    Tape tape;
    const double loss = tape.scalar_value(model.batch_loss(tape, pairs, which));
    CHECK(loss == doctest::Approx(hand_loss(which)).epsilon(1e-12));
  }

  // Sequence loss against per-sequence final scores.
  RmConfig seq_config;
  seq_config.seed = 21;
  seq_config.head = RmConfig::Head::sequence_level;
  seq_config.loss = RmConfig::Loss::sequence;
  const RewardModel seq_model(vocab(), seq_config);
  double total = 0.0;
  for (const EditPair& p : pairs) {
    const double z = seq_model.sequence_score(p.prompt, p.edited) -
                     seq_model.sequence_score(p.prompt, p.original);
    total += softplus_ref(-z);
  }
  Tape tape;
  const double loss =
      tape.scalar_value(seq_model.batch_loss(tape, pairs, RmConfig::Loss::sequence));
  CHECK(loss == doctest::Approx(total / pairs.size()).epsilon(1e-12));
}

TEST_CASE("token rewards are causal") {
  RmConfig config;
  config.seed = 13;
  const RewardModel model(vocab(), config);
  const TokenSequence prompt = vocab().sample_prompt(9);

  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const int base_len = rng.uniform_int(1, 10);
    std::vector<TokenId> ids;
    for (int t = 0; t < base_len; ++t) ids.push_back(rng.uniform_int(0, vocab().size() - 1));
    const RewardTrace before = model.token_rewards(prompt, response_of(ids));

    std::vector<TokenId> extended = ids;
    const int extra = rng.uniform_int(1, 6);
    for (int t = 0; t < extra; ++t)
      extended.push_back(rng.uniform_int(0, vocab().size() - 1));
    const RewardTrace after = model.token_rewards(prompt, response_of(extended));

    REQUIRE(after.rewards.size() == ids.size() + static_cast<size_t>(extra));
    CHECK(std::memcmp(before.rewards.data(), after.rewards.data(),
                      before.rewards.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("gradient check across all loss kinds") {
  // Small model so finite differences stay fast; the full-scale sweep lives
  // in the acceptance suite.
  RmConfig config;
  config.d_emb = 4;
  config.d_hidden = 6;
  config.window = 2;
  config.seed = 3;
  auto pairs = synthetic_dataset(6, 19);
  const TokenSequence prompt = vocab().sample_prompt(2);
  pairs.push_back(make_pair(prompt, {vocab().bad_ids()[0], vocab().neutral_ids()[0]},
                            {vocab().good_ids()[0], vocab().neutral_ids()[0],
                             vocab().neutral_ids()[1]}));

  const auto check = [&](RmConfig config_in, RmConfig::Loss which) {
    RewardModel model(vocab(), config_in);
    const LossFn fn = [&](const ParamStore&, std::unordered_map<std::string, Mat>* grads) {
      Tape tape;
      const NodeId loss = model.batch_loss(tape, pairs, which);
      if (grads != nullptr) *grads = tape.backward(loss);
      return tape.scalar_value(loss);
    };
    const GradCheckReport report = grad_check(fn, model.params(), 1e-4, 17, 64);
    INFO("loss kind ", static_cast<int>(which), " worst ", report.worst_param, "[",
         report.worst_index, "] rel err ", report.max_rel_err);
    CHECK(report.passed);
    CHECK(report.n_checked == 64);
  };

  check(config, RmConfig::Loss::approx);
  check(config, RmConfig::Loss::full);
  RmConfig seq = config;
  seq.head = RmConfig::Head::sequence_level;
  seq.loss = RmConfig::Loss::sequence;
  check(seq, RmConfig::Loss::sequence);
}

TEST_CASE("training reduces the loss and separates held-out pairs") {
  const auto dataset = synthetic_dataset(300, 123);

  std::vector<std::vector<double>> losses;  // per seed, per epoch
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    RmConfig config;
    config.epochs = 5;
    config.seed = seed;
    const TrainedRm trained = train_rm(vocab(), dataset, config);
    REQUIRE(trained.log.size() == 5);
    std::vector<double> per_epoch;
    for (const RmEpochLog& row : trained.log) per_epoch.push_back(row.loss);
    losses.push_back(per_epoch);
    CHECK(trained.heldout.size() == 30);
  }

  // Median loss across seeds is non-increasing over the first five epochs.
  for (size_t e = 0; e + 1 < 5; ++e) {
    const auto median_at = [&](size_t epoch) {
      std::vector<double> v = {losses[0][epoch], losses[1][epoch], losses[2][epoch]};
      std::sort(v.begin(), v.end());
      return v[1];
    };
    CHECK(median_at(e + 1) <= median_at(e));
  }
}

TEST_CASE("approx and full training runs coincide bitwise on equal-length data") {
  const auto dataset = synthetic_dataset(120, 321);
  RmConfig config;
  config.epochs = 3;
  config.seed = 9;
  config.loss = RmConfig::Loss::approx;
  const TrainedRm a = train_rm(vocab(), dataset, config);
  config.loss = RmConfig::Loss::full;
  const TrainedRm f = train_rm(vocab(), dataset, config);

  for (const std::string& name : a.model.params().names()) {
    const Mat& ma = a.model.params().get(name);
    const Mat& mf = f.model.params().get(name);
    REQUIRE(ma.data.size() == mf.data.size());
    CHECK(std::memcmp(ma.data.data(), mf.data.data(), ma.data.size() * sizeof(double)) == 0);
  }
  for (size_t e = 0; e < a.log.size(); ++e) {
    CHECK(bitwise_equal(a.log[e].loss, f.log[e].loss));
    CHECK(bitwise_equal(a.log[e].heldout_accuracy, f.log[e].heldout_accuracy));
  }
}

TEST_CASE("randomly initialized models score at chance on average") {
  // A single random init is systematically biased: only 16 token types carry
  // oracle signal, so whichever way the init happens to rank them decides
  // most pairs the same way (per-init spread is ~0.19). The chance level is a
  // statement about the init distribution — it is symmetric under negating
  // the embedding (biases start at zero), which flips every reward sign, so
  // accuracy is distributed symmetrically about 0.5. Monte-Carlo the mean.
  const auto pairs = synthetic_dataset(2000, 2024);
  double sum = 0.0;
  const int n_inits = 12;
  for (int seed = 0; seed < n_inits; ++seed) {
    RmConfig config;
    config.seed = static_cast<uint64_t>(seed);
    const RewardModel model(vocab(), config);
    const double acc = rm_accuracy(model, pairs);
    CHECK(acc > 0.0);
    CHECK(acc < 1.0);
    sum += acc;
  }
  const double mean = sum / n_inits;
  INFO("mean accuracy over ", n_inits, " inits: ", mean);
  CHECK(mean >= 0.45);
  CHECK(mean <= 0.55);

  // Ties count one half: a zeroed model scores every response 0.0.
  RmConfig config;
  RewardModel constant(vocab(), config);
  for (const std::string& name : constant.params().names()) {
    if (name == "head_kind") continue;
    for (double& v : constant.params().get(name).data) v = 0.0;
  }
  CHECK(rm_accuracy(constant, pairs) == 0.5);
}

TEST_CASE("head and input guards") {
  const TokenSequence prompt = vocab().sample_prompt(4);
  const TokenSequence resp = response_of({vocab().neutral_ids()[0]});

  RmConfig token_config;
  const RewardModel token_model(vocab(), token_config);
  CHECK_THROWS_AS(token_model.sequence_score(prompt, resp), WrongHeadError);
  CHECK_THROWS_AS(token_model.token_rewards(prompt, TokenSequence{}), EmptyResponseError);
  CHECK_THROWS_AS(token_model.token_rewards(TokenSequence{{}, Role::prompt}, resp),
                  EmptyResponseError);
  const TokenSequence too_long = response_of(std::vector<TokenId>(25, vocab().neutral_ids()[0]));
  CHECK_THROWS_AS(token_model.token_rewards(prompt, too_long), ShapeMismatchError);

  RmConfig seq_config;
  seq_config.head = RmConfig::Head::sequence_level;
  seq_config.loss = RmConfig::Loss::sequence;
  const RewardModel seq_model(vocab(), seq_config);
  CHECK_THROWS_AS(seq_model.token_rewards(prompt, resp), WrongHeadError);

  // Loss kind must match the head.
  const auto pairs = synthetic_dataset(2, 8);
  Tape tape;
  CHECK_THROWS_AS(token_model.batch_loss(tape, pairs, RmConfig::Loss::sequence),
                  WrongHeadError);
  CHECK_THROWS_AS(seq_model.batch_loss(tape, pairs, RmConfig::Loss::approx), WrongHeadError);
  CHECK_THROWS_AS(token_model.batch_loss(tape, {}, RmConfig::Loss::approx), ConfigError);

  // An all-matched pair must have been dropped upstream.
  const TokenId n = vocab().neutral_ids()[0];
  const EditPair unchanged = make_pair(prompt, {n, n}, {n, n});
  CHECK_THROWS_AS(token_model.batch_loss(tape, {unchanged}, RmConfig::Loss::approx),
                  EmptyU1Error);

  // Config validation: mismatched head/loss pairings never construct.
  RmConfig bad = token_config;
  bad.loss = RmConfig::Loss::sequence;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = seq_config;
  bad.loss = RmConfig::Loss::approx;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = token_config;
  bad.heldout_frac = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = token_config;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip preserves scores and head kind") {
  const auto tmp = std::filesystem::temp_directory_path() / "grainrl_rm_ckpt_test.bin";
  RmConfig config;
  config.seed = 77;
  const RewardModel model(vocab(), config);
  save_checkpoint(tmp.string(), model.params());

  const RewardModel reloaded(vocab(), config, load_checkpoint(tmp.string()));
  const TokenSequence prompt = vocab().sample_prompt(10);
  const TokenSequence resp =
      response_of({vocab().good_ids()[3], vocab().bad_ids()[3], vocab().neutral_ids()[7]});
  const RewardTrace a = model.token_rewards(prompt, resp);
  const RewardTrace b = reloaded.token_rewards(prompt, resp);
  CHECK(std::memcmp(a.rewards.data(), b.rewards.data(), a.rewards.size() * sizeof(double)) ==
        0);

  // A sequence-head config refuses a token-head checkpoint.
  RmConfig seq = config;
  seq.head = RmConfig::Head::sequence_level;
  seq.loss = RmConfig::Loss::sequence;
  CHECK_THROWS_AS(RewardModel(vocab(), seq, load_checkpoint(tmp.string())),
                  HeadSchemeMismatchError);
  std::filesystem::remove(tmp);
}

TEST_CASE("training log CSV format") {
  const auto tmp = std::filesystem::temp_directory_path() / "grainrl_rm_log_test.csv";
  write_rm_log_csv(tmp.string(), {{0, 0.6931471805599453, 0.5}, {1, 0.25, 0.875}});
  std::ifstream in(tmp);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "epoch,loss,heldout_accuracy");
  REQUIRE(std::getline(in, line));
  CHECK(line == "0,0.69314718055994529,0.5");
  REQUIRE(std::getline(in, line));
  CHECK(line == "1,0.25,0.875");
  CHECK_FALSE(std::getline(in, line));
  std::filesystem::remove(tmp);
  CHECK_THROWS_AS(write_rm_log_csv("/nonexistent-dir/x.csv", {}), ConfigError);
}

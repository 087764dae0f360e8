// grainrl — desk-scale fine-grained RLHF pipeline.
//
// Subcommands: gen-data, diff, train-rm, train-ppo, eval, report.
// Exit codes: 0 success, 1 runtime failure, 2 usage/input error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "grainrl/editdiff.hpp"
#include "grainrl/errors.hpp"
#include "grainrl/harness.hpp"
#include "grainrl/ppo.hpp"
#include "grainrl/reward_model.hpp"
#include "grainrl/rng.hpp"
#include "grainrl/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace grainrl;

namespace {

std::string iso_utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Written before work begins; rewritten with output hashes on completion.
class RunManifest {
 public:
  RunManifest(std::string out_dir, const std::string& subcommand,
              const ExperimentConfig& resolved, uint64_t seed)
      : out_dir_(std::move(out_dir)), path_(out_dir_ + "/manifest.json") {
    std::error_code ec;
    fs::create_directories(out_dir_, ec);
    if (ec) throw ConfigError("cannot create output directory: " + out_dir_);
    doc_["subcommand"] = subcommand;
    doc_["seed"] = seed;
    doc_["config"] = render_experiment_config(resolved);
    doc_["started_at"] = iso_utc_now();
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
    write();
  }

  // Inputs are hashed up front, before any work runs.
  void add_input(const std::string& path) {
    doc_["inputs"][path] = hex64(fnv1a64_file(path));
    write();
  }

  // Outputs are hashed at completion time.
  void finish(const std::vector<std::string>& output_names) {
    for (const std::string& name : output_names)
      doc_["outputs"][name] = hex64(fnv1a64_file(out_dir_ + "/" + name));
    doc_["finished_at"] = iso_utc_now();
    write();
  }

  const std::string& out_dir() const { return out_dir_; }

 private:
  void write() const {
    std::ofstream out(path_);
    if (!out) throw ConfigError("cannot write manifest: " + path_);
    out << doc_.dump(2) << "\n";
  }

  std::string out_dir_;
  std::string path_;
  json doc_;
};

struct CommonFlags {
  std::string config_path;  // empty: built-in defaults (== configs/defaults.cfg)
};

ExperimentConfig resolve_config(const CommonFlags& common) {
  return common.config_path.empty() ? ExperimentConfig{}
                                    : load_experiment_config(common.config_path);
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataFlags {
  std::optional<int> n;
  std::string editor = "synthetic";
  std::string endpoint;
  std::string template_path;
  double timeout_sec = 10.0;
  std::optional<uint64_t> seed;
  std::optional<double> p_bad;
  std::optional<int> response_len;
  std::optional<double> max_change_ratio;
  std::string out = "runs/data";
};

int run_gen_data(const CommonFlags& common, const GenDataFlags& flags) {
  ExperimentConfig config = resolve_config(common);
  if (flags.n) config.dataset_size = *flags.n;
  if (flags.seed) config.dataset_seed = *flags.seed;
  if (flags.p_bad) config.data.p_bad = *flags.p_bad;
  if (flags.response_len) config.data.response_len = *flags.response_len;
  if (flags.max_change_ratio) config.data.max_change_ratio = *flags.max_change_ratio;

  EditorBackend backend;
  backend.template_path = flags.template_path;
  backend.timeout_sec = flags.timeout_sec;
  if (flags.editor == "external") {
    backend.kind = EditorBackend::Kind::external;
    backend.endpoint = flags.endpoint;
    if (backend.endpoint.empty()) {
      const char* env = std::getenv("GRAINRL_EDITOR_ENDPOINT");
      if (env != nullptr) backend.endpoint = env;
    }
    if (backend.endpoint.empty())
      throw ConfigError(
          "--editor external requires --endpoint (or GRAINRL_EDITOR_ENDPOINT)");
  }

  const Vocabulary vocab = Vocabulary::standard();
  RunManifest manifest(flags.out, "gen-data", config, config.dataset_seed);
  if (!flags.template_path.empty()) manifest.add_input(flags.template_path);

  DatasetStats stats;
  const std::vector<EditPair> pairs = build_dataset(vocab, config.dataset_size, backend,
                                                    config.dataset_seed, &stats, config.data);
  write_dataset_jsonl(flags.out + "/dataset.jsonl", vocab, pairs);
  {
    json stats_doc;
    stats_doc["kept"] = stats.kept;
    stats_doc["dropped_empty_u1"] = stats.dropped_empty_u1;
    stats_doc["dropped_change_ratio"] = stats.dropped_change_ratio;
    stats_doc["attempts"] = stats.attempts;
    stats_doc["mean_change_ratio"] = stats.mean_change_ratio;
    std::ofstream out(flags.out + "/stats.json");
    if (!out) throw ConfigError("cannot write stats: " + flags.out + "/stats.json");
    out << stats_doc.dump(2) << "\n";
  }
  manifest.finish({"dataset.jsonl", "stats.json"});
  std::printf("gen-data: kept %d pairs (attempts %d, dropped %d empty-u1, %d change-ratio)\n",
              stats.kept, stats.attempts, stats.dropped_empty_u1, stats.dropped_change_ratio);
  std::printf("gen-data: mean change ratio |U1|/T = %.4f\n", stats.mean_change_ratio);
  std::printf("gen-data: wrote %s/dataset.jsonl\n", flags.out.c_str());
  return 0;
}

// ---- diff -------------------------------------------------------------------

struct DiffFlags {
  std::string original;
  std::string edited;
};

int run_diff(const DiffFlags& flags) {
  const Vocabulary vocab = Vocabulary::standard();
  const TokenSequence original = vocab.tokenize(flags.original);
  const TokenSequence edited = vocab.tokenize(flags.edited);
  const Alignment alignment = align(original, edited);

  const auto render = [&](const TokenSequence& seq, const std::vector<int>& u1) {
    std::string text;
    size_t next_changed = 0;
    for (int t = 0; t < seq.size(); ++t) {
      if (t > 0) text += ' ';
      const bool changed =
          next_changed < u1.size() && u1[next_changed] == t && (++next_changed != 0);
      text += changed ? "[" + vocab.detokenize(TokenSequence{{seq.ids[static_cast<size_t>(t)]},
                                                             seq.role}) +
                            "]"
                      : vocab.detokenize(TokenSequence{{seq.ids[static_cast<size_t>(t)]}, seq.role});
    }
    return text;
  };
  const auto render_indices = [](const std::vector<int>& u1) {
    std::string text;
    for (size_t i = 0; i < u1.size(); ++i) text += (i ? " " : "") + std::to_string(u1[i]);
    return text;
  };

  if (alignment.u1_original.empty() && alignment.u1_edited.empty()) {
    std::printf("no changes\n");
    std::printf("u1_original:\nu1_edited:\n");
    return 0;
  }
  const auto print_indices = [&](const char* label, const std::vector<int>& u1) {
    if (u1.empty()) std::printf("%s:\n", label);
    else std::printf("%s: %s\n", label, render_indices(u1).c_str());
  };
  std::printf("original: %s\n", render(original, alignment.u1_original).c_str());
  std::printf("edited:   %s\n", render(edited, alignment.u1_edited).c_str());
  print_indices("u1_original", alignment.u1_original);
  print_indices("u1_edited", alignment.u1_edited);
  return 0;
}

// ---- train-rm ---------------------------------------------------------------

struct TrainRmFlags {
  std::string data;
  std::string head = "token";
  std::string loss;  // empty: derived from head and the config base
  std::optional<uint64_t> seed;
  std::optional<int> epochs;
  std::string out = "runs/rm";
};

int run_train_rm(const CommonFlags& common, const TrainRmFlags& flags) {
  ExperimentConfig config = resolve_config(common);
  if (!fs::exists(flags.data)) throw ConfigError("dataset not found: " + flags.data);

  RmConfig rm = config.rm;
  if (flags.head == "token") {
    rm.head = RmConfig::Head::token_level;
  } else if (flags.head == "sequence") {
    rm.head = RmConfig::Head::sequence_level;
    rm.loss = RmConfig::Loss::sequence;
  } else {
    throw ConfigError("--head must be token or sequence, got '" + flags.head + "'");
  }
  if (!flags.loss.empty()) {
    if (flags.loss == "approx") rm.loss = RmConfig::Loss::approx;
    else if (flags.loss == "full") rm.loss = RmConfig::Loss::full;
    else if (flags.loss == "sequence") rm.loss = RmConfig::Loss::sequence;
    else throw ConfigError("--loss must be approx, full, or sequence");
  }
  if (flags.seed) rm.seed = *flags.seed;
  if (flags.epochs) rm.epochs = *flags.epochs;
  rm.validate();

  const Vocabulary vocab = Vocabulary::standard();
  RunManifest manifest(flags.out, "train-rm", config, rm.seed);
  manifest.add_input(flags.data);

  const std::vector<EditPair> dataset = read_dataset_jsonl(flags.data, vocab);
  const TrainedRm trained = train_rm(vocab, dataset, rm);
  save_checkpoint(flags.out + "/rm.ckpt", trained.model.params());
  write_rm_log_csv(flags.out + "/rm_log.csv", trained.log);
  manifest.finish({"rm.ckpt", "rm_log.csv"});

  const double accuracy = rm_accuracy(trained.model, trained.heldout);
  std::printf("train-rm: %s head, %d epochs on %d pairs\n", flags.head.c_str(), rm.epochs,
              static_cast<int>(dataset.size()));
  std::printf("train-rm: held-out accuracy %.4f (%d pairs)\n", accuracy,
              static_cast<int>(trained.heldout.size()));
  std::printf("train-rm: wrote %s/rm.ckpt\n", flags.out.c_str());
  return 0;
}

// ---- train-ppo --------------------------------------------------------------

struct TrainPpoFlags {
  std::string rm;
  std::string sft;  // empty: pre-train the SFT policy here
  std::string scheme = "token";
  std::optional<uint64_t> seed;
  std::optional<int> max_iters;
  std::optional<double> target;
  std::string out = "runs/ppo";
};

RewardModel load_rm_checkpoint(const Vocabulary& vocab, const ExperimentConfig& config,
                               const std::string& path, RmConfig::Head head) {
  RmConfig rm = config.rm;
  rm.head = head;
  if (head == RmConfig::Head::sequence_level) rm.loss = RmConfig::Loss::sequence;
  return RewardModel(vocab, rm, load_checkpoint(path));
}

int run_train_ppo(const CommonFlags& common, const TrainPpoFlags& flags) {
  ExperimentConfig config = resolve_config(common);
  if (!fs::exists(flags.rm)) throw ConfigError("reward-model checkpoint not found: " + flags.rm);
  if (!flags.sft.empty() && !fs::exists(flags.sft))
    throw ConfigError("sft checkpoint not found: " + flags.sft);

  PPOConfig ppo = config.ppo;
  if (flags.scheme == "token") {
    ppo.reward_scheme = PPOConfig::RewardScheme::token_level;
  } else if (flags.scheme == "sequence") {
    ppo.reward_scheme = PPOConfig::RewardScheme::sequence_terminal;
  } else {
    throw ConfigError("--scheme must be token or sequence, got '" + flags.scheme + "'");
  }
  if (flags.seed) ppo.seed = *flags.seed;
  if (flags.max_iters) ppo.max_iters = *flags.max_iters;
  if (flags.target) ppo.oracle_target = *flags.target;
  ppo.validate();

  const Vocabulary vocab = Vocabulary::standard();
  RunManifest manifest(flags.out, "train-ppo", config, ppo.seed);
  manifest.add_input(flags.rm);
  if (!flags.sft.empty()) manifest.add_input(flags.sft);

  const RewardModel rm = load_rm_checkpoint(vocab, config, flags.rm,
                                            ppo.reward_scheme ==
                                                    PPOConfig::RewardScheme::token_level
                                                ? RmConfig::Head::token_level
                                                : RmConfig::Head::sequence_level);

  std::vector<std::string> outputs = {"policy.ckpt", "ppo_log.csv"};
  std::optional<Policy> sft_policy;
  if (flags.sft.empty()) {
    const SftResult sft = sft_pretrain(vocab, config.sft);
    sft_policy.emplace(sft.policy);
    save_checkpoint(flags.out + "/sft.ckpt", sft.policy.params());
    outputs.push_back("sft.ckpt");
    std::printf("train-ppo: pre-trained SFT policy (final held-out perplexity %.2f)\n",
                sft.log.back().heldout_perplexity);
  } else {
    sft_policy.emplace(vocab, config.sft.policy, load_checkpoint(flags.sft));
  }

  const PpoRunResult result = train_ppo(*sft_policy, rm, ppo);
  save_checkpoint(flags.out + "/policy.ckpt", result.policy.params());
  write_ppo_log_csv(flags.out + "/ppo_log.csv", result.log);
  manifest.finish(outputs);

  std::printf("train-ppo: %s scheme, %d iterations, %s\n", flags.scheme.c_str(), result.iters_run,
              result.reached_target ? "reached oracle target" : "target not reached");
  if (!result.log.empty())
    std::printf("train-ppo: mean oracle reward %.4f -> %.4f\n",
                result.log.front().mean_oracle_reward, result.log.back().mean_oracle_reward);
  std::printf("train-ppo: wrote %s/policy.ckpt\n", flags.out.c_str());
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalFlags {
  std::string policy;
  std::string reference;
  std::string judge = "oracle";
  std::optional<int> prompts;
  std::optional<uint64_t> seed;
  bool paired_seeds = true;
  std::string out = "runs/eval";
};

int run_eval(const CommonFlags& common, const EvalFlags& flags) {
  ExperimentConfig config = resolve_config(common);
  if (flags.judge != "oracle")
    throw ConfigError("--judge must be oracle (the only judge), got '" + flags.judge + "'");
  if (!fs::exists(flags.policy)) throw ConfigError("policy checkpoint not found: " + flags.policy);
  if (!fs::exists(flags.reference))
    throw ConfigError("reference checkpoint not found: " + flags.reference);
  const int n_prompts = flags.prompts.value_or(config.eval_prompts);
  const uint64_t seed = flags.seed.value_or(config.eval_seed);

  const Vocabulary vocab = Vocabulary::standard();
  RunManifest manifest(flags.out, "eval", config, seed);
  manifest.add_input(flags.policy);
  manifest.add_input(flags.reference);

  const Policy policy(vocab, config.sft.policy, load_checkpoint(flags.policy));
  const Policy reference(vocab, config.sft.policy, load_checkpoint(flags.reference));
  const std::vector<TokenSequence> prompts = sample_eval_prompts(vocab, n_prompts, seed);
  const WinRateReport report = win_rate(policy, reference, prompts, seed, flags.paired_seeds);

  {
    std::ofstream out(flags.out + "/winrate.csv");
    if (!out) throw ConfigError("cannot write report: " + flags.out + "/winrate.csv");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "win_rate,std_error,n_comparisons\n%.17g,%.17g,%d\n",
                  report.win_rate, report.std_error, report.n_comparisons);
    out << buf << "prompt,outcome\n";
    for (size_t i = 0; i < report.outcomes.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%d,%.1f\n", static_cast<int>(i), report.outcomes[i]);
      out << buf;
    }
  }
  manifest.finish({"winrate.csv"});
  std::printf("eval: win rate %.3f (se %.3f, n %d, %s sampling)\n", report.win_rate,
              report.std_error, report.n_comparisons,
              flags.paired_seeds ? "paired" : "independent");
  return 0;
}

// ---- report -----------------------------------------------------------------

struct ReportFlags {
  std::string out;  // empty: config's out_dir
};

int run_report(const CommonFlags& common, const ReportFlags& flags) {
  ExperimentConfig config = resolve_config(common);
  if (!flags.out.empty()) config.out_dir = flags.out;
  config.validate();

  const Vocabulary vocab = Vocabulary::standard();
  RunManifest manifest(config.out_dir, "report", config, config.dataset_seed);
  const ExperimentReport report = run_table_experiments(vocab, config);
  manifest.finish({"reports/t1.csv", "reports/t2.csv", "reports/t3.csv", "dataset.jsonl",
                   "sft.ckpt", "experiment.cfg", "provenance.txt"});

  const auto column = [&](auto field) {
    std::vector<double> values;
    for (const ArmSeedResult& r : report.rows) values.push_back(field(r));
    return median(std::move(values));
  };
  std::printf("report: %d seeds, reports under %s/reports\n",
              static_cast<int>(report.rows.size()), config.out_dir.c_str());
  std::printf("  t2 median held-out RM accuracy: token %.4f sequence %.4f\n",
              column([](const ArmSeedResult& r) { return r.acc_token; }),
              column([](const ArmSeedResult& r) { return r.acc_sequence; }));
  std::printf("  t3 median PPO iterations to target: token %g sequence %g\n",
              column([](const ArmSeedResult& r) { return double(r.iters_token); }),
              column([](const ArmSeedResult& r) { return double(r.iters_sequence); }));
  std::printf("  t1 median win rate vs SFT: token %.4f sequence %.4f\n",
              column([](const ArmSeedResult& r) { return r.win_token; }),
              column([](const ArmSeedResult& r) { return r.win_sequence; }));
  std::printf("  phase seconds: rm %.1f ppo %.1f eval %.1f\n", report.rm_seconds,
              report.ppo_seconds, report.eval_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grainrl: desk-scale fine-grained RLHF pipeline"};
  app.require_subcommand(1);
  CommonFlags common;
  app.add_option("--config", common.config_path,
                 "experiment config file (defaults: built-ins, which mirror "
                 "configs/defaults.cfg)");

  GenDataFlags gen_flags;
  CLI::App* gen = app.add_subcommand("gen-data", "build a minimal-edit preference dataset");
  gen->add_option("--n", gen_flags.n, "number of pairs to keep");
  gen->add_option("--editor", gen_flags.editor, "synthetic|external")
      ->check(CLI::IsMember({"synthetic", "external"}));
  gen->add_option("--endpoint", gen_flags.endpoint, "external editor endpoint URL");
  gen->add_option("--template", gen_flags.template_path, "editing prompt template file");
  gen->add_option("--timeout", gen_flags.timeout_sec, "external editor timeout (seconds)");
  gen->add_option("--seed", gen_flags.seed, "dataset seed");
  gen->add_option("--p-bad", gen_flags.p_bad, "flawed-generator bad-token rate");
  gen->add_option("--response-len", gen_flags.response_len, "content tokens per response");
  gen->add_option("--max-change-ratio", gen_flags.max_change_ratio, "max |U1|/T per pair");
  gen->add_option("--out", gen_flags.out, "output directory");

  DiffFlags diff_flags;
  CLI::App* diff = app.add_subcommand("diff", "align two responses and mark the changed tokens");
  diff->add_option("--original", diff_flags.original, "original response text")->required();
  diff->add_option("--edited", diff_flags.edited, "edited response text")->required();

  TrainRmFlags rm_flags;
  CLI::App* trm = app.add_subcommand("train-rm", "train a reward model on an edit dataset");
  trm->add_option("--data", rm_flags.data, "dataset JSONL path")->required();
  trm->add_option("--head", rm_flags.head, "token|sequence")
      ->check(CLI::IsMember({"token", "sequence"}));
  trm->add_option("--loss", rm_flags.loss, "approx|full|sequence (default: from head/config)");
  trm->add_option("--seed", rm_flags.seed, "training seed");
  trm->add_option("--epochs", rm_flags.epochs, "training epochs");
  trm->add_option("--out", rm_flags.out, "output directory");

  TrainPpoFlags ppo_flags;
  CLI::App* tppo = app.add_subcommand("train-ppo", "PPO against a trained reward model");
  tppo->add_option("--rm", ppo_flags.rm, "reward-model checkpoint")->required();
  tppo->add_option("--sft", ppo_flags.sft,
                   "SFT policy checkpoint (omit to pre-train one here)");
  tppo->add_option("--scheme", ppo_flags.scheme, "token|sequence reward scheme")
      ->check(CLI::IsMember({"token", "sequence"}));
  tppo->add_option("--seed", ppo_flags.seed, "run seed");
  tppo->add_option("--max-iters", ppo_flags.max_iters, "iteration cap");
  tppo->add_option("--target", ppo_flags.target, "mean oracle reward stop target");
  tppo->add_option("--out", ppo_flags.out, "output directory");

  EvalFlags eval_flags;
  CLI::App* ev = app.add_subcommand("eval", "oracle-judge win rate of policy vs reference");
  ev->add_option("--policy", eval_flags.policy, "policy checkpoint")->required();
  ev->add_option("--reference", eval_flags.reference, "reference checkpoint")->required();
  ev->add_option("--judge", eval_flags.judge, "judge (oracle)");
  ev->add_option("--prompts", eval_flags.prompts, "number of eval prompts");
  ev->add_option("--seed", eval_flags.seed, "eval seed");
  ev->add_flag("--paired-seeds,!--independent-seeds", eval_flags.paired_seeds,
               "share per-prompt sampling seeds between the two policies");
  ev->add_option("--out", eval_flags.out, "output directory");

  ReportFlags report_flags;
  CLI::App* rep = app.add_subcommand("report", "run the full table experiments");
  rep->add_option("--out", report_flags.out, "run directory (default: config out_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(common, gen_flags);
    if (diff->parsed()) return run_diff(diff_flags);
    if (trm->parsed()) return run_train_rm(common, rm_flags);
    if (tppo->parsed()) return run_train_ppo(common, ppo_flags);
    if (ev->parsed()) return run_eval(common, eval_flags);
    if (rep->parsed()) return run_report(common, report_flags);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DatasetError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const HeadSchemeMismatchError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const UnknownTokenError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const VocabError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

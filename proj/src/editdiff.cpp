#include "grainrl/editdiff.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace grainrl {

namespace {

// Suffix-LCS table: dp[i][j] = LCS length of a[i:], b[j:].
std::vector<std::vector<int>> suffix_lcs(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  std::vector<std::vector<int>> dp(static_cast<size_t>(n) + 1,
                                   std::vector<int>(static_cast<size_t>(m) + 1, 0));
  for (int i = n - 1; i >= 0; --i)
    for (int j = m - 1; j >= 0; --j)
      dp[i][j] = (a[static_cast<size_t>(i)] == b[static_cast<size_t>(j)])
                     ? dp[i + 1][j + 1] + 1
                     : std::max(dp[i + 1][j], dp[i][j + 1]);
  return dp;
}

}  // namespace

Alignment align(const TokenSequence& original, const TokenSequence& edited) {
  if (original.empty() || edited.empty())
    throw EmptySequenceError("align: both sequences must be non-empty");

  const auto& a = original.ids;
  const auto& b = edited.ids;
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  const auto dp = suffix_lcs(a, b);

  Alignment out;
  // Greedy extraction of the lexicographically smallest maximum matching:
  // at each step take the smallest (o, e) that still completes an optimum.
  int i = 0, j = 0;
  int remaining = dp[0][0];
  while (remaining > 0) {
    bool took = false;
    for (int o = i; o < n && !took; ++o) {
      if (dp[o][j] != remaining) break;  // skipping rows i..o-1 no longer preserves the optimum
      for (int e = j; e < m; ++e) {
        if (a[static_cast<size_t>(o)] == b[static_cast<size_t>(e)] &&
            1 + dp[o + 1][e + 1] == remaining) {
          out.matched.emplace_back(o, e);
          i = o + 1;
          j = e + 1;
          --remaining;
          took = true;
          break;
        }
      }
    }
  }

  size_t k = 0;
  for (int t = 0; t < n; ++t) {
    while (k < out.matched.size() && out.matched[k].first < t) ++k;
    if (k >= out.matched.size() || out.matched[k].first != t) out.u1_original.push_back(t);
  }
  k = 0;
  std::vector<std::pair<int, int>> by_edit = out.matched;  // already increasing in both coords
  for (int t = 0; t < m; ++t) {
    while (k < by_edit.size() && by_edit[k].second < t) ++k;
    if (k >= by_edit.size() || by_edit[k].second != t) out.u1_edited.push_back(t);
  }
  return out;
}

TokenSequence synthetic_edit(const Vocabulary& vocab, const TokenSequence& /*prompt*/,
                             const TokenSequence& response, uint64_t seed) {
  TokenSequence out = response;
  const auto& good = vocab.good_ids();
  for (size_t pos = 0; pos < out.ids.size(); ++pos) {
    if (vocab.is_bad(out.ids[pos])) {
      const uint64_t pick = derive_seed(seed, pos) % good.size();
      out.ids[pos] = good[static_cast<size_t>(pick)];
    }
  }
  return out;
}

std::string load_edit_template(const std::string& path_or_empty) {
  static const char* kBuiltin =
      "You are a careful text editor. You will receive an instruction and a draft "
      "response. Rewrite the response so it follows the instruction better while "
      "changing as little as possible: keep every part that is already fine and "
      "replace only the words that need improvement. Reply with the edited "
      "response and nothing else.";
  if (path_or_empty.empty()) return kBuiltin;
  std::ifstream in(path_or_empty);
  if (!in) throw ConfigError("cannot open edit template: " + path_or_empty);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

TokenSequence external_edit(const Vocabulary& vocab, const TokenSequence& prompt,
                            const TokenSequence& response, const EditorBackend& backend) {
  if (backend.kind != EditorBackend::Kind::external)
    throw ConfigError("external_edit: backend kind must be external");
  if (backend.endpoint.empty()) throw ConfigError("external_edit: endpoint not set");

  nlohmann::json body;
  body["system"] = load_edit_template(backend.template_path);
  body["instruction"] = vocab.detokenize(prompt);
  body["response"] = vocab.detokenize(response);

  httplib::Client client(backend.endpoint);
  const auto sec = static_cast<time_t>(backend.timeout_sec);
  const auto usec = static_cast<time_t>((backend.timeout_sec - static_cast<double>(sec)) * 1e6);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);

  httplib::Result res = client.Post("/edit", body.dump(), "application/json");
  if (!res)
    throw TimeoutError("external editor unreachable or timed out: " + backend.endpoint);
  if (res->status != 200)
    throw MalformedResponseError("external editor returned status " + std::to_string(res->status));

  nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
  if (reply.is_discarded() || !reply.contains("edited") || !reply["edited"].is_string())
    throw MalformedResponseError("external editor reply is not {\"edited\": string}");

  return vocab.tokenize(reply["edited"].get<std::string>(), Role::response);
}

std::vector<EditPair> build_dataset(const Vocabulary& vocab, int n_pairs,
                                    const EditorBackend& backend, uint64_t seed,
                                    DatasetStats* stats, const BuildOptions& options) {
  if (n_pairs < 1) throw ConfigError("build_dataset: n_pairs must be >= 1");

  DatasetStats local;
  std::vector<EditPair> pairs;
  pairs.reserve(static_cast<size_t>(n_pairs));
  double ratio_sum = 0.0;

  for (uint64_t attempt = 0; static_cast<int>(pairs.size()) < n_pairs; ++attempt) {
    ++local.attempts;
    EditPair pair;
    pair.prompt = vocab.sample_prompt(derive_seed(seed, 1, attempt));

    Rng rng(derive_seed(seed, 2, attempt));
    pair.original.role = Role::response;
    for (int t = 0; t < options.response_len; ++t) {
      if (rng.u01() < options.p_bad) {
        pair.original.ids.push_back(
            vocab.bad_ids()[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(vocab.bad_ids().size()) - 1))]);
      } else {
        pair.original.ids.push_back(
            vocab.neutral_ids()[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(vocab.neutral_ids().size()) - 1))]);
      }
    }
    pair.original.ids.push_back(vocab.eos());

    pair.edited = (backend.kind == EditorBackend::Kind::synthetic)
                      ? synthetic_edit(vocab, pair.prompt, pair.original, derive_seed(seed, 3, attempt))
                      : external_edit(vocab, pair.prompt, pair.original, backend);
    pair.align = align(pair.original, pair.edited);

    if (pair.align.u1_edited.empty()) {
      ++local.dropped_empty_u1;
      continue;
    }
    const double ratio = std::max(
        static_cast<double>(pair.align.u1_original.size()) / pair.original.size(),
        static_cast<double>(pair.align.u1_edited.size()) / pair.edited.size());
    if (ratio > options.max_change_ratio) {
      ++local.dropped_change_ratio;
      continue;
    }
    ratio_sum += static_cast<double>(pair.align.u1_edited.size()) / pair.edited.size();
    pairs.push_back(std::move(pair));
  }

  local.kept = static_cast<int>(pairs.size());
  local.mean_change_ratio = local.kept ? ratio_sum / local.kept : 0.0;
  if (stats) *stats = local;
  return pairs;
}

void write_dataset_jsonl(const std::string& path, const Vocabulary& vocab,
                         const std::vector<EditPair>& pairs) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write dataset: " + path);
  for (const EditPair& p : pairs) {
    nlohmann::json rec;
    rec["prompt"] = vocab.detokenize(p.prompt);
    rec["original"] = vocab.detokenize(p.original);
    rec["edited"] = vocab.detokenize(p.edited);
    rec["u1_original"] = p.align.u1_original;
    rec["u1_edited"] = p.align.u1_edited;
    out << rec.dump() << "\n";
  }
}

std::vector<EditPair> read_dataset_jsonl(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset: " + path);
  std::vector<EditPair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (rec.is_discarded())
      throw DatasetError("dataset line " + std::to_string(line_no) + " is not valid JSON");
    EditPair p;
    try {
      p.prompt = vocab.tokenize(rec.at("prompt").get<std::string>(), Role::prompt);
      p.original = vocab.tokenize(rec.at("original").get<std::string>(), Role::response);
      p.edited = vocab.tokenize(rec.at("edited").get<std::string>(), Role::response);
      p.align = align(p.original, p.edited);
      if (p.align.u1_original != rec.at("u1_original").get<std::vector<int>>() ||
          p.align.u1_edited != rec.at("u1_edited").get<std::vector<int>>())
        throw DatasetError("dataset line " + std::to_string(line_no) +
                           ": stored u1 sets disagree with recomputed alignment");
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace grainrl

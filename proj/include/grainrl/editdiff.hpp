#ifndef GRAINRL_EDITDIFF_HPP_
#define GRAINRL_EDITDIFF_HPP_

#include <string>
#include <utility>
#include <vector>

#include "grainrl/corpus.hpp"

namespace grainrl {

// Token-level alignment between an original response and its edit.
// matched holds (orig_idx, edit_idx) pairs, strictly increasing in both
// coordinates; the u1 sets are the unmatched (changed) positions per side.
struct Alignment {
  std::vector<std::pair<int, int>> matched;
  std::vector<int> u1_original;
  std::vector<int> u1_edited;
};

struct EditPair {
  TokenSequence prompt;
  TokenSequence original;  // less preferred response the editor started from
  TokenSequence edited;    // minimally improved response
  Alignment align;
};

// Maximum-cardinality monotone matching of equal tokens (an LCS), ties broken
// by the lexicographically smallest match sequence. Throws EmptySequenceError.
Alignment align(const TokenSequence& original, const TokenSequence& edited);

struct EditorBackend {
  enum class Kind { synthetic, external };
  Kind kind = Kind::synthetic;
  std::string endpoint;       // external only, e.g. "http://127.0.0.1:8901"
  std::string template_path;  // prompt template; empty selects the built-in text
  double timeout_sec = 10.0;
};

// Replaces every bad-set token with a good-set token chosen deterministically
// from (seed, position); all other tokens pass through unchanged.
// Replacement rule: good_ids[derive_seed(seed, position) % |good|].
TokenSequence synthetic_edit(const Vocabulary& vocab, const TokenSequence& prompt,
                             const TokenSequence& response, uint64_t seed);

// POSTs {system, instruction, response} to <endpoint>/edit and tokenizes the
// {edited} reply. Throws TimeoutError, MalformedResponseError, UnknownTokenError.
TokenSequence external_edit(const Vocabulary& vocab, const TokenSequence& prompt,
                            const TokenSequence& response, const EditorBackend& backend);

// Minimal-edit directive sent as the request's system field.
std::string load_edit_template(const std::string& path_or_empty);

struct DatasetStats {
  int kept = 0;
  int dropped_empty_u1 = 0;
  int dropped_change_ratio = 0;
  int attempts = 0;
  double mean_change_ratio = 0.0;  // mean |u1_edited| / T_edited over kept pairs
};

struct BuildOptions {
  double p_bad = 0.25;           // per-token bad rate of the flawed generator
  int response_len = 12;         // content tokens before the terminal EOS
  double max_change_ratio = 0.5; // reject pairs whose |U1|/T exceeds this
};

// Samples prompts, draws flawed originals (neutral tokens with bad tokens at
// rate p_bad, EOS-terminated), edits each with the backend, aligns, and drops
// pairs whose edit changed nothing. Returns exactly n_pairs kept pairs.
std::vector<EditPair> build_dataset(const Vocabulary& vocab, int n_pairs,
                                    const EditorBackend& backend, uint64_t seed,
                                    DatasetStats* stats = nullptr,
                                    const BuildOptions& options = {});

// JSONL: one pair per line with prompt/original/edited text and both u1 sets.
void write_dataset_jsonl(const std::string& path, const Vocabulary& vocab,
                         const std::vector<EditPair>& pairs);
// Re-aligns on load and verifies the stored u1 sets; throws DatasetError.
std::vector<EditPair> read_dataset_jsonl(const std::string& path, const Vocabulary& vocab);

}  // namespace grainrl

#endif  // GRAINRL_EDITDIFF_HPP_

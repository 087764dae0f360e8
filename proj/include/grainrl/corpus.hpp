#ifndef GRAINRL_CORPUS_HPP_
#define GRAINRL_CORPUS_HPP_

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "grainrl/errors.hpp"
#include "grainrl/rng.hpp"

namespace grainrl {

using TokenId = int;

// Hard cap on response length; rollouts truncate here.
inline constexpr int kMaxResponseLen = 24;

enum class Role { prompt, response };

struct TokenSequence {
  std::vector<TokenId> ids;
  Role role = Role::response;

  int size() const { return static_cast<int>(ids.size()); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSequence& o) const { return ids == o.ids && role == o.role; }
};

// Ground-truth per-token preference signal. Stands in for a human judge.
struct OracleSpec {
  double good_reward = 1.0;
  double bad_reward = -1.0;
  double neutral_reward = 0.0;

  void validate() const {
    if (!(good_reward > neutral_reward && neutral_reward > bad_reward))
      throw ConfigError("OracleSpec requires good > neutral > bad");
  }
};

// Fixed toy vocabulary for the synthetic politeness task. Token ids are
// file/definition order; good/bad/special/neutral sets are pairwise disjoint.
class Vocabulary {
 public:
  // 64 tokens: 8 good, 8 bad, 3 special, 45 neutral.
  static Vocabulary standard();

  // Text file with #GOOD/#BAD/#SPECIAL/#NEUTRAL section markers, one token
  // per line; ids are assigned in file order.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<size_t>(id)); }
  TokenId id_of(const std::string& word) const;

  bool is_good(TokenId id) const { return kind_.at(static_cast<size_t>(id)) == Kind::good; }
  bool is_bad(TokenId id) const { return kind_.at(static_cast<size_t>(id)) == Kind::bad; }
  bool is_special(TokenId id) const { return kind_.at(static_cast<size_t>(id)) == Kind::special; }
  bool is_neutral(TokenId id) const { return kind_.at(static_cast<size_t>(id)) == Kind::neutral; }

  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId pad() const { return pad_; }

  const std::vector<TokenId>& good_ids() const { return good_; }
  const std::vector<TokenId>& bad_ids() const { return bad_; }
  const std::vector<TokenId>& neutral_ids() const { return neutral_; }

  // Whitespace tokenization over vocabulary words; throws UnknownTokenError.
  TokenSequence tokenize(const std::string& text, Role role = Role::response) const;
  std::string detokenize(const TokenSequence& seq) const;

  double oracle_token_reward(TokenId id, const OracleSpec& spec) const;
  // Mean of oracle_token_reward over the response; throws EmptyResponseError.
  double oracle_sequence_reward(const TokenSequence& response, const OracleSpec& spec) const;

  // BOS followed by 3..8 neutral tokens; pure function of the seed.
  TokenSequence sample_prompt(uint64_t seed) const;

 private:
  enum class Kind : uint8_t { good, bad, special, neutral };

  void finalize();  // builds indices, checks invariants

  std::vector<std::string> tokens_;
  std::vector<Kind> kind_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<TokenId> good_, bad_, neutral_;
  TokenId bos_ = -1, eos_ = -1, pad_ = -1;
};

}  // namespace grainrl

#endif  // GRAINRL_CORPUS_HPP_

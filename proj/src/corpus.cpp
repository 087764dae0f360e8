#include "grainrl/corpus.hpp"

#include <fstream>
#include <sstream>

namespace grainrl {

namespace {

const char* kGoodWords[] = {"please",    "thanks",   "kindly",    "gladly",
                            "welcome",   "appreciate", "wonderful", "delighted"};

const char* kBadWords[] = {"ugh",     "darn",     "whatever", "nonsense",
                           "rubbish", "dreadful", "awful",    "nope"};

const char* kNeutralWords[] = {
    "hello", "the",   "a",     "an",    "to",    "of",    "in",    "on",
    "at",    "by",    "for",   "with",  "and",   "or",    "but",   "if",
    "then",  "so",    "we",    "you",   "they",  "it",    "this",  "that",
    "here",  "there", "now",   "today", "again", "about", "like",  "just",
    "very",  "quite", "some",  "any",   "more",  "less",  "one",   "two",
    "time",  "day",   "way",   "thing", "note"};

constexpr const char* kBosWord = "<bos>";
constexpr const char* kEosWord = "<eos>";
constexpr const char* kPadWord = "<pad>";

}  // namespace

Vocabulary Vocabulary::standard() {
  Vocabulary v;
  auto push = [&v](const std::string& w, Kind k) {
    v.tokens_.push_back(w);
    v.kind_.push_back(k);
  };
  for (const char* w : kGoodWords) push(w, Kind::good);
  for (const char* w : kBadWords) push(w, Kind::bad);
  push(kBosWord, Kind::special);
  push(kEosWord, Kind::special);
  push(kPadWord, Kind::special);
  for (const char* w : kNeutralWords) push(w, Kind::neutral);
  v.finalize();
  return v;
}

void Vocabulary::finalize() {
  index_.clear();
  good_.clear();
  bad_.clear();
  neutral_.clear();
  bos_ = eos_ = pad_ = -1;
  std::vector<TokenId> special;
  for (TokenId id = 0; id < size(); ++id) {
    const std::string& w = tokens_[static_cast<size_t>(id)];
    if (index_.count(w)) throw VocabError("duplicate token: " + w);
    index_[w] = id;
    switch (kind_[static_cast<size_t>(id)]) {
      case Kind::good: good_.push_back(id); break;
      case Kind::bad: bad_.push_back(id); break;
      case Kind::neutral: neutral_.push_back(id); break;
      case Kind::special: special.push_back(id); break;
    }
  }
  if (special.size() != 3) throw VocabError("expected exactly 3 special tokens (BOS, EOS, PAD)");
  bos_ = special[0];
  eos_ = special[1];
  pad_ = special[2];
  if (size() < 16) throw VocabError("vocabulary too small; need at least 16 tokens");
  if (good_.empty() || bad_.empty() || neutral_.empty())
    throw VocabError("good, bad, and neutral sets must all be non-empty");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw VocabError("cannot open vocabulary file: " + path);
  Vocabulary v;
  Kind current = Kind::neutral;
  bool saw_marker = false;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line == "#GOOD") current = Kind::good;
      else if (line == "#BAD") current = Kind::bad;
      else if (line == "#SPECIAL") current = Kind::special;
      else if (line == "#NEUTRAL") current = Kind::neutral;
      else throw VocabError("unknown section marker: " + line);
      saw_marker = true;
      continue;
    }
    if (!saw_marker) throw VocabError("token line before any section marker: " + line);
    v.tokens_.push_back(line);
    v.kind_.push_back(current);
  }
  v.finalize();
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw VocabError("cannot write vocabulary file: " + path);
  auto section = [&](const char* marker, Kind k) {
    out << marker << "\n";
    for (TokenId id = 0; id < size(); ++id)
      if (kind_[static_cast<size_t>(id)] == k) out << tokens_[static_cast<size_t>(id)] << "\n";
  };
  section("#GOOD", Kind::good);
  section("#BAD", Kind::bad);
  section("#SPECIAL", Kind::special);
  section("#NEUTRAL", Kind::neutral);
}

TokenId Vocabulary::id_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw UnknownTokenError("unknown token: " + word);
  return it->second;
}

TokenSequence Vocabulary::tokenize(const std::string& text, Role role) const {
  TokenSequence seq;
  seq.role = role;
  std::istringstream ss(text);
  std::string word;
  while (ss >> word) seq.ids.push_back(id_of(word));
  return seq;
}

std::string Vocabulary::detokenize(const TokenSequence& seq) const {
  std::string out;
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    if (i) out += ' ';
    out += token(seq.ids[i]);
  }
  return out;
}

double Vocabulary::oracle_token_reward(TokenId id, const OracleSpec& spec) const {
  if (id < 0 || id >= size()) throw VocabError("token id out of range");
  if (is_good(id)) return spec.good_reward;
  if (is_bad(id)) return spec.bad_reward;
  return spec.neutral_reward;  // neutral and special tokens
}

double Vocabulary::oracle_sequence_reward(const TokenSequence& response, const OracleSpec& spec) const {
  if (response.empty()) throw EmptyResponseError("oracle_sequence_reward: empty response");
  double sum = 0.0;
  for (TokenId id : response.ids) sum += oracle_token_reward(id, spec);
  return sum / static_cast<double>(response.size());
}

TokenSequence Vocabulary::sample_prompt(uint64_t seed) const {
  Rng rng(derive_seed(seed, /*stream=*/0x70726f6d70ULL));  // "promp"
  TokenSequence seq;
  seq.role = Role::prompt;
  seq.ids.push_back(bos_);
  const int len = rng.uniform_int(3, 8);
  for (int i = 0; i < len; ++i)
    seq.ids.push_back(neutral_[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(neutral_.size()) - 1))]);
  return seq;
}

}  // namespace grainrl

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xconst/vocab.hpp"

namespace xconst {

using Tokens = std::vector<int>;

/// The synthetic multilingual world: K cipher languages over a shared concept
/// vocabulary. Language l renders concept c as token offset(l) + c.
struct LanguageSuite {
  int num_languages = 0;   // K
  int concept_vocab = 0;   // Vc
  int reserved_count = kMinReserved;
  int center = 0;
  std::uint64_t seed = 0;

  int vocab_size() const { return reserved_count + num_languages + num_languages * concept_vocab; }
  int tag(int lang) const { return reserved_count + lang; }
  int offset(int lang) const { return reserved_count + num_languages + lang * concept_vocab; }
  int encode(int lang, int concept_id) const { return offset(lang) + concept_id; }
  bool is_surface(int token) const { return token >= offset(0) && token < vocab_size(); }
  /// (lang, concept) of a surface token; nullopt for reserved and tag ids.
  std::optional<std::pair<int, int>> decode(int token) const;
  bool valid_lang(int lang) const { return lang >= 0 && lang < num_languages; }

  friend bool operator==(const LanguageSuite&, const LanguageSuite&) = default;
};

LanguageSuite build_language_suite(int num_languages, int concept_vocab, int center, std::uint64_t seed,
                                   int reserved_count = kMinReserved);

/// Row-stochastic Vc x Vc concept transition matrix of the suite's Markov source,
/// rows drawn from a symmetric Dirichlet(0.5).
std::vector<std::vector<double>> transition_matrix(const LanguageSuite& suite);

using ConceptSentence = std::vector<int>;

struct LengthRange {
  int min = 1;
  int max = 1;
};

/// Samples n sentences from the suite's first-order Markov chain. The first
/// concept is uniform; each sentence's randomness is keyed by (seed, index).
std::vector<ConceptSentence> sample_concept_corpus(const LanguageSuite& suite, int n, LengthRange len,
                                                   std::uint64_t seed);

/// Surface tokens of a concept sentence. With reorder on, odd languages swap
/// adjacent pairs (2i, 2i+1).
Tokens render_sentence(const LanguageSuite& suite, const ConceptSentence& concepts, int lang, bool reorder);
/// Inverse of render_sentence; throws DataError on tokens outside lang's range.
ConceptSentence inverse_render(const LanguageSuite& suite, const Tokens& tokens, int lang, bool reorder);

struct Direction {
  int src = 0;
  int tgt = 0;
  friend auto operator<=>(const Direction&, const Direction&) = default;
};

std::string direction_name(const Direction& d);

/// All (l, center) and (center, l) directions.
std::vector<Direction> center_directions(const LanguageSuite& suite);
/// Every ordered pair of distinct languages not in `supervised`.
std::vector<Direction> complement_directions(const LanguageSuite& suite, const std::vector<Direction>& supervised);

struct ParallelExample {
  int src_lang = 0;
  int tgt_lang = 0;
  Tokens src_tokens;
  Tokens tgt_tokens;
  ConceptSentence concepts;

  friend bool operator==(const ParallelExample&, const ParallelExample&) = default;
};

/// One example per (sentence, direction), shuffled deterministically by seed.
std::vector<ParallelExample> make_parallel_dataset(const std::vector<ConceptSentence>& corpus,
                                                   const LanguageSuite& suite,
                                                   const std::vector<Direction>& directions, bool reorder,
                                                   std::uint64_t seed);

struct FilterOptions {
  int max_src_len = 0;  // 0 disables the length filter
  bool dedup = true;
  bool langid_check = true;
};

std::vector<ParallelExample> filter_pairs(const LanguageSuite& suite, std::vector<ParallelExample> pairs,
                                          const FilterOptions& options);

struct LangId {
  enum class Kind { kLang, kOffTarget, kEmpty };
  Kind kind = Kind::kEmpty;
  int lang = -1;

  static LangId of(int l) { return {Kind::kLang, l}; }
  static LangId off_target() { return {Kind::kOffTarget, -1}; }
  static LangId empty() { return {Kind::kEmpty, -1}; }
  bool is(int l) const { return kind == Kind::kLang && lang == l; }
  friend bool operator==(const LangId&, const LangId&) = default;
};

/// Language whose surface range holds strictly more than 80% of the content
/// tokens; reserved and tag ids are ignored.
LangId identify_language(const LanguageSuite& suite, const Tokens& tokens);

// Serialization ------------------------------------------------------------

std::string suite_to_json(const LanguageSuite& suite);
LanguageSuite suite_from_json(const std::string& text);

/// `src_lang<TAB>tgt_lang<TAB>src tokens<TAB>tgt tokens`, one example per line.
void write_dataset(std::ostream& out, const std::vector<ParallelExample>& examples);
/// Concepts are recovered from the target side, so the suite and reorder flag
/// used at generation time are required.
std::vector<ParallelExample> read_dataset(std::istream& in, const LanguageSuite& suite, bool reorder);

std::string join_tokens(const Tokens& tokens);
Tokens parse_tokens(const std::string& text);

}  // namespace xconst

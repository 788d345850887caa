#include "xconst/corpus.hpp"

#include <algorithm>
#include <istream>
#include <json.hpp>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "xconst/error.hpp"
#include "xconst/rng.hpp"

namespace xconst {

namespace {

double unit_double(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

void swap_pairs(Tokens& t) {
  for (std::size_t i = 0; i + 1 < t.size(); i += 2) std::swap(t[i], t[i + 1]);
}

}  // namespace

std::optional<std::pair<int, int>> LanguageSuite::decode(int token) const {
  if (!is_surface(token)) return std::nullopt;
  const int rel = token - offset(0);
  return std::make_pair(rel / concept_vocab, rel % concept_vocab);
}

LanguageSuite build_language_suite(int num_languages, int concept_vocab, int center, std::uint64_t seed,
                                   int reserved_count) {
  if (num_languages < 2) throw ConfigError("suite: need at least 2 languages, got " + std::to_string(num_languages));
  if (concept_vocab < 2) throw ConfigError("suite: concept vocabulary must be >= 2, got " + std::to_string(concept_vocab));
  if (center < 0 || center >= num_languages) throw ConfigError("suite: center " + std::to_string(center) + " out of range");
  if (reserved_count < kMinReserved) throw ConfigError("suite: reserved_count below " + std::to_string(kMinReserved));
  LanguageSuite s;
  s.num_languages = num_languages;
  s.concept_vocab = concept_vocab;
  s.reserved_count = reserved_count;
  s.center = center;
  s.seed = seed;
  return s;
}

std::vector<std::vector<double>> transition_matrix(const LanguageSuite& suite) {
  const int vc = suite.concept_vocab;
  Rng rng = make_rng(suite.seed, 0x6d61726b6f76ULL);
  std::gamma_distribution<double> gamma(0.5, 1.0);
  std::vector<std::vector<double>> m(vc, std::vector<double>(vc));
  for (auto& row : m) {
    double total = 0.0;
    for (double& v : row) total += (v = gamma(rng));
    if (total > 0.0) {
      for (double& v : row) v /= total;
    } else {
      std::fill(row.begin(), row.end(), 1.0 / vc);
    }
  }
  return m;
}

std::vector<ConceptSentence> sample_concept_corpus(const LanguageSuite& suite, int n, LengthRange len,
                                                   std::uint64_t seed) {
  if (n < 1) throw ConfigError("corpus: need at least one sentence");
  if (len.min < 1 || len.min > len.max) {
    throw ConfigError("corpus: invalid length range [" + std::to_string(len.min) + "," + std::to_string(len.max) + "]");
  }
  const auto trans = transition_matrix(suite);
  const int vc = suite.concept_vocab;
  std::vector<ConceptSentence> out(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
    const int length = len.min + static_cast<int>(uniform_index(rng(), len.max - len.min + 1));
    ConceptSentence& s = out[i];
    s.reserve(length);
    s.push_back(static_cast<int>(uniform_index(rng(), vc)));
    while (static_cast<int>(s.size()) < length) {
      const auto& row = trans[s.back()];
      const double u = unit_double(rng());
      double acc = 0.0;
      int next = vc - 1;
      for (int c = 0; c < vc; ++c) {
        acc += row[c];
        if (u < acc) {
          next = c;
          break;
        }
      }
      s.push_back(next);
    }
  }
  return out;
}

Tokens render_sentence(const LanguageSuite& suite, const ConceptSentence& concepts, int lang, bool reorder) {
  if (!suite.valid_lang(lang)) throw ConfigError("render: language " + std::to_string(lang) + " out of range");
  Tokens out;
  out.reserve(concepts.size());
  for (int c : concepts) {
    if (c < 0 || c >= suite.concept_vocab) throw DataError("render: concept id " + std::to_string(c) + " out of range");
    out.push_back(suite.encode(lang, c));
  }
  if (reorder && lang % 2 == 1) swap_pairs(out);
  return out;
}

ConceptSentence inverse_render(const LanguageSuite& suite, const Tokens& tokens, int lang, bool reorder) {
  Tokens t = tokens;
  if (reorder && lang % 2 == 1) swap_pairs(t);
  ConceptSentence out;
  out.reserve(t.size());
  for (int tok : t) {
    const auto lc = suite.decode(tok);
    if (!lc || lc->first != lang) {
      throw DataError("token " + std::to_string(tok) + " is not in language " + std::to_string(lang));
    }
    out.push_back(lc->second);
  }
  return out;
}

std::string direction_name(const Direction& d) { return std::to_string(d.src) + "-" + std::to_string(d.tgt); }

std::vector<Direction> center_directions(const LanguageSuite& suite) {
  std::vector<Direction> out;
  for (int l = 0; l < suite.num_languages; ++l) {
    if (l == suite.center) continue;
    out.push_back({l, suite.center});
    out.push_back({suite.center, l});
  }
  return out;
}

std::vector<Direction> complement_directions(const LanguageSuite& suite, const std::vector<Direction>& supervised) {
  std::vector<Direction> out;
  for (int s = 0; s < suite.num_languages; ++s) {
    for (int t = 0; t < suite.num_languages; ++t) {
      const Direction d{s, t};
      if (s != t && std::find(supervised.begin(), supervised.end(), d) == supervised.end()) out.push_back(d);
    }
  }
  return out;
}

std::vector<ParallelExample> make_parallel_dataset(const std::vector<ConceptSentence>& corpus,
                                                   const LanguageSuite& suite,
                                                   const std::vector<Direction>& directions, bool reorder,
                                                   std::uint64_t seed) {
  for (const auto& d : directions) {
    if (d.src == d.tgt) throw ConfigError("direction " + direction_name(d) + " has identical source and target");
    if (!suite.valid_lang(d.src) || !suite.valid_lang(d.tgt)) throw ConfigError("direction " + direction_name(d) + " out of range");
  }
  std::vector<ParallelExample> out;
  out.reserve(corpus.size() * directions.size());
  for (const auto& sentence : corpus) {
    for (const auto& d : directions) {
      out.push_back({d.src, d.tgt, render_sentence(suite, sentence, d.src, reorder),
                     render_sentence(suite, sentence, d.tgt, reorder), sentence});
    }
  }
  Rng rng = make_rng(seed, 0x73687566ULL);
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[uniform_index(rng(), i)]);
  return out;
}

std::vector<ParallelExample> filter_pairs(const LanguageSuite& suite, std::vector<ParallelExample> pairs,
                                          const FilterOptions& options) {
  std::set<std::pair<Tokens, Tokens>> seen;
  std::vector<ParallelExample> out;
  for (auto& p : pairs) {
    if (options.max_src_len > 0 && static_cast<int>(p.src_tokens.size()) > options.max_src_len) continue;
    if (options.langid_check && (!identify_language(suite, p.src_tokens).is(p.src_lang) ||
                                 !identify_language(suite, p.tgt_tokens).is(p.tgt_lang))) {
      continue;
    }
    if (options.dedup && !seen.insert({p.src_tokens, p.tgt_tokens}).second) continue;
    out.push_back(std::move(p));
  }
  return out;
}

LangId identify_language(const LanguageSuite& suite, const Tokens& tokens) {
  std::vector<int> counts(suite.num_languages, 0);
  int content = 0;
  for (int t : tokens) {
    if (const auto lc = suite.decode(t)) {
      ++counts[lc->first];
      ++content;
    }
  }
  if (content == 0) return LangId::empty();
  const auto best = std::max_element(counts.begin(), counts.end());
  // strictly more than 80%: count / content > 4/5
  if (5 * static_cast<long long>(*best) > 4 * static_cast<long long>(content)) {
    return LangId::of(static_cast<int>(best - counts.begin()));
  }
  return LangId::off_target();
}

std::string suite_to_json(const LanguageSuite& suite) {
  nlohmann::ordered_json j;
  j["num_languages"] = suite.num_languages;
  j["concept_vocab"] = suite.concept_vocab;
  j["reserved_count"] = suite.reserved_count;
  j["center"] = suite.center;
  j["seed"] = suite.seed;
  std::vector<int> offsets;
  for (int l = 0; l < suite.num_languages; ++l) offsets.push_back(suite.offset(l));
  j["offsets"] = offsets;
  j["vocab_size"] = suite.vocab_size();
  return j.dump(2) + "\n";
}

LanguageSuite suite_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    LanguageSuite s = build_language_suite(j.at("num_languages").get<int>(), j.at("concept_vocab").get<int>(),
                                           j.at("center").get<int>(), j.at("seed").get<std::uint64_t>(),
                                           j.at("reserved_count").get<int>());
    const auto offsets = j.at("offsets").get<std::vector<int>>();
    if (static_cast<int>(offsets.size()) != s.num_languages) throw DataError("suite: offsets length mismatch");
    for (int l = 0; l < s.num_languages; ++l) {
      if (offsets[l] != s.offset(l)) throw DataError("suite: offset of language " + std::to_string(l) + " inconsistent");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("suite: ") + e.what());
  }
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(tokens[i]);
  }
  return out;
}

Tokens parse_tokens(const std::string& text) {
  Tokens out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(word, &used));
      if (used != word.size()) throw std::invalid_argument(word);
    } catch (const std::exception&) {
      throw DataError("malformed token '" + word + "'");
    }
  }
  return out;
}

void write_dataset(std::ostream& out, const std::vector<ParallelExample>& examples) {
  for (const auto& e : examples) {
    out << e.src_lang << '\t' << e.tgt_lang << '\t' << join_tokens(e.src_tokens) << '\t' << join_tokens(e.tgt_tokens)
        << '\n';
  }
}

std::vector<ParallelExample> read_dataset(std::istream& in, const LanguageSuite& suite, bool reorder) {
  std::vector<ParallelExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1) {
      fields.push_back(line.substr(start, pos - start));
    }
    fields.push_back(line.substr(start));
    if (fields.size() != 4) throw DataError("dataset line " + std::to_string(lineno) + ": expected 4 fields");
    ParallelExample e;
    try {
      e.src_lang = std::stoi(fields[0]);
      e.tgt_lang = std::stoi(fields[1]);
    } catch (const std::exception&) {
      throw DataError("dataset line " + std::to_string(lineno) + ": bad language index");
    }
    if (!suite.valid_lang(e.src_lang) || !suite.valid_lang(e.tgt_lang)) {
      throw DataError("dataset line " + std::to_string(lineno) + ": language out of range");
    }
    e.src_tokens = parse_tokens(fields[2]);
    e.tgt_tokens = parse_tokens(fields[3]);
    e.concepts = inverse_render(suite, e.tgt_tokens, e.tgt_lang, reorder);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace xconst

#include "xconst/eval.hpp"

#include <cmath>
#include <fmt/format.h>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "xconst/error.hpp"

namespace xconst {

namespace {

std::map<Tokens, int> ngram_counts(const Tokens& s, int n) {
  std::map<Tokens, int> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Tokens(s.begin() + i, s.begin() + i + n)];
  return counts;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

SplitKind parse_split(const std::string& s) {
  for (SplitKind k : {SplitKind::kSupervised, SplitKind::kZeroShot, SplitKind::kPivot}) {
    if (split_name(k) == s) return k;
  }
  throw DataError("unknown split kind '" + s + "'");
}

}  // namespace

double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, int max_n,
                   Smoothing smoothing) {
  if (hypotheses.size() != references.size()) {
    throw ContractError(fmt::format("bleu: {} hypotheses vs {} references", hypotheses.size(), references.size()));
  }
  if (hypotheses.empty()) throw ContractError("bleu: empty hypothesis set");
  if (max_n < 1) throw ConfigError("bleu: max_n must be >= 1");
  std::vector<long long> matches(max_n + 1, 0), totals(max_n + 1, 0);
  long long hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const Tokens& h = hypotheses[i];
    const Tokens& r = references[i];
    hyp_len += static_cast<long long>(h.size());
    ref_len += static_cast<long long>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      const auto hc = ngram_counts(h, n);
      const auto rc = ngram_counts(r, n);
      for (const auto& [gram, c] : hc) {
        const auto it = rc.find(gram);
        if (it != rc.end()) matches[n] += std::min(c, it->second);
      }
      totals[n] += std::max<long long>(0, static_cast<long long>(h.size()) - n + 1);
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    double m = static_cast<double>(matches[n]);
    double t = static_cast<double>(totals[n]);
    if (smoothing == Smoothing::kAdd1 && n >= 2) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
  return 100.0 * bp * std::exp(log_sum / max_n);
}

double off_target_ratio(const std::vector<Tokens>& hypotheses, const std::vector<int>& tgt_langs,
                        const LanguageSuite& suite) {
  if (hypotheses.size() != tgt_langs.size()) throw ContractError("off_target_ratio: misaligned inputs");
  if (hypotheses.empty()) return 0.0;
  int wrong = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (!identify_language(suite, hypotheses[i]).is(tgt_langs[i])) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(hypotheses.size());
}

double exact_match(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.size() != references.size()) throw ContractError("exact_match: misaligned inputs");
  if (hypotheses.empty()) return 0.0;
  int same = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) same += hypotheses[i] == references[i];
  return static_cast<double>(same) / static_cast<double>(hypotheses.size());
}

std::string split_name(SplitKind k) {
  switch (k) {
    case SplitKind::kSupervised: return "supervised";
    case SplitKind::kZeroShot: return "zeroshot";
    case SplitKind::kPivot: return "pivot";
  }
  return "?";
}

const AggregateRow* EvalReport::aggregate(SplitKind k) const {
  for (const auto& a : aggregates) {
    if (a.kind == k) return &a;
  }
  return nullptr;
}

std::vector<AggregateRow> aggregate_rows(const std::vector<DirectionRow>& rows) {
  std::vector<AggregateRow> out;
  for (SplitKind k : {SplitKind::kSupervised, SplitKind::kZeroShot, SplitKind::kPivot}) {
    AggregateRow a;
    a.kind = k;
    for (const auto& r : rows) {
      if (r.kind != k) continue;
      a.bleu += r.bleu;
      a.off_target += r.off_target;
      a.exact += r.exact;
      a.n_sentences += r.n_sentences;
      ++a.n_directions;
    }
    if (a.n_directions == 0) continue;
    a.bleu /= a.n_directions;
    a.off_target /= a.n_directions;
    a.exact /= a.n_directions;
    out.push_back(a);
  }
  return out;
}

EvalReport evaluate_with(const Translator& translator, const LanguageSuite& suite,
                         const std::vector<ParallelExample>& testset, const EvalOptions& options) {
  auto score = [&](SplitKind kind, const Direction& d) {
    std::vector<Tokens> hyps, refs;
    std::vector<int> langs;
    for (const auto& e : testset) {
      if (e.src_lang != d.src || e.tgt_lang != d.tgt) continue;
      hyps.push_back(translator(e, kind == SplitKind::kPivot));
      refs.push_back(e.tgt_tokens);
      langs.push_back(d.tgt);
    }
    if (hyps.empty()) throw DataError("test set has no pairs for direction " + direction_name(d));
    DirectionRow row;
    row.kind = kind;
    row.direction = d;
    row.bleu = corpus_bleu(hyps, refs, 4, options.smoothing);
    row.off_target = off_target_ratio(hyps, langs, suite);
    row.exact = exact_match(hyps, refs);
    row.n_sentences = static_cast<int>(hyps.size());
    return row;
  };
  EvalReport report;
  for (const auto& d : options.supervised) report.rows.push_back(score(SplitKind::kSupervised, d));
  for (const auto& d : options.zero_shot) report.rows.push_back(score(SplitKind::kZeroShot, d));
  if (options.pivot) {
    for (const auto& d : options.zero_shot) report.rows.push_back(score(SplitKind::kPivot, d));
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

EvalReport evaluate(const ModelParams& params, const LanguageSuite& suite, const std::vector<ParallelExample>& testset,
                    Strategy strategy, const DecodeConfig& cfg, const EvalOptions& options) {
  return evaluate_with(
      [&](const ParallelExample& e, bool pivot) -> Tokens {
        if (!pivot) return translate(params, suite, strategy, e.src_lang, e.tgt_lang, e.src_tokens, cfg);
        try {
          return pivot_translate(params, suite, strategy, e.src_lang, e.tgt_lang, e.src_tokens, cfg);
        } catch (const EmptyPivotError&) {
          return {};  // scored as a wrong translation
        }
      },
      suite, testset, options);
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "kind,src,tgt,bleu,off_target,exact_match,n_sentences,aggregate\n";
  for (const auto& r : report.rows) {
    out << fmt::format("{},{},{},{},{},{},{},0\n", split_name(r.kind), r.direction.src, r.direction.tgt, r.bleu,
                       r.off_target, r.exact, r.n_sentences);
  }
  for (const auto& a : report.aggregates) {
    out << fmt::format("{},,,{},{},{},{},1\n", split_name(a.kind), a.bleu, a.off_target, a.exact, a.n_sentences);
  }
}

EvalReport read_report_csv(std::istream& in) {
  EvalReport report;
  std::string line;
  if (!std::getline(in, line) || line.rfind("kind,src,tgt,bleu", 0) != 0) throw DataError("report: missing header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8) throw DataError("report: malformed row '" + line + "'");
    if (f[7] == "1") continue;  // aggregates are recomputed from the rows
    try {
      DirectionRow r;
      r.kind = parse_split(f[0]);
      r.direction = {std::stoi(f[1]), std::stoi(f[2])};
      r.bleu = std::stod(f[3]);
      r.off_target = std::stod(f[4]);
      r.exact = std::stod(f[5]);
      r.n_sentences = std::stoi(f[6]);
      report.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError("report: malformed row '" + line + "'");
    }
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

void write_report_markdown(std::ostream& out, const EvalReport& report, const std::string& title) {
  out << "## " << title << "\n\n";
  out << "| | Supervised | Zero-Shot | Pivot |\n|---|---|---|---|\n";
  auto cell = [&](SplitKind k, auto field) -> std::string {
    const AggregateRow* a = report.aggregate(k);
    return a ? fmt::format("{:.2f}", field(*a)) : std::string();
  };
  out << "| BLEU | " << cell(SplitKind::kSupervised, [](const AggregateRow& a) { return a.bleu; }) << " | "
      << cell(SplitKind::kZeroShot, [](const AggregateRow& a) { return a.bleu; }) << " | "
      << cell(SplitKind::kPivot, [](const AggregateRow& a) { return a.bleu; }) << " |\n";
  out << "| Off-target % | " << cell(SplitKind::kSupervised, [](const AggregateRow& a) { return 100 * a.off_target; })
      << " | " << cell(SplitKind::kZeroShot, [](const AggregateRow& a) { return 100 * a.off_target; }) << " | "
      << cell(SplitKind::kPivot, [](const AggregateRow& a) { return 100 * a.off_target; }) << " |\n";
  out << "| Exact % | " << cell(SplitKind::kSupervised, [](const AggregateRow& a) { return 100 * a.exact; }) << " | "
      << cell(SplitKind::kZeroShot, [](const AggregateRow& a) { return 100 * a.exact; }) << " | "
      << cell(SplitKind::kPivot, [](const AggregateRow& a) { return 100 * a.exact; }) << " |\n\n";
  out << "| Split | Direction | BLEU | Off-target % | Exact % | N |\n|---|---|---|---|---|---|\n";
  for (const auto& r : report.rows) {
    out << fmt::format("| {} | {} | {:.2f} | {:.1f} | {:.1f} | {} |\n", split_name(r.kind), direction_name(r.direction),
                       r.bleu, 100 * r.off_target, 100 * r.exact, r.n_sentences);
  }
}

}  // namespace xconst

#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "xconst/corpus.hpp"
#include "xconst/decode.hpp"
#include "xconst/model.hpp"
#include "xconst/prompt.hpp"

namespace xconst {

enum class Smoothing { kNone, kAdd1 };

/// Token-level corpus BLEU in [0, 100]: geometric mean of clipped n-gram
/// precisions times the brevity penalty. Add-one smoothing applies to n >= 2.
double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, int max_n = 4,
                   Smoothing smoothing = Smoothing::kNone);

/// Fraction of hypotheses not identified as their requested language (off-target
/// and empty outputs both count).
double off_target_ratio(const std::vector<Tokens>& hypotheses, const std::vector<int>& tgt_langs,
                        const LanguageSuite& suite);

double exact_match(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

enum class SplitKind { kSupervised, kZeroShot, kPivot };
std::string split_name(SplitKind k);

struct DirectionRow {
  SplitKind kind = SplitKind::kSupervised;
  Direction direction;
  double bleu = 0.0;
  double off_target = 0.0;
  double exact = 0.0;
  int n_sentences = 0;
};

struct AggregateRow {
  SplitKind kind = SplitKind::kSupervised;
  double bleu = 0.0;
  double off_target = 0.0;
  double exact = 0.0;
  int n_directions = 0;
  int n_sentences = 0;
};

struct EvalReport {
  std::vector<DirectionRow> rows;
  std::vector<AggregateRow> aggregates;  // unweighted means per split kind present

  const AggregateRow* aggregate(SplitKind k) const;
};

/// Direction-weighted means of the rows, one per split kind that has rows.
std::vector<AggregateRow> aggregate_rows(const std::vector<DirectionRow>& rows);

struct EvalOptions {
  std::vector<Direction> supervised;
  std::vector<Direction> zero_shot;
  bool pivot = false;  // also score zero-shot directions via the center language
  Smoothing smoothing = Smoothing::kAdd1;
};

/// Translation function used by evaluate; swapped out in tests for oracle models.
using Translator = std::function<Tokens(const ParallelExample& example, bool pivot)>;

EvalReport evaluate_with(const Translator& translator, const LanguageSuite& suite,
                         const std::vector<ParallelExample>& testset, const EvalOptions& options);

EvalReport evaluate(const ModelParams& params, const LanguageSuite& suite, const std::vector<ParallelExample>& testset,
                    Strategy strategy, const DecodeConfig& cfg, const EvalOptions& options);

/// `kind,src,tgt,bleu,off_target,exact_match,n_sentences,aggregate`.
void write_report_csv(std::ostream& out, const EvalReport& report);
EvalReport read_report_csv(std::istream& in);
/// Supervised | Zero-Shot | Pivot summary table.
void write_report_markdown(std::ostream& out, const EvalReport& report, const std::string& title);

}  // namespace xconst

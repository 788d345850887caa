#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "xconst/corpus.hpp"
#include "xconst/model.hpp"
#include "xconst/prompt.hpp"

namespace xconst {

/// groups[s][l]: representation of sentence s rendered in source language l,
/// prompted with the fixed target language.
struct RepresentationSet {
  std::vector<std::vector<std::vector<double>>> groups;
  Strategy strategy = Strategy::kTEnc;
  int tgt_lang = 0;
  std::string checkpoint_id;

  int num_groups() const { return static_cast<int>(groups.size()); }
  int num_languages() const { return groups.empty() ? 0 : static_cast<int>(groups[0].size()); }
};

RepresentationSet collect_representations(const ModelParams& params, const LanguageSuite& suite,
                                          const std::vector<ConceptSentence>& multiway, Strategy strategy,
                                          int tgt_lang, bool reorder);

struct PcaResult {
  std::vector<std::vector<double>> coordinates;  // one row per input vector
  std::vector<std::vector<double>> components;   // unit norm, variance-descending
  std::vector<double> explained;                 // fraction of total variance per component
  double total_variance = 0.0;
  bool degenerate = false;                       // no variance to explain
};

/// Mean-centred projection onto the top principal components of the sample
/// covariance. Each component's largest-magnitude entry is made positive.
PcaResult pca_project(const std::vector<std::vector<double>>& vectors, int out_dims = 2);

struct AlignmentScore {
  double score = 0.0;   // mean pairwise cosine distance, in [0, 2]
  int zero_norm = 0;    // vectors that contributed distance 1
};

AlignmentScore alignment_score(const RepresentationSet& reps);

/// `group_id,lang,x,y`, rows in (group, lang) order.
void write_coordinates_csv(std::ostream& out, const RepresentationSet& reps, const PcaResult& pca);

}  // namespace xconst

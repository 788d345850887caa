#include "xconst/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <ostream>

#include "xconst/error.hpp"

namespace xconst {

RepresentationSet collect_representations(const ModelParams& params, const LanguageSuite& suite,
                                          const std::vector<ConceptSentence>& multiway, Strategy strategy,
                                          int tgt_lang, bool reorder) {
  if (multiway.empty()) throw DataError("representation study needs at least one sentence");
  if (!suite.valid_lang(tgt_lang)) throw ConfigError("representation target language out of range");
  RepresentationSet reps;
  reps.strategy = strategy;
  reps.tgt_lang = tgt_lang;
  for (const auto& sentence : multiway) {
    std::vector<std::vector<double>> group;
    for (int l = 0; l < suite.num_languages; ++l) {
      const Tokens src = render_sentence(suite, sentence, l, reorder);
      const PromptRendering prompt = render(strategy, suite, l, tgt_lang, src, nullptr);
      group.push_back(extract_representation(params, prompt.token_ids));
    }
    reps.groups.push_back(std::move(group));
  }
  return reps;
}

PcaResult pca_project(const std::vector<std::vector<double>>& vectors, int out_dims) {
  if (out_dims < 1) throw ConfigError("pca: out_dims must be >= 1");
  const int n = static_cast<int>(vectors.size());
  if (n < out_dims + 1) throw DataError(fmt::format("pca: {} vectors for {} output dimensions", n, out_dims));
  const int d = static_cast<int>(vectors[0].size());
  if (d < out_dims) throw DataError("pca: input dimension below out_dims");
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(vectors[i].size()) != d) throw DataError("pca: vectors of unequal length");
    for (int j = 0; j < d; ++j) x(i, j) = vectors[i][j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw DataError("pca: eigendecomposition failed");

  PcaResult out;
  out.total_variance = cov.trace();
  const double scale = 1.0 + mu.squaredNorm();
  out.degenerate = !(out.total_variance > 1e-20 * scale);
  // Eigen returns ascending eigenvalues.
  for (int k = 0; k < out_dims; ++k) {
    const int col = d - 1 - k;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.components.emplace_back(v.data(), v.data() + d);
    const double lambda = std::max(0.0, eig.eigenvalues()(col));
    out.explained.push_back(out.degenerate ? 0.0 : lambda / out.total_variance);
  }
  out.coordinates.assign(n, std::vector<double>(out_dims));
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < out_dims; ++k) {
      const Eigen::Map<const Eigen::VectorXd> comp(out.components[k].data(), d);
      out.coordinates[i][k] = x.row(i).dot(comp);
    }
  }
  return out;
}

AlignmentScore alignment_score(const RepresentationSet& reps) {
  AlignmentScore out;
  if (reps.num_languages() < 2) throw DataError("alignment needs at least two languages per group");
  double total = 0.0;
  long long pairs = 0;
  for (const auto& group : reps.groups) {
    std::vector<double> norms;
    for (const auto& v : group) {
      double s = 0.0;
      for (double x : v) s += x * x;
      norms.push_back(std::sqrt(s));
      if (norms.back() == 0.0) ++out.zero_norm;
    }
    for (std::size_t a = 0; a < group.size(); ++a) {
      for (std::size_t b = a + 1; b < group.size(); ++b) {
        double dist = 1.0;
        if (norms[a] > 0.0 && norms[b] > 0.0) {
          double dot = 0.0;
          for (std::size_t j = 0; j < group[a].size(); ++j) dot += group[a][j] * group[b][j];
          dist = 1.0 - std::clamp(dot / (norms[a] * norms[b]), -1.0, 1.0);
        }
        total += dist;
        ++pairs;
      }
    }
  }
  out.score = pairs ? total / static_cast<double>(pairs) : 0.0;
  return out;
}

void write_coordinates_csv(std::ostream& out, const RepresentationSet& reps, const PcaResult& pca) {
  out << "group_id,lang,x,y\n";
  std::size_t i = 0;
  for (int g = 0; g < reps.num_groups(); ++g) {
    for (int l = 0; l < reps.num_languages(); ++l, ++i) {
      const auto& c = pca.coordinates.at(i);
      out << fmt::format("{},{},{},{}\n", g, l, c[0], c.size() > 1 ? c[1] : 0.0);
    }
  }
}

}  // namespace xconst

#pragma once

#include <span>
#include <vector>

#include "xconst/autodiff.hpp"
#include "xconst/corpus.hpp"
#include "xconst/model.hpp"
#include "xconst/prompt.hpp"

namespace xconst {

/// Per-target-token losses in nats. total = ce + alpha * kl.
struct LossBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  int tokens_counted = 0;
};

/// Row indices of `logits` (one row per sequence position) that predict the
/// masked tokens, and the tokens they predict.
struct MaskedTargets {
  std::vector<int> rows;
  std::vector<int> labels;
};
MaskedTargets masked_targets(const PromptRendering& rendering);

/// Mean negative log-likelihood of `labels` under row-wise softmax of logits [n, V].
ad::Var masked_ce(ad::Var target_logits, std::span<const int> labels);
/// Mean over rows of KL(softmax(p_logits) || softmax(q_logits)); gradients reach both.
ad::Var positional_kl(ad::Var p_logits, ad::Var q_logits);

/// Causal-LM loss of one rendering; logits are [len, V] from a forward on
/// rendering.token_ids.
ad::Var clm_loss(ad::Var logits, const PromptRendering& rendering);

/// KL(f(x, y) || f(y, y)) aligned position-by-position over the shared target.
ad::Var xconst_kl(ad::Var logits_direct, const PromptRendering& rendering_direct, ad::Var logits_copy,
                  const PromptRendering& rendering_copy);

struct BatchLoss {
  ad::Var total;
  LossBreakdown breakdown;
};

/// Mean over examples of ce_i + alpha * kl_i, built on `model`'s graph. With
/// alpha == 0 no copy pass is run and total is the CE node itself.
BatchLoss batch_loss(const BoundModel& model, const LanguageSuite& suite,
                     std::span<const ParallelExample* const> examples, std::span<const Strategy> strategies,
                     double alpha);

/// Single-example XConST objective, evaluated without keeping gradients.
LossBreakdown xconst_loss(const ModelParams& params, const ParallelExample& example, Strategy strategy, double alpha,
                          const LanguageSuite& suite);

}  // namespace xconst

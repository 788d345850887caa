#include "xconst/objective.hpp"

#include "xconst/error.hpp"

namespace xconst {

MaskedTargets masked_targets(const PromptRendering& rendering) {
  MaskedTargets t;
  for (std::size_t i = 1; i < rendering.token_ids.size(); ++i) {
    if (!rendering.loss_mask[i]) continue;
    t.rows.push_back(static_cast<int>(i) - 1);
    t.labels.push_back(rendering.token_ids[i]);
  }
  return t;
}

ad::Var masked_ce(ad::Var target_logits, std::span<const int> labels) {
  if (labels.empty()) throw DataError("loss mask selects no target positions");
  return ad::scale(ad::mean(ad::select_cols(ad::log_softmax(target_logits, -1), labels)), -1.0);
}

ad::Var positional_kl(ad::Var p_logits, ad::Var q_logits) {
  if (p_logits.shape() != q_logits.shape()) {
    throw ContractError("alignment: direct " + ad::shape_str(p_logits.shape()) + " vs copy " +
                        ad::shape_str(q_logits.shape()));
  }
  const int rows = p_logits.shape()[0];
  ad::Var log_p = ad::log_softmax(p_logits, -1);
  ad::Var log_q = ad::log_softmax(q_logits, -1);
  ad::Var terms = ad::mul(ad::exp(log_p), ad::sub(log_p, log_q));
  return ad::scale(ad::sum(terms), 1.0 / rows);
}

ad::Var clm_loss(ad::Var logits, const PromptRendering& rendering) {
  const MaskedTargets t = masked_targets(rendering);
  if (t.rows.empty()) throw DataError("loss mask selects no target positions");
  return masked_ce(ad::gather_rows(logits, t.rows), t.labels);
}

ad::Var xconst_kl(ad::Var logits_direct, const PromptRendering& rendering_direct, ad::Var logits_copy,
                  const PromptRendering& rendering_copy) {
  const MaskedTargets d = masked_targets(rendering_direct);
  const MaskedTargets c = masked_targets(rendering_copy);
  if (d.rows.size() != c.rows.size()) {
    throw ContractError("alignment: " + std::to_string(d.rows.size()) + " direct vs " + std::to_string(c.rows.size()) +
                        " copy target positions");
  }
  if (d.rows.empty()) throw DataError("loss mask selects no target positions");
  return positional_kl(ad::gather_rows(logits_direct, d.rows), ad::gather_rows(logits_copy, c.rows));
}

BatchLoss batch_loss(const BoundModel& model, const LanguageSuite& suite,
                     std::span<const ParallelExample* const> examples, std::span<const Strategy> strategies,
                     double alpha) {
  if (examples.empty()) throw DataError("empty batch");
  if (strategies.size() != examples.size()) throw ContractError("batch_loss: one strategy per example required");
  if (alpha < 0.0) throw ConfigError("alpha must be non-negative");
  const bool with_copy = alpha > 0.0;
  const int n = static_cast<int>(examples.size());

  std::vector<PromptRendering> renderings;
  renderings.reserve(with_copy ? 2 * n : n);
  for (int i = 0; i < n; ++i) {
    const ParallelExample& e = *examples[i];
    renderings.push_back(render(strategies[i], suite, e.src_lang, e.tgt_lang, e.src_tokens, &e.tgt_tokens));
  }
  if (with_copy) {
    for (int i = 0; i < n; ++i) renderings.push_back(render_copy(strategies[i], suite, examples[i]->tgt_lang, examples[i]->tgt_tokens));
  }
  std::vector<Tokens> seqs;
  seqs.reserve(renderings.size());
  for (const auto& r : renderings) seqs.push_back(r.token_ids);
  const TokenBatch batch = TokenBatch::from(seqs);

  // Every predicting row of the batch, direct sequences first; per-row weight
  // 1 / (n * |y_i + EOS|) turns row sums into the mean of per-example means.
  std::vector<int> direct_rows, copy_rows, labels;
  std::vector<double> weights;
  int tokens = 0;
  for (int i = 0; i < n; ++i) {
    const MaskedTargets t = masked_targets(renderings[i]);
    if (t.rows.empty()) throw DataError("loss mask selects no target positions");
    for (std::size_t j = 0; j < t.rows.size(); ++j) {
      direct_rows.push_back(i * batch.seq + t.rows[j]);
      labels.push_back(t.labels[j]);
      weights.push_back(1.0 / (static_cast<double>(n) * t.rows.size()));
    }
    tokens += static_cast<int>(t.rows.size());
    if (with_copy) {
      const MaskedTargets c = masked_targets(renderings[n + i]);
      if (c.rows.size() != t.rows.size()) throw ContractError("alignment: copy rendering target length differs");
      for (int r : c.rows) copy_rows.push_back((n + i) * batch.seq + r);
    }
  }
  const int rows = static_cast<int>(direct_rows.size());

  ad::Graph& g = *model.tok_emb.graph();
  ad::Var hidden = forward_hidden(model, batch);
  std::vector<int> all_rows = direct_rows;
  all_rows.insert(all_rows.end(), copy_rows.begin(), copy_rows.end());
  ad::Var logits = project_logits(model, ad::gather_rows(hidden, all_rows));
  ad::Var log_probs = ad::log_softmax(logits, -1);
  ad::Var log_p = with_copy ? ad::slice(log_probs, 0, 0, rows) : log_probs;

  ad::Var weight_row = g.input(ad::Tensor({1, rows}, weights));
  ad::Var picked = ad::reshape(ad::select_cols(log_p, labels), {rows, 1});
  ad::Var ce = ad::scale(ad::matmul(weight_row, picked), -1.0);
  ce = ad::reshape(ce, {});

  BatchLoss out;
  out.breakdown.alpha = alpha;
  out.breakdown.tokens_counted = tokens;
  out.breakdown.ce = ce.value().item();
  if (!with_copy) {
    out.total = ce;
    out.breakdown.total = out.breakdown.ce;
    return out;
  }
  ad::Var log_q = ad::slice(log_probs, 0, rows, 2 * rows);
  ad::Var per_vocab = ad::matmul(weight_row, ad::mul(ad::exp(log_p), ad::sub(log_p, log_q)));
  ad::Var kl = ad::sum(per_vocab);
  out.total = ad::add(ce, ad::scale(kl, alpha));
  out.breakdown.kl = kl.value().item();
  out.breakdown.total = out.total.value().item();
  return out;
}

LossBreakdown xconst_loss(const ModelParams& params, const ParallelExample& example, Strategy strategy, double alpha,
                          const LanguageSuite& suite) {
  ad::Graph g(false);
  BoundModel m = bind(g, params, TrainMode::kFull);
  const ParallelExample* ex[] = {&example};
  const Strategy st[] = {strategy};
  return batch_loss(m, suite, ex, st, alpha).breakdown;
}

}  // namespace xconst

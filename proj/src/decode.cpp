#include "xconst/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xconst/error.hpp"
#include "xconst/vocab.hpp"

namespace xconst {

namespace {

bool generable(int token) { return token != kPad && token != kBos; }

int token_budget(const ModelParams& params, const Tokens& prefix, const DecodeConfig& cfg) {
  cfg.validate();
  if (prefix.empty()) throw EmptyInputError("decode prefix");
  const int max_len = params.config.max_seq_len;
  if (static_cast<int>(prefix.size()) > max_len) {
    throw ContractError("decode: prefix length " + std::to_string(prefix.size()) + " exceeds max_seq_len " +
                        std::to_string(max_len));
  }
  // Generating the t-th token needs a forward over prefix + t - 1 tokens.
  return std::min(cfg.max_new_tokens, max_len - static_cast<int>(prefix.size()) + 1);
}

// Row-wise log-softmax of the next-token logits of each sequence.
std::vector<std::vector<double>> next_log_probs(const ModelParams& params, const std::vector<Tokens>& seqs) {
  const ad::Tensor logits = last_logits(params, TokenBatch::from(seqs));
  const int vocab = logits.dim(1);
  std::vector<std::vector<double>> out(seqs.size(), std::vector<double>(vocab));
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const double* row = logits.ptr() + b * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (int v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    const double lz = mx + std::log(z);
    for (int v = 0; v < vocab; ++v) out[b][v] = row[v] - lz;
  }
  return out;
}

struct Hyp {
  Tokens gen;
  double score = 0.0;
};

double normalized(const Hyp& h, double lambda) {
  if (lambda == 0.0 || h.gen.empty()) return h.score;
  return h.score / std::pow(static_cast<double>(h.gen.size()), lambda);
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam_width < 1) throw ConfigError("decode: beam width must be >= 1");
  if (max_new_tokens < 1) throw ConfigError("decode: max_new_tokens must be >= 1");
}

Tokens greedy_decode(const ModelParams& params, const Tokens& prefix, const DecodeConfig& cfg) {
  const int budget = token_budget(params, prefix, cfg);
  Tokens seq = prefix;
  Tokens out;
  double score = 0.0;
  for (int t = 0; t < budget; ++t) {
    const auto lp = next_log_probs(params, {seq})[0];
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
      if (!generable(v)) continue;
      const double s = score + lp[v];
      if (best < 0 || s > best_score) {
        best = v;
        best_score = s;
      }
    }
    score = best_score;
    if (best == kEos) break;
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

Tokens beam_search(const ModelParams& params, const Tokens& prefix, const DecodeConfig& cfg) {
  const int budget = token_budget(params, prefix, cfg);
  const std::size_t width = static_cast<std::size_t>(cfg.beam_width);
  std::vector<Hyp> live = {Hyp{}};
  std::vector<Hyp> finished;

  struct Cand {
    double score;
    int parent;
    int token;
  };
  for (int t = 0; t < budget && !live.empty(); ++t) {
    std::vector<Tokens> seqs;
    seqs.reserve(live.size());
    for (const auto& h : live) {
      Tokens s = prefix;
      s.insert(s.end(), h.gen.begin(), h.gen.end());
      seqs.push_back(std::move(s));
    }
    const auto lp = next_log_probs(params, seqs);
    std::vector<Cand> cands;
    for (int b = 0; b < static_cast<int>(live.size()); ++b) {
      for (int v = 0; v < static_cast<int>(lp[b].size()); ++v) {
        if (generable(v)) cands.push_back({live[b].score + lp[b][v], b, v});
      }
    }
    // Higher score first; ties broken by the lexicographically smaller sequence.
    auto better = [&](const Cand& a, const Cand& c) {
      if (a.score != c.score) return a.score > c.score;
      const Tokens& ga = live[a.parent].gen;
      const Tokens& gc = live[c.parent].gen;
      const auto cmp = std::lexicographical_compare_three_way(ga.begin(), ga.end(), gc.begin(), gc.end());
      if (cmp != 0) return cmp < 0;
      return a.token < c.token;
    };
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Hyp h{live[cands[i].parent].gen, cands[i].score};
      h.gen.push_back(cands[i].token);
      (cands[i].token == kEos ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
    if (finished.size() >= width) break;
  }

  std::vector<Hyp> pool = std::move(finished);
  pool.insert(pool.end(), live.begin(), live.end());
  const Hyp* best = nullptr;
  for (const auto& h : pool) {
    if (!best) {
      best = &h;
      continue;
    }
    const double a = normalized(h, cfg.length_penalty), b = normalized(*best, cfg.length_penalty);
    if (a > b || (a == b && h.gen < best->gen)) best = &h;
  }
  Tokens out = best ? best->gen : Tokens{};
  if (!out.empty() && out.back() == kEos) out.pop_back();
  return out;
}

Tokens decode(const ModelParams& params, const Tokens& prefix, const DecodeConfig& cfg) {
  return cfg.method == DecodeConfig::Method::kGreedy ? greedy_decode(params, prefix, cfg)
                                                     : beam_search(params, prefix, cfg);
}

Tokens translate(const ModelParams& params, const LanguageSuite& suite, Strategy strategy, int src_lang, int tgt_lang,
                 const Tokens& src_tokens, const DecodeConfig& cfg) {
  const PromptRendering prompt = render(strategy, suite, src_lang, tgt_lang, src_tokens, nullptr);
  return decode(params, prompt.token_ids, cfg);
}

Tokens pivot_translate(const ModelParams& params, const LanguageSuite& suite, Strategy strategy, int src_lang,
                       int tgt_lang, const Tokens& src_tokens, const DecodeConfig& cfg) {
  if (src_lang == suite.center || tgt_lang == suite.center) {
    return translate(params, suite, strategy, src_lang, tgt_lang, src_tokens, cfg);
  }
  const Tokens mid = translate(params, suite, strategy, src_lang, suite.center, src_tokens, cfg);
  if (mid.empty()) throw EmptyPivotError("no output for " + std::to_string(src_lang) + " -> center");
  return translate(params, suite, strategy, suite.center, tgt_lang, mid, cfg);
}

}  // namespace xconst

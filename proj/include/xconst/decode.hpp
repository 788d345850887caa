#pragma once

#include "xconst/corpus.hpp"
#include "xconst/model.hpp"
#include "xconst/prompt.hpp"

namespace xconst {

struct DecodeConfig {
  enum class Method { kGreedy, kBeam };
  Method method = Method::kBeam;
  int beam_width = 5;
  int max_new_tokens = 20;       // callers usually set 2 * len_max + 4
  double length_penalty = 0.0;   // score / len^lambda; 0 disables

  void validate() const;
};

/// Appends the highest-scoring token (ties: lowest id) until EOS or the budget;
/// returns the generated tokens without EOS. PAD and BOS are never generated.
Tokens greedy_decode(const ModelParams& params, const Tokens& prefix, const DecodeConfig& cfg);

/// Beam search over summed log-probabilities. Hypotheses that emit EOS retire;
/// the search stops once beam_width have retired or the budget runs out, and
/// returns the best of the retired and still-live hypotheses by
/// score / len^lambda (ties: lexicographically smallest).
Tokens beam_search(const ModelParams& params, const Tokens& prefix, const DecodeConfig& cfg);

/// Dispatches on cfg.method.
Tokens decode(const ModelParams& params, const Tokens& prefix, const DecodeConfig& cfg);

/// Renders the target-omitted prompt and decodes the continuation.
Tokens translate(const ModelParams& params, const LanguageSuite& suite, Strategy strategy, int src_lang, int tgt_lang,
                 const Tokens& src_tokens, const DecodeConfig& cfg);

/// src -> center -> tgt. Degenerates to translate() when either end is the
/// center. Throws EmptyPivotError when the intermediate output is empty.
Tokens pivot_translate(const ModelParams& params, const LanguageSuite& suite, Strategy strategy, int src_lang,
                       int tgt_lang, const Tokens& src_tokens, const DecodeConfig& cfg);

}  // namespace xconst

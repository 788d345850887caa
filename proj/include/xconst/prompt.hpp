#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xconst/corpus.hpp"

namespace xconst {

/// The five instruction layouts. Template words are single reserved tokens.
enum class Strategy { kTEnc, kTDec, kSEncTEnc, kSEncTDec, kGptMt };

inline constexpr std::array<Strategy, 5> kAllStrategies = {Strategy::kTEnc, Strategy::kTDec, Strategy::kSEncTEnc,
                                                           Strategy::kSEncTDec, Strategy::kGptMt};

/// Canonical CLI spelling: t-enc, t-dec, s-enc-t-enc, s-enc-t-dec, gpt-mt.
std::string_view strategy_name(Strategy s);
/// Case-insensitive; throws ConfigError for unknown names.
Strategy parse_strategy(std::string_view name);

struct Segment {
  enum class Kind { kToken, kSrcTag, kTgtTag, kSrc, kTgt };
  Kind kind;
  int token = -1;  // only for kToken
};

/// Segment list of a strategy, excluding BOS/EOS.
const std::vector<Segment>& strategy_template(Strategy s);

struct PromptRendering {
  Tokens token_ids;
  /// Aligned with token_ids: 1 where the token is a target token or the final
  /// EOS, i.e. a position whose token is predicted by the loss.
  std::vector<std::uint8_t> loss_mask;
  int target_start = 0;
  Strategy strategy = Strategy::kTEnc;
  int src_lang = 0;
  int tgt_lang = 0;

  int masked_count() const;
};

/// BOS + template with the source filled in + target + EOS. Without a target the
/// sequence stops where the target would begin and the mask is all zero.
PromptRendering render(Strategy strategy, const LanguageSuite& suite, int src_lang, int tgt_lang,
                       const Tokens& src_tokens, const Tokens* tgt_tokens);

/// Copy pair (y, y): both language slots carry tgt_lang and both sentence slots y.
PromptRendering render_copy(Strategy strategy, const LanguageSuite& suite, int tgt_lang, const Tokens& tgt_tokens);

/// Strategy selection during finetuning: one fixed layout, or a uniform
/// deterministic choice per (seed, example index).
struct StrategyMode {
  bool diversified = false;
  Strategy fixed = Strategy::kTEnc;

  static StrategyMode fixed_to(Strategy s) { return {false, s}; }
  static StrategyMode diverse() { return {true, Strategy::kTEnc}; }
  /// "diversified" or a strategy name.
  static StrategyMode parse(std::string_view text);
  std::string name() const;
};

Strategy pick_strategy(const StrategyMode& mode, std::uint64_t seed, std::uint64_t example_index);

}  // namespace xconst

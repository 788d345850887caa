#include "xconst/prompt.hpp"

#include <algorithm>
#include <cctype>

#include "xconst/error.hpp"
#include "xconst/rng.hpp"

namespace xconst {

namespace {

using K = Segment::Kind;

Segment tok(int t) { return {K::kToken, t}; }
constexpr Segment kSrcTag{K::kSrcTag};
constexpr Segment kTgtTag{K::kTgtTag};
constexpr Segment kSrc{K::kSrc};
constexpr Segment kTgt{K::kTgt};

}  // namespace

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kTEnc: return "t-enc";
    case Strategy::kTDec: return "t-dec";
    case Strategy::kSEncTEnc: return "s-enc-t-enc";
    case Strategy::kSEncTDec: return "s-enc-t-dec";
    case Strategy::kGptMt: return "gpt-mt";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (Strategy s : kAllStrategies) {
    if (strategy_name(s) == lower) return s;
  }
  throw ConfigError("unknown prompt strategy '" + std::string(name) + "'");
}

const std::vector<Segment>& strategy_template(Strategy s) {
  // [tgt]: <SRC>\n<TGT>
  static const std::vector<Segment> t_enc = {kTgtTag, tok(kColon), kSrc, tok(kNewline), kTgt};
  // <SRC>\n[tgt]:<TGT>
  static const std::vector<Segment> t_dec = {kSrc, tok(kNewline), kTgtTag, tok(kColon), kTgt};
  // [src] [tgt]: <SRC>\n<TGT>
  static const std::vector<Segment> s_enc_t_enc = {kSrcTag, kTgtTag, tok(kColon), kSrc, tok(kNewline), kTgt};
  // [src]: <SRC>\n[tgt]:<TGT>
  static const std::vector<Segment> s_enc_t_dec = {kSrcTag, tok(kColon), kSrc, tok(kNewline), kTgtTag, tok(kColon), kTgt};
  // Translate this from [src] into [tgt]:\n[src]: <SRC>\n[tgt]:<TGT>
  static const std::vector<Segment> gpt_mt = {tok(kTranslate), tok(kThis), tok(kFrom), kSrcTag,      tok(kInto),
                                              kTgtTag,         tok(kColon), tok(kNewline), kSrcTag,     tok(kColon),
                                              kSrc,            tok(kNewline), kTgtTag,    tok(kColon), kTgt};
  switch (s) {
    case Strategy::kTEnc: return t_enc;
    case Strategy::kTDec: return t_dec;
    case Strategy::kSEncTEnc: return s_enc_t_enc;
    case Strategy::kSEncTDec: return s_enc_t_dec;
    case Strategy::kGptMt: return gpt_mt;
  }
  throw ConfigError("unknown prompt strategy");
}

int PromptRendering::masked_count() const {
  int n = 0;
  for (auto m : loss_mask) n += m;
  return n;
}

PromptRendering render(Strategy strategy, const LanguageSuite& suite, int src_lang, int tgt_lang,
                       const Tokens& src_tokens, const Tokens* tgt_tokens) {
  if (!suite.valid_lang(src_lang) || !suite.valid_lang(tgt_lang)) {
    throw ConfigError("prompt: language out of range (" + std::to_string(src_lang) + ", " + std::to_string(tgt_lang) + ")");
  }
  if (src_tokens.empty()) throw EmptyInputError("prompt source sentence");
  PromptRendering r;
  r.strategy = strategy;
  r.src_lang = src_lang;
  r.tgt_lang = tgt_lang;
  r.token_ids.push_back(kBos);
  for (const Segment& seg : strategy_template(strategy)) {
    switch (seg.kind) {
      case K::kToken: r.token_ids.push_back(seg.token); break;
      case K::kSrcTag: r.token_ids.push_back(suite.tag(src_lang)); break;
      case K::kTgtTag: r.token_ids.push_back(suite.tag(tgt_lang)); break;
      case K::kSrc: r.token_ids.insert(r.token_ids.end(), src_tokens.begin(), src_tokens.end()); break;
      case K::kTgt:
        r.target_start = static_cast<int>(r.token_ids.size());
        if (tgt_tokens) {
          r.token_ids.insert(r.token_ids.end(), tgt_tokens->begin(), tgt_tokens->end());
          r.token_ids.push_back(kEos);
        }
        break;
    }
  }
  r.loss_mask.assign(r.token_ids.size(), 0);
  if (tgt_tokens) std::fill(r.loss_mask.begin() + r.target_start, r.loss_mask.end(), 1);
  return r;
}

PromptRendering render_copy(Strategy strategy, const LanguageSuite& suite, int tgt_lang, const Tokens& tgt_tokens) {
  return render(strategy, suite, tgt_lang, tgt_lang, tgt_tokens, &tgt_tokens);
}

StrategyMode StrategyMode::parse(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "diversified") return diverse();
  return fixed_to(parse_strategy(text));
}

std::string StrategyMode::name() const { return diversified ? "diversified" : std::string(strategy_name(fixed)); }

Strategy pick_strategy(const StrategyMode& mode, std::uint64_t seed, std::uint64_t example_index) {
  if (!mode.diversified) return mode.fixed;
  return kAllStrategies[uniform_index(mix_key(seed, 0x707269ULL, example_index), kAllStrategies.size())];
}

}  // namespace xconst

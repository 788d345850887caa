#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "xconst/decode.hpp"
#include "xconst/error.hpp"
#include "xconst/eval.hpp"

using namespace xconst;
using testing::exhaustive_best;
using testing::random_model;

TEST_CASE("beam search with full width equals exhaustive search") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 12; ++trial) {
    const int vocab = 5 + static_cast<int>(rng() % 2);
    const ModelParams p = random_model(vocab, 100 + trial);
    const int max_new = 2 + static_cast<int>(rng() % 3);
    DecodeConfig cfg;
    cfg.max_new_tokens = max_new;
    cfg.beam_width = static_cast<int>(std::pow(vocab - 2, max_new));
    const Tokens prefix = {kBos, static_cast<int>(3 + rng() % (vocab - 3))};
    CHECK(beam_search(p, prefix, cfg) == exhaustive_best(p, prefix, max_new));
  }
}

TEST_CASE("beam of one is greedy") {
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams p = random_model(7, 300 + trial);
    DecodeConfig cfg;
    cfg.beam_width = 1;
    cfg.max_new_tokens = 6;
    const Tokens prefix = {kBos, 3 + trial % 4};
    CHECK(beam_search(p, prefix, cfg) == greedy_decode(p, prefix, cfg));
  }
}

TEST_CASE("decoding never emits PAD or BOS and respects budgets") {
  const ModelParams p = random_model(8, 7, 10);
  DecodeConfig cfg;
  cfg.max_new_tokens = 30;
  for (auto method : {DecodeConfig::Method::kGreedy, DecodeConfig::Method::kBeam}) {
    cfg.method = method;
    const Tokens prefix = {kBos, 3, 4, 5};
    const Tokens out = decode(p, prefix, cfg);
    // 10 positions: the prefix and at most 7 generated tokens fit.
    CHECK(out.size() <= 7);
    for (int t : out) {
      CHECK(t != kPad);
      CHECK(t != kBos);
      CHECK(t != kEos);
    }
  }
  cfg.max_new_tokens = 2;
  CHECK(decode(p, {kBos, 3}, cfg).size() <= 2);
  CHECK_THROWS_AS(decode(p, {}, cfg), EmptyInputError);
  CHECK_THROWS_AS(decode(p, Tokens(11, 3), cfg), ContractError);
  cfg.beam_width = 0;
  CHECK_THROWS_AS(decode(p, {kBos}, cfg), ConfigError);
}

TEST_CASE("length-normalized beam equals exhaustive normalized search") {
  for (int trial = 0; trial < 6; ++trial) {
    const ModelParams p = random_model(5, 700 + trial);
    DecodeConfig cfg;
    cfg.max_new_tokens = 3;
    cfg.beam_width = 27;
    cfg.length_penalty = 1.0;
    // Scores are divided by the generated length, EOS included.
    CHECK(beam_search(p, {kBos, 3}, cfg) == exhaustive_best(p, {kBos, 3}, 3, 1.0));
  }
}

TEST_CASE("pivot translation with a model that only stops") {
  const auto suite = build_language_suite(3, 4, 0, 1);
  ModelParams p = init_model(testing::tiny_config(suite.vocab_size(), 8, 2, 1, 32), 1);
  // Output head collapses onto the EOS embedding.
  p.tok_emb.fill(0.0);
  for (auto& l : p.layers) {
    l.wo.fill(0.0);
    l.w_down.fill(0.0);
  }
  p.lnf_gain.fill(0.0);
  for (int j = 0; j < 8; ++j) {
    p.tok_emb.at(kEos, j) = 1.0;
    p.lnf_bias[j] = 1.0;
  }
  const Tokens src = render_sentence(suite, {0, 1}, 1, false);
  DecodeConfig cfg;
  CHECK(translate(p, suite, Strategy::kTEnc, 1, 2, src, cfg).empty());
  CHECK_THROWS_AS(pivot_translate(p, suite, Strategy::kTEnc, 1, 2, src, cfg), EmptyPivotError);
  // A center endpoint is a single direct hop.
  CHECK(pivot_translate(p, suite, Strategy::kTEnc, 1, 0, src, cfg).empty());

  const auto test = make_parallel_dataset({{0, 1}, {2, 3}}, suite, {{1, 2}, {1, 0}}, false, 1);
  EvalOptions opts;
  opts.supervised = {{1, 0}};
  opts.zero_shot = {{1, 2}};
  opts.pivot = true;
  const auto report = evaluate(p, suite, test, Strategy::kTEnc, cfg, opts);
  REQUIRE(report.rows.size() == 3);
  for (const auto& r : report.rows) {
    CHECK(r.bleu == 0.0);
    CHECK(r.off_target == 1.0);
  }
}

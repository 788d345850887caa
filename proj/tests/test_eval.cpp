#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "xconst/error.hpp"
#include "xconst/eval.hpp"

using namespace xconst;
using testing::brute_bleu;

TEST_CASE("BLEU matches a brute-force recount") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    const int alphabet = 2 + static_cast<int>(rng() % 4);
    std::vector<Tokens> hyps, refs;
    for (int i = 0; i < n; ++i) {
      Tokens h(rng() % 9), r(1 + rng() % 9);
      for (int& t : h) t = static_cast<int>(rng() % alphabet);
      for (int& t : r) t = static_cast<int>(rng() % alphabet);
      hyps.push_back(h);
      refs.push_back(r);
    }
    for (auto smoothing : {Smoothing::kNone, Smoothing::kAdd1}) {
      const double got = corpus_bleu(hyps, refs, 4, smoothing);
      const double want = brute_bleu(hyps, refs, 4, smoothing == Smoothing::kAdd1);
      CHECK(std::abs(got - want) < 1e-9);
    }
  }
}

TEST_CASE("BLEU edge cases") {
  const std::vector<Tokens> gold = {{1, 2, 3, 4, 5}, {6, 7, 8, 9}};
  CHECK(corpus_bleu(gold, gold, 4, Smoothing::kNone) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(corpus_bleu(gold, gold, 4, Smoothing::kAdd1) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(corpus_bleu({{}}, {{1, 2}}) == 0.0);
  // No 4-gram can match: unsmoothed BLEU collapses to zero.
  CHECK(corpus_bleu({{1, 2, 3}}, {{1, 2, 3}}, 4, Smoothing::kNone) == 0.0);
  // Unigram-only BLEU of a half-length exact prefix is exp(1 - 2) * 100.
  CHECK(corpus_bleu({{1, 2}}, {{1, 2, 3, 4}}, 1) == doctest::Approx(100.0 * std::exp(-1.0)));
  CHECK_THROWS_AS(corpus_bleu({{1}}, {}), ContractError);
}

TEST_CASE("off-target ratio matches a recount") {
  const auto suite = build_language_suite(4, 10, 0, 1);
  std::mt19937_64 rng(2);
  std::vector<Tokens> hyps;
  std::vector<int> langs;
  std::vector<Tokens> gold;
  for (int i = 0; i < 200; ++i) {
    const int tgt = static_cast<int>(rng() % 4);
    const auto sent = testing::random_sentence(rng, 10, 1, 6);
    gold.push_back(render_sentence(suite, sent, tgt, false));
    Tokens h = gold.back();
    const int noise = static_cast<int>(rng() % 3);
    for (int k = 0; k < noise && !h.empty(); ++k) h[rng() % h.size()] = suite.encode(static_cast<int>(rng() % 4), 0);
    if (rng() % 10 == 0) h.clear();
    hyps.push_back(h);
    langs.push_back(tgt);
  }
  CHECK(off_target_ratio(hyps, langs, suite) == testing::brute_off_target(hyps, langs, suite));
  CHECK(off_target_ratio(gold, langs, suite) == 0.0);
  CHECK(exact_match(gold, gold) == 1.0);
  CHECK(exact_match(hyps, gold) < 1.0);
}

TEST_CASE("evaluation with an oracle translator") {
  const auto suite = build_language_suite(5, 12, 0, 3);
  const auto sup = center_directions(suite);
  const auto zs = complement_directions(suite, sup);
  auto every = sup;
  every.insert(every.end(), zs.begin(), zs.end());
  const auto corpus = sample_concept_corpus(suite, 8, {4, 6}, 1);
  const auto test = make_parallel_dataset(corpus, suite, every, true, 2);

  EvalOptions opts{sup, zs, true, Smoothing::kAdd1};
  const auto gold = [](const ParallelExample& e, bool) { return e.tgt_tokens; };
  const auto report = evaluate_with(gold, suite, test, opts);
  CHECK(report.rows.size() == 8 + 12 + 12);
  for (const auto& r : report.rows) {
    CHECK(r.bleu == doctest::Approx(100.0));
    CHECK(r.off_target == 0.0);
    CHECK(r.n_sentences == 8);
  }
  REQUIRE(report.aggregate(SplitKind::kZeroShot));
  CHECK(report.aggregate(SplitKind::kZeroShot)->n_directions == 12);
  CHECK(report.aggregate(SplitKind::kSupervised)->n_directions == 8);

  // Copying the source is off-target everywhere.
  const auto copy = [](const ParallelExample& e, bool) { return e.src_tokens; };
  const auto bad = evaluate_with(copy, suite, test, opts);
  for (const auto& a : bad.aggregates) CHECK(a.off_target == 1.0);

  EvalOptions missing{{{1, 2}}, {}, false, Smoothing::kAdd1};
  const auto only_center = make_parallel_dataset(corpus, suite, sup, true, 2);
  CHECK_THROWS_AS(evaluate_with(gold, suite, only_center, missing), DataError);
}

TEST_CASE("aggregates are unweighted means of rows") {
  std::vector<DirectionRow> rows = {
      {SplitKind::kZeroShot, {1, 2}, 10.0, 0.5, 0.0, 3},
      {SplitKind::kZeroShot, {2, 1}, 30.0, 0.1, 0.2, 100},
      {SplitKind::kSupervised, {0, 1}, 50.0, 0.0, 1.0, 7},
  };
  const auto agg = aggregate_rows(rows);
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].kind == SplitKind::kSupervised);
  CHECK(agg[1].bleu == 20.0);
  CHECK(agg[1].off_target == doctest::Approx(0.3));
  CHECK(agg[1].n_sentences == 103);
}

TEST_CASE("report CSV round trip and markdown") {
  EvalReport r;
  r.rows = {{SplitKind::kSupervised, {0, 1}, 12.345678901234567, 0.1, 0.2, 5},
            {SplitKind::kZeroShot, {1, 2}, 1.0 / 3.0, 0.75, 0.0, 5},
            {SplitKind::kPivot, {1, 2}, 99.5, 0.0, 0.9, 5}};
  r.aggregates = aggregate_rows(r.rows);
  std::stringstream csv;
  write_report_csv(csv, r);
  const auto back = read_report_csv(csv);
  REQUIRE(back.rows.size() == 3);
  CHECK(back.rows[0].bleu == r.rows[0].bleu);
  CHECK(back.rows[1].bleu == r.rows[1].bleu);
  CHECK(back.aggregates.size() == 3);
  std::stringstream again;
  write_report_csv(again, back);
  std::stringstream first;
  write_report_csv(first, r);
  CHECK(again.str() == first.str());

  std::ostringstream md;
  write_report_markdown(md, r, "run");
  CHECK(md.str().find("| | Supervised | Zero-Shot | Pivot |") != std::string::npos);
  CHECK(md.str().find("| BLEU | 12.35 | 0.33 | 99.50 |") != std::string::npos);

  std::istringstream bad("nonsense\n");
  CHECK_THROWS_AS(read_report_csv(bad), DataError);
}

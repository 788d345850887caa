#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "xconst/error.hpp"
#include "xconst/objective.hpp"

using namespace xconst;

namespace {

double kl_of(const std::vector<double>& p_logits, const std::vector<double>& q_logits) {
  ad::Graph g(false);
  const int v = static_cast<int>(p_logits.size());
  return positional_kl(g.input(ad::Tensor({1, v}, p_logits)), g.input(ad::Tensor({1, v}, q_logits))).value().item();
}

struct Fixture {
  LanguageSuite suite = build_language_suite(3, 8, 0, 4);
  ModelParams params = init_model(testing::tiny_config(suite.vocab_size()), 2);
  std::vector<ParallelExample> examples;

  Fixture() {
    const auto corpus = sample_concept_corpus(suite, 6, {2, 5}, 1);
    examples = make_parallel_dataset(corpus, suite, center_directions(suite), true, 2);
  }

  // Per-example loss from separate single-sequence forwards.
  double reference(const ParallelExample& e, Strategy s, double alpha, double* kl_out = nullptr) const {
    ad::Graph g(false);
    const BoundModel m = bind(g, params, TrainMode::kFull);
    const auto direct = render(s, suite, e.src_lang, e.tgt_lang, e.src_tokens, &e.tgt_tokens);
    const auto copy = render_copy(s, suite, e.tgt_lang, e.tgt_tokens);
    const auto ld = project_logits(m, forward_hidden(m, TokenBatch::from({direct.token_ids})));
    const auto lc = project_logits(m, forward_hidden(m, TokenBatch::from({copy.token_ids})));
    const double ce = clm_loss(ld, direct).value().item();
    const double kl = xconst_kl(ld, direct, lc, copy).value().item();
    if (kl_out) *kl_out = kl;
    return ce + alpha * kl;
  }
};

}  // namespace

TEST_CASE("KL hand case and identities") {
  CHECK(kl_of({std::log(0.5), std::log(0.5)}, {std::log(0.25), std::log(0.75)}) == doctest::Approx(0.14384).epsilon(1e-5 / 0.14384));
  CHECK(std::abs(kl_of({std::log(0.5), std::log(0.5)}, {std::log(0.25), std::log(0.75)}) - 0.143841036) < 1e-8);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(7), q(7);
    for (double& x : p) x = n(rng);
    for (double& x : q) x = n(rng);
    CHECK(kl_of(p, p) == 0.0);
    CHECK(kl_of(p, q) >= -1e-9);
  }
}

TEST_CASE("KL gradients reach both sides") {
  ad::Graph g;
  ad::Var p = g.leaf(ad::Tensor({2, 3}, std::vector<double>{0.1, 0.5, -0.2, 1.0, 0.0, 0.3}));
  ad::Var q = g.leaf(ad::Tensor({2, 3}, std::vector<double>{0.4, -0.1, 0.2, 0.0, 0.7, 0.3}));
  g.backward(positional_kl(p, q));
  double gp = 0.0, gq = 0.0;
  for (double v : g.grad(p).storage()) gp += std::abs(v);
  for (double v : g.grad(q).storage()) gq += std::abs(v);
  CHECK(gp > 1e-3);
  CHECK(gq > 1e-3);

  ad::Graph h;
  CHECK_THROWS_AS(positional_kl(h.leaf(ad::Tensor({2, 3})), h.leaf(ad::Tensor({3, 3}))), ContractError);
}

TEST_CASE("masked targets follow the loss mask") {
  const auto suite = build_language_suite(2, 4, 0, 1);
  const Tokens x = {suite.encode(1, 0)}, y = {suite.encode(0, 2), suite.encode(0, 3)};
  const auto r = render(Strategy::kTDec, suite, 1, 0, x, &y);
  const auto t = masked_targets(r);
  // BOS x NL tag COLON y0 y1 EOS: rows 4,5,6 predict y0, y1, EOS.
  CHECK(t.rows == std::vector<int>{4, 5, 6});
  CHECK(t.labels == std::vector<int>{y[0], y[1], kEos});
}

TEST_CASE("cross-entropy on a hand case") {
  ad::Graph g(false);
  // Two rows, uniform over 4 classes: -log(1/4) each.
  const auto logits = g.input(ad::Tensor({2, 4}, 0.0));
  const int labels[] = {1, 3};
  CHECK(masked_ce(logits, labels).value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("batched loss equals the mean of per-example losses") {
  Fixture f;
  for (double alpha : {0.0, 0.1, 1.0}) {
    for (Strategy s : {Strategy::kTDec, Strategy::kGptMt}) {
      std::vector<const ParallelExample*> ex;
      std::vector<Strategy> st;
      double want = 0.0;
      for (int i = 0; i < 4; ++i) {
        ex.push_back(&f.examples[i]);
        st.push_back(s);
        want += f.reference(f.examples[i], s, alpha);
      }
      want /= 4.0;
      ad::Graph g(false);
      const BoundModel m = bind(g, f.params, TrainMode::kFull);
      const auto loss = batch_loss(m, f.suite, ex, st, alpha);
      CHECK(std::abs(loss.breakdown.total - want) < 1e-12);
      CHECK(loss.total.value().item() == loss.breakdown.total);
      if (alpha == 0.0) CHECK(loss.breakdown.kl == 0.0);
    }
  }
}

TEST_CASE("single-example objective") {
  Fixture f;
  double kl = 0.0;
  const double want = f.reference(f.examples[0], Strategy::kSEncTDec, 0.25, &kl);
  const auto b = xconst_loss(f.params, f.examples[0], Strategy::kSEncTDec, 0.25, f.suite);
  CHECK(std::abs(b.total - want) < 1e-12);
  CHECK(std::abs(b.kl - kl) < 1e-12);
  CHECK(b.kl >= 0.0);
  CHECK(b.tokens_counted == static_cast<int>(f.examples[0].tgt_tokens.size()) + 1);
}

TEST_CASE("alpha zero skips the copy pass") {
  Fixture f;
  ad::Graph g0(false), g1(false);
  const BoundModel m0 = bind(g0, f.params, TrainMode::kFull);
  const BoundModel m1 = bind(g1, f.params, TrainMode::kFull);
  const ParallelExample* ex[] = {&f.examples[0], &f.examples[1]};
  const Strategy st[] = {Strategy::kTEnc, Strategy::kTEnc};
  const auto a = batch_loss(m0, f.suite, ex, st, 0.0);
  const auto b = batch_loss(m1, f.suite, ex, st, 0.5);
  CHECK(g0.num_nodes() < g1.num_nodes());
  CHECK(std::abs(a.breakdown.ce - b.breakdown.ce) < 1e-12);
  CHECK_THROWS_AS(batch_loss(m0, f.suite, ex, st, -1.0), ConfigError);
}

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "test_support.hpp"
#include "xconst/error.hpp"
#include "xconst/model.hpp"
#include "xconst/vocab.hpp"

using namespace xconst;

namespace {

std::vector<int> random_ids(std::mt19937_64& rng, int vocab, int len) {
  std::uniform_int_distribution<int> tok(kMinReserved, vocab - 1);
  std::vector<int> ids = {kBos};
  while (static_cast<int>(ids.size()) < len) ids.push_back(tok(rng));
  return ids;
}

double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parameter count closed form") {
  const auto c = testing::tiny_config(50, 16, 2, 3, 20);
  auto p = init_model(c, 1);
  const std::size_t V = 50, d = 16, ff = 64, L = 3, T = 20;
  const std::size_t base = V * d + T * d + L * (4 * d * d + 2 * d * ff + 4 * d) + 2 * d;
  CHECK(p.num_parameters() == base);
  CHECK(p.num_trainable(TrainMode::kFull) == base);
  attach_lora(p, 4, 2);
  const std::size_t lora = L * (ff * 4 + 4 * d);
  CHECK(p.num_parameters() == base + lora);
  CHECK(p.num_trainable(TrainMode::kLora) == lora);
  CHECK(p.lora_scaling() == 1.0);
  CHECK_THROWS_AS(attach_lora(p, 4, 2), ContractError);
}

TEST_CASE("config validation") {
  auto c = testing::tiny_config(50);
  c.n_heads = 3;
  CHECK_THROWS_AS(init_model(c, 0), ConfigError);
  c = testing::tiny_config(2);
  CHECK_THROWS_AS(init_model(c, 0), ConfigError);
}

TEST_CASE("initialisation is deterministic") {
  const auto c = testing::tiny_config(40);
  auto a = init_model(c, 9), b = init_model(c, 9), other = init_model(c, 10);
  CHECK(a.tok_emb == b.tok_emb);
  CHECK(a.layers[1].w_down == b.layers[1].w_down);
  CHECK_FALSE(a.tok_emb == other.tok_emb);
  for (const auto& [name, t] : std::as_const(a).list()) CHECK(t->all_finite());
}

TEST_CASE("forward shape, causality and padding") {
  const auto c = testing::tiny_config(40);
  const auto p = init_model(c, 3);
  std::mt19937_64 rng(4);
  const auto ids = random_ids(rng, 40, 9);
  const auto logits = forward(p, TokenBatch::from({ids}));
  CHECK(logits.shape() == ad::Shape{1, 9, 40});
  CHECK(logits.all_finite());

  // A later token never influences earlier predictions.
  auto changed = ids;
  changed[6] = changed[6] == 20 ? 21 : 20;
  const auto logits2 = forward(p, TokenBatch::from({changed}));
  for (int t = 0; t < 6; ++t) {
    for (int v = 0; v < 40; ++v) CHECK(logits[t * 40 + v] == logits2[t * 40 + v]);
  }

  // Batched with a longer sequence, the padded item predicts the same values.
  const auto longer = random_ids(rng, 40, 14);
  const auto batched = forward(p, TokenBatch::from({ids, longer}));
  double diff = 0.0;
  for (int t = 0; t < 9; ++t) {
    for (int v = 0; v < 40; ++v) diff = std::max(diff, std::abs(batched[t * 40 + v] - logits[t * 40 + v]));
  }
  CHECK(diff < 1e-12);

  const auto last = last_logits(p, TokenBatch::from({ids, longer}));
  CHECK(last.shape() == ad::Shape{2, 40});
  for (int v = 0; v < 40; ++v) CHECK(std::abs(last.at(0, v) - logits[8 * 40 + v]) < 1e-12);
}

TEST_CASE("forward contracts") {
  const auto c = testing::tiny_config(40, 16, 2, 1, 8);
  const auto p = init_model(c, 3);
  CHECK_THROWS_AS(forward(p, TokenBatch::from({std::vector<int>(9, kBos)})), ContractError);
  CHECK_THROWS_AS(forward(p, TokenBatch::from({{kBos, 40}})), ContractError);
}

TEST_CASE("fresh adapters leave logits unchanged") {
  const auto c = testing::tiny_config(40);
  auto p = init_model(c, 5);
  std::mt19937_64 rng(6);
  const auto batch = TokenBatch::from({random_ids(rng, 40, 10), random_ids(rng, 40, 7)});
  const auto before = forward(p, batch);
  attach_lora(p, 4, 11);
  const auto after = forward(p, batch);
  CHECK(max_abs_diff(before, after) == 0.0);

  // A non-zero B does change them.
  p.layers[0].lora_b.fill(0.1);
  CHECK(max_abs_diff(before, forward(p, batch)) > 0.0);
}

TEST_CASE("representation extraction") {
  const auto c = testing::tiny_config(40);
  const auto p = init_model(c, 7);
  std::mt19937_64 rng(8);
  const auto ids = random_ids(rng, 40, 6);
  const auto r1 = extract_representation(p, ids);
  const auto r2 = extract_representation(p, ids);
  CHECK(r1.size() == 16);
  CHECK(r1 == r2);

  // Equals the final-norm hidden state at the last position.
  ad::Graph g(false);
  const BoundModel m = bind(g, p, TrainMode::kFull);
  const auto h = forward_hidden(m, TokenBatch::from({ids})).value();
  for (int j = 0; j < 16; ++j) CHECK(std::abs(h.at(5, j) - r1[j]) < 1e-12);
}

TEST_CASE("parameter names are unique") {
  auto p = init_model(testing::tiny_config(30), 1);
  attach_lora(p, 2, 1);
  std::set<std::string> names;
  for (const auto& r : p.list()) CHECK(names.insert(r.name).second);
  CHECK(names.count("layer0.ff.down.lora_a"));
  CHECK(names.count("tok_emb"));
}

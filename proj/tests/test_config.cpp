#include <doctest.h>

#include "xconst/config.hpp"
#include "xconst/error.hpp"

using namespace xconst;

TEST_CASE("defaults resolve") {
  const auto c = experiment_config_from_json(Json::object());
  CHECK(c.model.vocab_size == kMinReserved + 4 + 4 * 24);
  CHECK(c.train.seed == c.seed);
  CHECK(c.supervised_directions().size() == 6);
  CHECK(c.zero_shot_directions().size() == 6);
  CHECK(c.representation_target() == 3);
  CHECK(c.eval.representation_sentences == 200);
  CHECK(c.sweep.alphas == std::vector<double>{0.0, 0.05, 0.1, 0.25});
  CHECK(c.decode.max_new_tokens == 2 * 6 + 4);
}

TEST_CASE("round trip through JSON") {
  Json j = Json::parse(R"({
    "seed": 4,
    "suite": {"languages": 3, "concepts": 10},
    "data": {"len_min": 2, "len_max": 4, "extra_directions": [[1, 2]]},
    "model": {"d_model": 32, "n_heads": 4, "d_ff": 64, "max_seq_len": 40},
    "train": {"mode": "xconst", "alpha": 0.25, "strategy": "gpt-mt", "lr": 0.002},
    "decode": {"method": "beam", "beam_width": 3},
    "sweep": {"seeds": [1, 2, 3]}
  })");
  const auto c = experiment_config_from_json(j);
  CHECK(c.train.mode == ObjectiveMode::kXConst);
  CHECK(c.train.alpha == 0.25);
  CHECK(c.train.lr == 0.002);
  CHECK(c.train.seed == 4);
  CHECK(c.supervised_directions().size() == 5);
  CHECK(c.zero_shot_directions().size() == 1);
  const Json dumped = to_json(c);
  const auto back = experiment_config_from_json(dumped);
  CHECK(to_json(back) == dumped);
  CHECK(config_hash(dumped) == config_hash(to_json(back)));
  CHECK(config_hash(dumped).size() == 16);
  auto other = dumped;
  other["seed"] = 5;
  CHECK(config_hash(other) != config_hash(dumped));
}

TEST_CASE("unknown keys and type errors are config errors") {
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(R"({"sede": 1})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(R"({"train": {"alpah": 0.1}})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(R"({"train": {"alpha": "big"}})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(R"({"train": {"mode": "fancy"}})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(R"({"model": 3})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(R"({"eval": {"strategy": "t-xyz"}})")), ConfigError);
}

TEST_CASE("resolve rejects inconsistent settings") {
  auto bad = [](const char* text) { return experiment_config_from_json(Json::parse(text)); };
  CHECK_THROWS_AS(bad(R"({"model": {"vocab_size": 50}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"model": {"max_seq_len": 16}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"data": {"len_min": 5, "len_max": 4}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"data": {"extra_directions": [[1, 1]]}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"data": {"center_directions": false}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"train": {"alpha": -1}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"sweep": {"alphas": []}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"eval": {"representation_tgt": 9}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"suite": {"languages": 1}})"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), ConfigError);
}

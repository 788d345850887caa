#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "xconst/corpus.hpp"
#include "xconst/decode.hpp"
#include "xconst/eval.hpp"
#include "xconst/model.hpp"
#include "xconst/prompt.hpp"
#include "xconst/trainer.hpp"

namespace xconst {

using Json = nlohmann::ordered_json;

// Every *_from_json rejects unknown keys and wrong types with ConfigError.
// Missing keys take the struct defaults.

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

Json to_json(const DecodeConfig& c);
DecodeConfig decode_config_from_json(const Json& j);

struct SuiteConfig {
  int languages = 4;
  int concepts = 24;
  int center = 0;
  std::uint64_t seed = 7;
};

struct DataConfig {
  int train_sentences = 700;
  int dev_sentences = 0;
  int test_sentences = 50;
  LengthRange length{3, 6};
  bool reorder = true;
  bool center_directions = true;           // all (l, center) and (center, l)
  std::vector<Direction> extra_directions;  // additional supervised directions
  FilterOptions filters;
  std::uint64_t seed = 11;
};

struct EvalConfig {
  Strategy strategy = Strategy::kTDec;  // prompt used at test time
  bool pivot = true;
  int representation_sentences = 200;
  int representation_tgt = -1;           // -1: last language
  Smoothing smoothing = Smoothing::kAdd1;
};

struct SweepConfig {
  std::vector<double> alphas{0.0, 0.05, 0.1, 0.25};
  std::vector<Strategy> strategies{Strategy::kTDec};
  std::vector<int> lora_ranks{0};          // 0 = full finetuning
  std::vector<std::uint64_t> seeds{1};
};

struct ExperimentConfig {
  SuiteConfig suite;
  DataConfig data;
  ModelConfig model;   // vocab_size follows the suite
  TrainConfig train;   // train.seed follows `seed`
  DecodeConfig decode;
  EvalConfig eval;
  SweepConfig sweep;
  std::string output_dir;
  std::uint64_t seed = 1;

  /// Fills derived fields (vocab size, train seed) and validates everything.
  void resolve();
  LanguageSuite language_suite() const;
  std::vector<Direction> supervised_directions() const;
  std::vector<Direction> zero_shot_directions() const;
  int representation_target() const;
};

Json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::string& path);

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const Json& j);

}  // namespace xconst

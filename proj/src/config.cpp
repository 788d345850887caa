#include "xconst/config.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "xconst/error.hpp"

namespace xconst {

namespace {

// Reads an object field by field and complains about anything left over.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), key);
  }

  const Json* sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  template <typename T>
  T convert(const Json& v, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path(key) + ": expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
            throw ConfigError(path(key) + ": expected a non-negative integer");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
      }
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(fmt::format("{}: unknown key '{}'", where_, key));
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json direction_json(const Direction& d) { return Json::array({d.src, d.tgt}); }

Direction direction_from(const Json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw ConfigError(where + ": direction must be [src, tgt]");
  }
  return {v[0].get<int>(), v[1].get<int>()};
}

template <typename T, typename F>
std::vector<T> list_from(const Json& v, const std::string& where, F&& each) {
  if (!v.is_array()) throw ConfigError(where + ": expected a list");
  std::vector<T> out;
  for (const auto& e : v) out.push_back(each(e));
  return out;
}

Strategy strategy_from(const Json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": strategy must be a string");
  return parse_strategy(v.get<std::string>());
}

}  // namespace

// Model ---------------------------------------------------------------------

Json to_json(const ModelConfig& c) {
  Json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["d_ff"] = c.d_ff;
  j["max_seq_len"] = c.max_seq_len;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  Fields f(j, "model");
  f.read("vocab_size", c.vocab_size);
  f.read("d_model", c.d_model);
  f.read("n_heads", c.n_heads);
  f.read("n_layers", c.n_layers);
  f.read("d_ff", c.d_ff);
  f.read("max_seq_len", c.max_seq_len);
  f.done();
  return c;
}

// Train ---------------------------------------------------------------------

Json to_json(const TrainConfig& c) {
  Json j;
  j["mode"] = c.mode == ObjectiveMode::kXConst ? "xconst" : "vanilla";
  j["alpha"] = c.alpha;
  j["strategy"] = c.strategy_mode.name();
  j["lora_rank"] = c.lora_rank;
  j["lr"] = c.lr ? Json(*c.lr) : Json(nullptr);
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["max_steps"] = c.max_steps;
  j["warmup_steps"] = c.warmup_steps;
  j["grad_clip"] = c.grad_clip;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  Fields f(j, "train");
  std::string mode = "vanilla";
  f.read("mode", mode);
  if (mode == "vanilla") {
    c.mode = ObjectiveMode::kVanilla;
  } else if (mode == "xconst") {
    c.mode = ObjectiveMode::kXConst;
  } else {
    throw ConfigError("train.mode: expected 'vanilla' or 'xconst', got '" + mode + "'");
  }
  f.read("alpha", c.alpha);
  if (const Json* s = f.sub("strategy")) {
    if (!s->is_string()) throw ConfigError("train.strategy: expected a string");
    c.strategy_mode = StrategyMode::parse(s->get<std::string>());
  }
  f.read("lora_rank", c.lora_rank);
  if (const Json* lr = f.sub("lr"); lr && !lr->is_null()) c.lr = f.convert<double>(*lr, "lr");
  f.read("weight_decay", c.weight_decay);
  f.read("beta1", c.beta1);
  f.read("beta2", c.beta2);
  f.read("adam_eps", c.adam_eps);
  f.read("batch_size", c.batch_size);
  f.read("epochs", c.epochs);
  f.read("max_steps", c.max_steps);
  f.read("warmup_steps", c.warmup_steps);
  f.read("grad_clip", c.grad_clip);
  f.read("seed", c.seed);
  f.done();
  c.validate();
  return c;
}

// Decode --------------------------------------------------------------------

Json to_json(const DecodeConfig& c) {
  Json j;
  j["method"] = c.method == DecodeConfig::Method::kGreedy ? "greedy" : "beam";
  j["beam_width"] = c.beam_width;
  j["max_new_tokens"] = c.max_new_tokens;
  j["length_penalty"] = c.length_penalty;
  return j;
}

DecodeConfig decode_config_from_json(const Json& j) {
  DecodeConfig c;
  Fields f(j, "decode");
  std::string method = "beam";
  f.read("method", method);
  if (method == "greedy") {
    c.method = DecodeConfig::Method::kGreedy;
  } else if (method == "beam") {
    c.method = DecodeConfig::Method::kBeam;
  } else {
    throw ConfigError("decode.method: expected 'greedy' or 'beam', got '" + method + "'");
  }
  f.read("beam_width", c.beam_width);
  f.read("max_new_tokens", c.max_new_tokens);
  f.read("length_penalty", c.length_penalty);
  f.done();
  c.validate();
  return c;
}

// Experiment ----------------------------------------------------------------

LanguageSuite ExperimentConfig::language_suite() const {
  return build_language_suite(suite.languages, suite.concepts, suite.center, suite.seed);
}

std::vector<Direction> ExperimentConfig::supervised_directions() const {
  const LanguageSuite s = language_suite();
  std::vector<Direction> out;
  if (data.center_directions) out = center_directions(s);
  for (const auto& d : data.extra_directions) {
    if (std::find(out.begin(), out.end(), d) == out.end()) out.push_back(d);
  }
  return out;
}

std::vector<Direction> ExperimentConfig::zero_shot_directions() const {
  return complement_directions(language_suite(), supervised_directions());
}

int ExperimentConfig::representation_target() const {
  return eval.representation_tgt >= 0 ? eval.representation_tgt : suite.languages - 1;
}

void ExperimentConfig::resolve() {
  const LanguageSuite s = language_suite();  // validates K, Vc, center
  if (model.vocab_size != 0 && model.vocab_size != s.vocab_size()) {
    throw ConfigError(fmt::format("model.vocab_size {} does not match the suite's {}", model.vocab_size, s.vocab_size()));
  }
  model.vocab_size = s.vocab_size();
  model.validate();
  train.seed = seed;
  train.validate();
  decode.validate();
  if (data.train_sentences < 1) throw ConfigError("data.train_sentences must be >= 1");
  if (data.test_sentences < 1) throw ConfigError("data.test_sentences must be >= 1");
  if (data.dev_sentences < 0) throw ConfigError("data.dev_sentences must be >= 0");
  if (data.length.min < 1 || data.length.min > data.length.max) throw ConfigError("data: need 1 <= len_min <= len_max");
  for (const auto& d : data.extra_directions) {
    if (!s.valid_lang(d.src) || !s.valid_lang(d.tgt) || d.src == d.tgt) {
      throw ConfigError("data.extra_directions: invalid direction " + direction_name(d));
    }
  }
  if (supervised_directions().empty()) throw ConfigError("data: no supervised directions");
  // BOS + template words + both sentences + EOS, for the wordiest template.
  std::size_t words = 0;
  for (Strategy st : kAllStrategies) words = std::max(words, strategy_template(st).size() - 2);
  const int longest = 2 + static_cast<int>(words) + 2 * data.length.max;
  if (longest > model.max_seq_len) {
    throw ConfigError(fmt::format("model.max_seq_len {} below the longest prompt ({})", model.max_seq_len, longest));
  }
  if (eval.representation_sentences < 1) throw ConfigError("eval.representation_sentences must be >= 1");
  if (!s.valid_lang(representation_target())) throw ConfigError("eval.representation_tgt out of range");
  if (sweep.alphas.empty() || sweep.strategies.empty() || sweep.lora_ranks.empty() || sweep.seeds.empty()) {
    throw ConfigError("sweep: every axis needs at least one value");
  }
  for (double a : sweep.alphas) {
    if (!(a >= 0.0)) throw ConfigError("sweep.alphas: values must be >= 0");
  }
  for (int r : sweep.lora_ranks) {
    if (r < 0) throw ConfigError("sweep.lora_ranks: values must be >= 0");
  }
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  Json suite;
  suite["languages"] = c.suite.languages;
  suite["concepts"] = c.suite.concepts;
  suite["center"] = c.suite.center;
  suite["seed"] = c.suite.seed;
  j["suite"] = suite;

  Json data;
  data["train_sentences"] = c.data.train_sentences;
  data["dev_sentences"] = c.data.dev_sentences;
  data["test_sentences"] = c.data.test_sentences;
  data["len_min"] = c.data.length.min;
  data["len_max"] = c.data.length.max;
  data["reorder"] = c.data.reorder;
  data["center_directions"] = c.data.center_directions;
  Json extra = Json::array();
  for (const auto& d : c.data.extra_directions) extra.push_back(direction_json(d));
  data["extra_directions"] = extra;
  data["max_src_len"] = c.data.filters.max_src_len;
  data["dedup"] = c.data.filters.dedup;
  data["langid_check"] = c.data.filters.langid_check;
  data["seed"] = c.data.seed;
  j["data"] = data;

  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["decode"] = to_json(c.decode);

  Json eval;
  eval["strategy"] = std::string(strategy_name(c.eval.strategy));
  eval["pivot"] = c.eval.pivot;
  eval["representation_sentences"] = c.eval.representation_sentences;
  eval["representation_tgt"] = c.eval.representation_tgt;
  eval["smoothing"] = c.eval.smoothing == Smoothing::kAdd1 ? "add1" : "none";
  j["eval"] = eval;

  Json sweep;
  sweep["alphas"] = c.sweep.alphas;
  Json strategies = Json::array();
  for (Strategy s : c.sweep.strategies) strategies.push_back(std::string(strategy_name(s)));
  sweep["strategies"] = strategies;
  sweep["lora_ranks"] = c.sweep.lora_ranks;
  sweep["seeds"] = c.sweep.seeds;
  j["sweep"] = sweep;
  return j;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  ExperimentConfig c;
  Fields f(j, "config");
  f.read("seed", c.seed);
  f.read("output_dir", c.output_dir);
  if (const Json* s = f.sub("suite")) {
    Fields g(*s, "suite");
    g.read("languages", c.suite.languages);
    g.read("concepts", c.suite.concepts);
    g.read("center", c.suite.center);
    g.read("seed", c.suite.seed);
    g.done();
  }
  bool decode_budget_given = false;
  if (const Json* d = f.sub("data")) {
    Fields g(*d, "data");
    g.read("train_sentences", c.data.train_sentences);
    g.read("dev_sentences", c.data.dev_sentences);
    g.read("test_sentences", c.data.test_sentences);
    g.read("len_min", c.data.length.min);
    g.read("len_max", c.data.length.max);
    g.read("reorder", c.data.reorder);
    g.read("center_directions", c.data.center_directions);
    if (const Json* e = g.sub("extra_directions")) {
      c.data.extra_directions =
          list_from<Direction>(*e, "data.extra_directions", [](const Json& v) { return direction_from(v, "data.extra_directions"); });
    }
    g.read("max_src_len", c.data.filters.max_src_len);
    g.read("dedup", c.data.filters.dedup);
    g.read("langid_check", c.data.filters.langid_check);
    g.read("seed", c.data.seed);
    g.done();
  }
  if (const Json* m = f.sub("model")) c.model = model_config_from_json(*m);
  if (const Json* t = f.sub("train")) c.train = train_config_from_json(*t);
  if (const Json* d = f.sub("decode")) {
    c.decode = decode_config_from_json(*d);
    decode_budget_given = d->contains("max_new_tokens");
  }
  if (!decode_budget_given) c.decode.max_new_tokens = 2 * c.data.length.max + 4;
  if (const Json* e = f.sub("eval")) {
    Fields g(*e, "eval");
    if (const Json* s = g.sub("strategy")) c.eval.strategy = strategy_from(*s, "eval.strategy");
    g.read("pivot", c.eval.pivot);
    g.read("representation_sentences", c.eval.representation_sentences);
    g.read("representation_tgt", c.eval.representation_tgt);
    std::string smoothing = "add1";
    g.read("smoothing", smoothing);
    if (smoothing == "add1") {
      c.eval.smoothing = Smoothing::kAdd1;
    } else if (smoothing == "none") {
      c.eval.smoothing = Smoothing::kNone;
    } else {
      throw ConfigError("eval.smoothing: expected 'add1' or 'none'");
    }
    g.done();
  }
  if (const Json* s = f.sub("sweep")) {
    Fields g(*s, "sweep");
    if (const Json* a = g.sub("alphas")) {
      c.sweep.alphas = list_from<double>(*a, "sweep.alphas", [&](const Json& v) { return g.convert<double>(v, "alphas"); });
    }
    if (const Json* a = g.sub("strategies")) {
      c.sweep.strategies =
          list_from<Strategy>(*a, "sweep.strategies", [](const Json& v) { return strategy_from(v, "sweep.strategies"); });
    }
    if (const Json* a = g.sub("lora_ranks")) {
      c.sweep.lora_ranks = list_from<int>(*a, "sweep.lora_ranks", [&](const Json& v) { return g.convert<int>(v, "lora_ranks"); });
    }
    if (const Json* a = g.sub("seeds")) {
      c.sweep.seeds = list_from<std::uint64_t>(*a, "sweep.seeds",
                                               [&](const Json& v) { return g.convert<std::uint64_t>(v, "seeds"); });
    }
    g.done();
  }
  f.done();
  c.resolve();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

std::string config_hash(const Json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace xconst

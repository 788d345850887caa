#include "xconst/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <spdlog/spdlog.h>

#include "xconst/config.hpp"
#include "xconst/error.hpp"
#include "xconst/rng.hpp"

namespace xconst {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void TrainConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("train: alpha must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 0 || max_steps < 0 || warmup_steps < 0) throw ConfigError("train: negative epochs/steps");
  if (lora_rank < 0) throw ConfigError("train: lora rank must be >= 0");
  if (!(effective_lr() > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(grad_clip > 0.0)) throw ConfigError("train: grad_clip must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("train: betas must be in [0, 1)");
}

void adamw_step(std::span<const OptimSlot> slots, AdamWState& state, const AdamWHyper& hyper) {
  if (state.m.empty()) {
    for (const auto& s : slots) {
      state.m.emplace_back(s.param->shape(), 0.0);
      state.v.emplace_back(s.param->shape(), 0.0);
    }
  }
  if (state.m.size() != slots.size()) throw ContractError("adamw: optimizer state has " + std::to_string(state.m.size()) + " slots, got " + std::to_string(slots.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    ad::Tensor& p = *slots[k].param;
    const ad::Tensor& g = *slots[k].grad;
    if (g.shape() != p.shape() || state.m[k].shape() != p.shape()) {
      throw ContractError("adamw: shape mismatch " + ad::shape_str(p.shape()) + " vs grad " + ad::shape_str(g.shape()));
    }
    ad::Tensor& m = state.m[k];
    ad::Tensor& v = state.v[k];
    const double wd = slots[k].decay ? hyper.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= hyper.lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + wd * p[i]);
    }
  }
}

double clip_grad_norm(std::span<ad::Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g.storage()) v *= s;
    }
  }
  return norm;
}

std::vector<std::vector<int>> make_batches(int num_examples, int batch_size, std::uint64_t seed, int epoch) {
  if (num_examples < 1) throw DataError("no training data");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<int> order(num_examples);
  for (int i = 0; i < num_examples; ++i) order[i] = i;
  Rng rng = make_rng(seed, mix_key(0x6261746368ULL, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng(), i)]);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < num_examples; start += batch_size) {
    batches.emplace_back(order.begin() + start, order.begin() + std::min(num_examples, start + batch_size));
  }
  return batches;
}

void write_train_log(std::ostream& out, const TrainLog& log, bool include_wall) {
  out << "step,ce,kl,total,alpha,grad_norm,wall_ms\n";
  for (const auto& r : log.rows) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.step, r.ce, r.kl, r.total, r.alpha, r.grad_norm,
                       include_wall ? r.wall_ms : 0.0);
  }
}

TrainLog train(ModelParams& params, TrainerState& state, const std::vector<ParallelExample>& dataset,
               const LanguageSuite& suite, const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  if (dataset.empty()) throw DataError("no training data");
  if (config.lora_rank > 0 && !params.has_lora()) attach_lora(params, config.lora_rank, mix_key(config.seed, 0x61646170ULL));
  const TrainMode mode = config.lora_rank > 0 ? TrainMode::kLora : TrainMode::kFull;
  const double alpha = config.effective_alpha();

  std::vector<ParamRef> refs = params.list();
  TrainLog log;
  log.config = config;
  const auto t_start = std::chrono::steady_clock::now();
  const int n = static_cast<int>(dataset.size());
  std::int64_t step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch_idx : make_batches(n, config.batch_size, config.seed, epoch)) {
      if (config.max_steps > 0 && step >= config.max_steps) break;
      ++step;
      if (step <= state.step) continue;  // resumed run: already applied
      const auto t0 = std::chrono::steady_clock::now();

      std::vector<const ParallelExample*> examples;
      std::vector<Strategy> strategies;
      for (int i : batch_idx) {
        examples.push_back(&dataset[i]);
        strategies.push_back(pick_strategy(config.strategy_mode, config.seed,
                                           static_cast<std::uint64_t>(epoch) * n + static_cast<std::uint64_t>(i)));
      }
      double lr = config.effective_lr();
      if (config.warmup_steps > 0) lr *= std::min(1.0, static_cast<double>(step) / config.warmup_steps);

      ad::Graph graph;
      BoundModel bound = bind(graph, params, mode);
      BatchLoss loss;
      try {
        loss = batch_loss(bound, suite, examples, strategies, alpha);
        graph.backward(loss.total);
      } catch (const NumericError& e) {
        std::string idx;
        for (int i : batch_idx) idx += (idx.empty() ? "" : ",") + std::to_string(i);
        throw NumericError(fmt::format("{} at step {} (lr {}, batch [{}])", e.what(), step, lr, idx));
      }

      std::vector<ad::Tensor> grads;
      std::vector<std::size_t> slot_of;
      for (std::size_t k = 0; k < refs.size(); ++k) {
        if (!is_trainable(refs[k].kind, mode)) continue;
        grads.push_back(graph.grad(bound.leaves[k]));
        slot_of.push_back(k);
      }
      const double grad_norm = clip_grad_norm(grads, config.grad_clip);
      if (!std::isfinite(grad_norm)) throw NumericError(fmt::format("non-finite gradient norm at step {} (lr {})", step, lr));
      std::vector<OptimSlot> slots;
      for (std::size_t j = 0; j < grads.size(); ++j) {
        const ParamRef& r = refs[slot_of[j]];
        slots.push_back({r.value, &grads[j], r.kind != ParamKind::kNorm});
      }
      adamw_step(slots, state.optim,
                 {lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay});
      state.step = step;

      TrainLogRow row;
      row.step = step;
      row.ce = loss.breakdown.ce;
      row.kl = loss.breakdown.kl;
      row.total = loss.breakdown.total;
      row.alpha = alpha;
      row.grad_norm = grad_norm;
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      log.rows.push_back(row);
      if (on_step) on_step(row);
    }
  }
  log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'X', 'C', 'O', 'N', 'S', 'T', 'C', 'K'};

template <class T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

void put_tensor(std::string& buf, const std::string& name, const ad::Tensor& t) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
  buf += name;
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) put<std::int64_t>(buf, d);
  buf.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("truncated file");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const TrainerState& state,
                     const TrainConfig& config) {
  nlohmann::ordered_json header;
  header["model"] = to_json(params.config);
  header["lora_rank"] = params.lora_rank;
  header["lora_alpha"] = params.lora_alpha;
  header["train"] = to_json(config);
  header["step"] = state.step;
  header["optim_step"] = state.optim.step;
  const std::string json = header.dump();

  const auto named = params.list();
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint64_t>(buf, json.size());
  buf += json;
  const bool has_moments = !state.optim.m.empty();
  const std::size_t count = named.size() + (has_moments ? state.optim.m.size() * 2 : 0);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : named) put_tensor(buf, "param/" + name, *t);
  if (has_moments) {
    for (std::size_t k = 0; k < state.optim.m.size(); ++k) put_tensor(buf, "adam_m/" + std::to_string(k), state.optim.m[k]);
    for (std::size_t k = 0; k < state.optim.v.size(); ++k) put_tensor(buf, "adam_v/" + std::to_string(k), state.optim.v[k]);
  }

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw CheckpointError("bad magic in " + path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(fmt::format("version {} not supported (expected {})", version, kCheckpointVersion));
  }
  const auto json_len = r.get<std::uint64_t>();
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(r.bytes(json_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad header: ") + e.what());
  }

  Checkpoint ck;
  const ModelConfig mc = model_config_from_json(header.at("model"));
  if (expected_vocab && *expected_vocab != mc.vocab_size) {
    throw ConfigError(fmt::format("checkpoint vocab size {} does not match expected {}", mc.vocab_size, *expected_vocab));
  }
  ck.config = train_config_from_json(header.at("train"));
  ck.params = init_model(mc, 0);
  const int lora_rank = header.at("lora_rank").get<int>();
  if (lora_rank > 0) attach_lora(ck.params, lora_rank, 0, header.at("lora_alpha").get<double>());
  ck.state.step = header.at("step").get<std::int64_t>();
  ck.state.optim.step = header.at("optim_step").get<std::int64_t>();

  auto refs = ck.params.list();
  const auto count = r.get<std::uint32_t>();
  std::size_t params_seen = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    ad::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.get<std::int64_t>()));
    ad::Tensor t(shape);
    const std::string raw = r.bytes(t.size() * sizeof(double));
    std::memcpy(t.ptr(), raw.data(), raw.size());
    if (name.rfind("param/", 0) == 0) {
      const std::string pname = name.substr(6);
      auto it = std::find_if(refs.begin(), refs.end(), [&](const ParamRef& p) { return p.name == pname; });
      if (it == refs.end()) throw CheckpointError("unknown tensor " + name);
      if (it->value->shape() != t.shape()) {
        throw CheckpointError(name + " has shape " + ad::shape_str(t.shape()) + ", model expects " +
                              ad::shape_str(it->value->shape()));
      }
      *it->value = std::move(t);
      ++params_seen;
    } else if (name.rfind("adam_m/", 0) == 0) {
      ck.state.optim.m.push_back(std::move(t));
    } else if (name.rfind("adam_v/", 0) == 0) {
      ck.state.optim.v.push_back(std::move(t));
    } else {
      throw CheckpointError("unknown tensor " + name);
    }
  }
  if (params_seen != refs.size()) throw CheckpointError("missing parameter tensors");
  if (!r.done()) throw CheckpointError("trailing bytes");
  return ck;
}

}  // namespace xconst

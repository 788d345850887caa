#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "xconst/autodiff.hpp"
#include "xconst/corpus.hpp"
#include "xconst/model.hpp"
#include "xconst/objective.hpp"
#include "xconst/prompt.hpp"

namespace xconst {

enum class ObjectiveMode { kVanilla, kXConst };

struct TrainConfig {
  ObjectiveMode mode = ObjectiveMode::kVanilla;
  double alpha = 0.0;  // ignored in vanilla mode
  StrategyMode strategy_mode = StrategyMode::fixed_to(Strategy::kTEnc);
  int lora_rank = 0;   // 0: full-weight finetuning
  std::optional<double> lr;  // default 3e-4 full / 1e-3 LoRA
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 10;
  int max_steps = 0;     // 0: run all epochs
  int warmup_steps = 0;  // linear warmup; 0 = constant lr
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  double effective_lr() const { return lr.value_or(lora_rank > 0 ? 1e-3 : 3e-4); }
  double effective_alpha() const { return mode == ObjectiveMode::kXConst ? alpha : 0.0; }
  void validate() const;
};

// AdamW ---------------------------------------------------------------------

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::int64_t step = 0;
  std::vector<ad::Tensor> m, v;
};

struct OptimSlot {
  ad::Tensor* param;
  const ad::Tensor* grad;
  bool decay;
};

/// One decoupled-weight-decay step:
/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
void adamw_step(std::span<const OptimSlot> slots, AdamWState& state, const AdamWHyper& hyper);

/// Rescales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Tensor> grads, double max_norm);

// Training ------------------------------------------------------------------

/// Dataset indices grouped into batches; shuffle keyed by (seed, epoch), last
/// short batch kept.
std::vector<std::vector<int>> make_batches(int num_examples, int batch_size, std::uint64_t seed, int epoch);

struct TrainLogRow {
  std::int64_t step = 0;
  double ce = 0.0, kl = 0.0, total = 0.0, alpha = 0.0, grad_norm = 0.0, wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  double wall_ms = 0.0;
  TrainConfig config;
};

/// `step,ce,kl,total,alpha,grad_norm,wall_ms`. With include_wall off the wall_ms
/// column is written as 0 so logs compare byte-for-byte across runs.
void write_train_log(std::ostream& out, const TrainLog& log, bool include_wall = true);

struct TrainerState {
  AdamWState optim;
  std::int64_t step = 0;  // optimizer steps completed
};

using StepCallback = std::function<void(const TrainLogRow&)>;

/// Runs AdamW over the dataset. Attaches LoRA adapters when the config asks for
/// them and the model has none. `state` carries optimizer moments and the step
/// counter; training resumes after state.step.
TrainLog train(ModelParams& params, TrainerState& state, const std::vector<ParallelExample>& dataset,
               const LanguageSuite& suite, const TrainConfig& config, const StepCallback& on_step = {});

// Checkpoints ---------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  TrainerState state;
  TrainConfig config;
};

/// Atomic (temp file + rename) binary checkpoint: magic, version, JSON header,
/// then named tensors as little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const TrainerState& state,
                     const TrainConfig& config);
/// Throws CheckpointError on bad magic/version or truncation, ConfigError when
/// expected_vocab is given and differs from the stored model.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_vocab = std::nullopt);

}  // namespace xconst

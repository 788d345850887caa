#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xconst/autodiff.hpp"

namespace xconst {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;
  int d_ff = 256;
  int max_seq_len = 96;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Which parameters receive gradients and optimizer updates.
enum class TrainMode { kFull, kLora };

struct LayerParams {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor wq, wk, wv, wo;  // [d, d]
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor w_up;    // [d, d_ff]
  ad::Tensor w_down;  // [d_ff, d]
  // Low-rank adapter on the down-projection: delta = s * (h A) B.
  ad::Tensor lora_a;  // [d_ff, r]
  ad::Tensor lora_b;  // [r, d], zero at attachment
};

enum class ParamKind { kMatrix, kNorm, kLora };

struct ParamRef {
  std::string name;
  ad::Tensor* value;
  ParamKind kind;
};

struct ModelParams {
  ModelConfig config;
  ad::Tensor tok_emb;  // [V, d], tied with the output head
  ad::Tensor pos_emb;  // [max_seq_len, d]
  std::vector<LayerParams> layers;
  ad::Tensor lnf_gain, lnf_bias;
  int lora_rank = 0;  // 0: no adapters attached
  double lora_alpha = 0.0;

  bool has_lora() const { return lora_rank > 0; }
  double lora_scaling() const { return has_lora() ? lora_alpha / lora_rank : 0.0; }

  /// Every tensor in a fixed order (checkpoint and optimizer order).
  std::vector<ParamRef> list();
  std::vector<std::pair<std::string, const ad::Tensor*>> list() const;
  std::size_t num_parameters() const;
  std::size_t num_trainable(TrainMode mode) const;
};

bool is_trainable(ParamKind kind, TrainMode mode);

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

/// Attaches rank-r adapters to every feed-forward down-projection. alpha <= 0
/// selects the default alpha = rank (scaling 1).
void attach_lora(ModelParams& params, int rank, std::uint64_t seed, double alpha = 0.0);

/// Right-padded batch of token sequences.
struct TokenBatch {
  int batch = 0;
  int seq = 0;
  std::vector<int> ids;       // batch*seq, kPad after each sequence
  std::vector<int> lengths;   // unpadded lengths

  static TokenBatch from(const std::vector<std::vector<int>>& seqs);
  int at(int b, int t) const { return ids[static_cast<std::size_t>(b) * seq + t]; }
};

/// Parameters bound as leaves of one graph.
struct BoundModel {
  const ModelParams* params = nullptr;
  TrainMode mode = TrainMode::kFull;
  ad::Var tok_emb, pos_emb, lnf_gain, lnf_bias;
  struct Layer {
    ad::Var ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w_up, w_down, lora_a, lora_b;
  };
  std::vector<Layer> layers;
  /// Leaves in ModelParams::list() order.
  std::vector<ad::Var> leaves;
};

BoundModel bind(ad::Graph& graph, const ModelParams& params, TrainMode mode);

/// Final-norm hidden states, [batch*seq, d_model].
ad::Var forward_hidden(const BoundModel& model, const TokenBatch& batch);
/// Tied output head applied to selected hidden rows, [rows, vocab].
ad::Var project_logits(const BoundModel& model, ad::Var hidden_rows);

/// Pre-softmax predictions, shape [batch, seq, vocab]. No gradient tape is kept.
ad::Tensor forward(const ModelParams& params, const TokenBatch& batch);

/// Logits at the last non-PAD position of every sequence, [batch, vocab].
ad::Tensor last_logits(const ModelParams& params, const TokenBatch& batch);

/// Final-layer (post final norm) hidden state at the last non-PAD token.
std::vector<double> extract_representation(const ModelParams& params, const std::vector<int>& token_ids);

}  // namespace xconst

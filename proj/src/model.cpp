#include "xconst/model.hpp"

#include <cmath>
#include <random>

#include "xconst/error.hpp"
#include "xconst/rng.hpp"
#include "xconst/vocab.hpp"

namespace xconst {

namespace {

template <class Params, class Fn>
void for_each_param(Params& p, Fn&& fn) {
  fn(std::string("tok_emb"), p.tok_emb, ParamKind::kMatrix);
  fn(std::string("pos_emb"), p.pos_emb, ParamKind::kMatrix);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "ln1.gain", L.ln1_gain, ParamKind::kNorm);
    fn(pre + "ln1.bias", L.ln1_bias, ParamKind::kNorm);
    fn(pre + "attn.wq", L.wq, ParamKind::kMatrix);
    fn(pre + "attn.wk", L.wk, ParamKind::kMatrix);
    fn(pre + "attn.wv", L.wv, ParamKind::kMatrix);
    fn(pre + "attn.wo", L.wo, ParamKind::kMatrix);
    fn(pre + "ln2.gain", L.ln2_gain, ParamKind::kNorm);
    fn(pre + "ln2.bias", L.ln2_bias, ParamKind::kNorm);
    fn(pre + "ff.up", L.w_up, ParamKind::kMatrix);
    fn(pre + "ff.down", L.w_down, ParamKind::kMatrix);
    if (p.lora_rank > 0) {
      fn(pre + "ff.down.lora_a", L.lora_a, ParamKind::kLora);
      fn(pre + "ff.down.lora_b", L.lora_b, ParamKind::kLora);
    }
  }
  fn(std::string("final_ln.gain"), p.lnf_gain, ParamKind::kNorm);
  fn(std::string("final_ln.bias"), p.lnf_bias, ParamKind::kNorm);
}

ad::Tensor normal_tensor(ad::Shape shape, double stddev, Rng& rng) {
  ad::Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

ad::Var affine(ad::Var x, ad::Var gain, ad::Var bias) {
  const int rows = x.shape()[0];
  return ad::add(ad::mul(x, ad::expand_rows(gain, rows)), ad::expand_rows(bias, rows));
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= kEos) throw ConfigError("model: vocab_size " + std::to_string(vocab_size) + " too small");
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 || max_seq_len < 1) {
    throw ConfigError("model: dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
}

std::vector<ParamRef> ModelParams::list() {
  std::vector<ParamRef> out;
  for_each_param(*this, [&](std::string name, ad::Tensor& t, ParamKind k) { out.push_back({std::move(name), &t, k}); });
  return out;
}

std::vector<std::pair<std::string, const ad::Tensor*>> ModelParams::list() const {
  std::vector<std::pair<std::string, const ad::Tensor*>> out;
  for_each_param(*this, [&](std::string name, const ad::Tensor& t, ParamKind) { out.emplace_back(std::move(name), &t); });
  return out;
}

std::size_t ModelParams::num_parameters() const {
  std::size_t n = 0;
  for_each_param(*this, [&](const std::string&, const ad::Tensor& t, ParamKind) { n += t.size(); });
  return n;
}

std::size_t ModelParams::num_trainable(TrainMode mode) const {
  std::size_t n = 0;
  for_each_param(*this, [&](const std::string&, const ad::Tensor& t, ParamKind k) {
    if (is_trainable(k, mode)) n += t.size();
  });
  return n;
}

bool is_trainable(ParamKind kind, TrainMode mode) {
  return mode == TrainMode::kFull ? kind != ParamKind::kLora : kind == ParamKind::kLora;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const int d = config.d_model;
  const double std_in = 0.02;
  const double std_out = 0.02 / std::sqrt(2.0 * config.n_layers);
  Rng rng = make_rng(seed, 0x696e6974ULL);
  ModelParams p;
  p.config = config;
  p.tok_emb = normal_tensor({config.vocab_size, d}, std_in, rng);
  p.pos_emb = normal_tensor({config.max_seq_len, d}, std_in, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerParams L;
    L.ln1_gain = ad::Tensor({d}, 1.0);
    L.ln1_bias = ad::Tensor({d}, 0.0);
    L.wq = normal_tensor({d, d}, std_in, rng);
    L.wk = normal_tensor({d, d}, std_in, rng);
    L.wv = normal_tensor({d, d}, std_in, rng);
    L.wo = normal_tensor({d, d}, std_out, rng);
    L.ln2_gain = ad::Tensor({d}, 1.0);
    L.ln2_bias = ad::Tensor({d}, 0.0);
    L.w_up = normal_tensor({d, config.d_ff}, std_in, rng);
    L.w_down = normal_tensor({config.d_ff, d}, std_out, rng);
    p.layers.push_back(std::move(L));
  }
  p.lnf_gain = ad::Tensor({d}, 1.0);
  p.lnf_bias = ad::Tensor({d}, 0.0);
  return p;
}

void attach_lora(ModelParams& params, int rank, std::uint64_t seed, double alpha) {
  if (params.has_lora()) throw ContractError("attach_lora: adapters already attached");
  if (rank < 1) throw ConfigError("attach_lora: rank must be >= 1");
  const int d = params.config.d_model, ff = params.config.d_ff;
  Rng rng = make_rng(seed, 0x6c6f7261ULL);
  const double bound = 1.0 / std::sqrt(static_cast<double>(ff));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& L : params.layers) {
    L.lora_a = ad::Tensor({ff, rank});
    for (double& v : L.lora_a.storage()) v = dist(rng);
    L.lora_b = ad::Tensor({rank, d}, 0.0);
  }
  params.lora_rank = rank;
  params.lora_alpha = alpha > 0.0 ? alpha : static_cast<double>(rank);
}

TokenBatch TokenBatch::from(const std::vector<std::vector<int>>& seqs) {
  if (seqs.empty()) throw EmptyInputError("token batch has no sequences");
  TokenBatch b;
  b.batch = static_cast<int>(seqs.size());
  for (const auto& s : seqs) {
    if (s.empty()) throw EmptyInputError("empty token sequence");
    b.seq = std::max(b.seq, static_cast<int>(s.size()));
    b.lengths.push_back(static_cast<int>(s.size()));
  }
  b.ids.assign(static_cast<std::size_t>(b.batch) * b.seq, kPad);
  for (int i = 0; i < b.batch; ++i) std::copy(seqs[i].begin(), seqs[i].end(), b.ids.begin() + static_cast<std::size_t>(i) * b.seq);
  return b;
}

BoundModel bind(ad::Graph& graph, const ModelParams& params, TrainMode mode) {
  if (mode == TrainMode::kLora && !params.has_lora()) throw ConfigError("lora mode requires attached adapters");
  BoundModel m;
  m.params = &params;
  m.mode = mode;
  // Must follow the order of for_each_param.
  auto leaf = [&](const ad::Tensor& t, ParamKind kind) {
    ad::Var v = graph.param(t, is_trainable(kind, mode));
    m.leaves.push_back(v);
    return v;
  };
  m.tok_emb = leaf(params.tok_emb, ParamKind::kMatrix);
  m.pos_emb = leaf(params.pos_emb, ParamKind::kMatrix);
  for (const auto& L : params.layers) {
    BoundModel::Layer b;
    b.ln1_gain = leaf(L.ln1_gain, ParamKind::kNorm);
    b.ln1_bias = leaf(L.ln1_bias, ParamKind::kNorm);
    b.wq = leaf(L.wq, ParamKind::kMatrix);
    b.wk = leaf(L.wk, ParamKind::kMatrix);
    b.wv = leaf(L.wv, ParamKind::kMatrix);
    b.wo = leaf(L.wo, ParamKind::kMatrix);
    b.ln2_gain = leaf(L.ln2_gain, ParamKind::kNorm);
    b.ln2_bias = leaf(L.ln2_bias, ParamKind::kNorm);
    b.w_up = leaf(L.w_up, ParamKind::kMatrix);
    b.w_down = leaf(L.w_down, ParamKind::kMatrix);
    if (params.has_lora()) {
      b.lora_a = leaf(L.lora_a, ParamKind::kLora);
      b.lora_b = leaf(L.lora_b, ParamKind::kLora);
    }
    m.layers.push_back(b);
  }
  m.lnf_gain = leaf(params.lnf_gain, ParamKind::kNorm);
  m.lnf_bias = leaf(params.lnf_bias, ParamKind::kNorm);
  return m;
}

ad::Var forward_hidden(const BoundModel& m, const TokenBatch& batch) {
  const ModelConfig& cfg = m.params->config;
  if (batch.seq > cfg.max_seq_len) {
    throw ContractError("sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
  }
  for (int id : batch.ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw ContractError("vocab: token id " + std::to_string(id) + " outside [0, " + std::to_string(cfg.vocab_size) + ")");
    }
  }
  const int n = batch.batch * batch.seq;
  std::vector<int> positions(n);
  std::vector<std::uint8_t> key_valid(n);
  for (int i = 0; i < n; ++i) {
    positions[i] = i % batch.seq;
    key_valid[i] = batch.ids[i] != kPad;
  }
  ad::Var x = ad::add(ad::gather_rows(m.tok_emb, batch.ids), ad::gather_rows(m.pos_emb, positions));
  const double lora_scale = m.params->lora_scaling();
  for (const auto& L : m.layers) {
    ad::Var h = affine(ad::layer_norm(x), L.ln1_gain, L.ln1_bias);
    ad::Var att = ad::causal_attention(ad::matmul(h, L.wq), ad::matmul(h, L.wk), ad::matmul(h, L.wv), batch.batch,
                                       batch.seq, cfg.n_heads, key_valid);
    x = ad::add(x, ad::matmul(att, L.wo));
    h = affine(ad::layer_norm(x), L.ln2_gain, L.ln2_bias);
    ad::Var u = ad::gelu(ad::matmul(h, L.w_up));
    ad::Var down = ad::matmul(u, L.w_down);
    if (L.lora_a.valid()) down = ad::add(down, ad::scale(ad::matmul(ad::matmul(u, L.lora_a), L.lora_b), lora_scale));
    x = ad::add(x, down);
  }
  return affine(ad::layer_norm(x), m.lnf_gain, m.lnf_bias);
}

ad::Var project_logits(const BoundModel& m, ad::Var hidden_rows) { return ad::matmul_nt(hidden_rows, m.tok_emb); }

ad::Tensor forward(const ModelParams& params, const TokenBatch& batch) {
  ad::Graph g(false);
  BoundModel m = bind(g, params, TrainMode::kFull);
  ad::Var logits = project_logits(m, forward_hidden(m, batch));
  ad::Tensor out = logits.value();
  return ad::Tensor({batch.batch, batch.seq, params.config.vocab_size}, std::move(out.storage()));
}

ad::Tensor last_logits(const ModelParams& params, const TokenBatch& batch) {
  ad::Graph g(false);
  BoundModel m = bind(g, params, TrainMode::kFull);
  ad::Var hidden = forward_hidden(m, batch);
  std::vector<int> rows(batch.batch);
  for (int b = 0; b < batch.batch; ++b) rows[b] = b * batch.seq + batch.lengths[b] - 1;
  return project_logits(m, ad::gather_rows(hidden, rows)).value();
}

std::vector<double> extract_representation(const ModelParams& params, const std::vector<int>& token_ids) {
  int last = static_cast<int>(token_ids.size()) - 1;
  while (last >= 0 && token_ids[last] == kPad) --last;
  if (last < 0) throw EmptyInputError("representation of an empty prompt");
  ad::Graph g(false);
  BoundModel m = bind(g, params, TrainMode::kFull);
  TokenBatch batch = TokenBatch::from({token_ids});
  ad::Var hidden = forward_hidden(m, batch);
  const ad::Tensor& h = hidden.value();
  const int d = params.config.d_model;
  return std::vector<double>(h.ptr() + static_cast<std::size_t>(last) * d, h.ptr() + static_cast<std::size_t>(last + 1) * d);
}

}  // namespace xconst

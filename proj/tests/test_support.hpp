#pragma once

#include <random>

#include "xconst/corpus.hpp"
#include "xconst/model.hpp"

namespace xconst::testing {

inline ModelConfig tiny_config(int vocab, int d = 16, int heads = 2, int layers = 2, int max_len = 48) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d;
  c.n_heads = heads;
  c.n_layers = layers;
  c.d_ff = 4 * d;
  c.max_seq_len = max_len;
  return c;
}

inline ConceptSentence random_sentence(std::mt19937_64& rng, int vc, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len), c(0, vc - 1);
  ConceptSentence s(len(rng));
  for (int& x : s) x = c(rng);
  return s;
}

}  // namespace xconst::testing

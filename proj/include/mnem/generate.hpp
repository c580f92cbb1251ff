#pragma once

#include <memory>
#include <vector>

#include "mnem/model.hpp"

namespace mnem {

// Incremental decoding cache. Cross-attention keys/values of the memory are
// computed once and shared between beam hypotheses.
template <class T>
struct DecoderState {
  struct Layer {
    Mat<T> hist;    // dynamic_conv: layer-norm outputs so far; self_attn: keys
    Mat<T> hist_v;  // self_attn values
  };
  std::shared_ptr<const std::vector<Mat<T>>> cross_k, cross_v;
  std::vector<Layer> layers;
  int t = 0;  // tokens consumed
};

template <class T>
DecoderState<T> start_decoding(const Params<T>& params, const ModelInput& input);

// Feeds one token at position state.t and returns its logits (1 x vocab).
template <class T>
Mat<T> decode_step(const Params<T>& params, DecoderState<T>& state, TokenId token);

struct GenerateOptions {
  int beam_width = 1;   // 1 = greedy
  int max_len = 32;     // generated tokens, EOS included; clamped to the model's max_len
  double length_alpha = 0.7;
};

// Starts from BOS and stops at EOS or max_len. Special tokens other than EOS
// are never emitted. Beam hypotheses are ranked by log p / len^alpha.
template <class T>
std::vector<TokenId> generate(const Params<T>& params, const ModelInput& input, const GenerateOptions& opts = {});

template <class T>
std::vector<TokenId> greedy_decode(const Params<T>& params, const ModelInput& input, int max_len);

template <class T>
std::vector<TokenId> beam_decode(const Params<T>& params, const ModelInput& input, int width, int max_len,
                                 double length_alpha);

}  // namespace mnem

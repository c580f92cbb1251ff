#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnem/autograd.hpp"
#include "mnem/corpus.hpp"
#include "mnem/mask.hpp"
#include "mnem/tokenizer.hpp"

namespace mnem {

using ag::Mat;

enum class Arch { decoder_prefix, encoder_decoder };
enum class BlockKind { dynamic_conv, self_attn };

std::string_view to_string(Arch a);
Arch parse_arch(std::string_view s);
std::string_view to_string(BlockKind b);
BlockKind parse_block(std::string_view s);

struct ModelConfig {
  Arch arch = Arch::decoder_prefix;
  BlockKind block = BlockKind::dynamic_conv;
  int d_model = 64;
  int n_layers = 2;  // decoder layers; the encoder gets as many
  int n_heads = 4;
  int conv_kernel = 3;
  int d_img = 32;
  int vocab_size = 0;
  int max_len = 64;       // decoder positions, BOS included
  int max_context = 96;   // tokens kept per context field
  int ffn_mult = 4;
  double dropout = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Parameter indices into Params::tensors; -1 when unused by the config.
struct LnIdx {
  int g = -1, b = -1;
};
struct LinearIdx {
  int w = -1, b = -1;
};
struct AttnIdx {
  LinearIdx q, k, v, o;
};
struct DecoderLayerIdx {
  LnIdx ln1;
  LinearIdx dc_kernel, dc_out;  // dynamic_conv
  AttnIdx self;                 // self_attn
  LnIdx ln2;
  AttnIdx cross;
  LnIdx ln3;
  LinearIdx ff1, ff2;
};
struct EncoderLayerIdx {
  LnIdx ln1;
  AttnIdx self;
  LnIdx ln2;
  LinearIdx ff1, ff2;
};
struct ParamLayout {
  int tok_emb = -1;
  int lm_bias = -1;
  LinearIdx img;
  LnIdx img_ln;
  std::vector<EncoderLayerIdx> enc;
  LnIdx enc_ln;
  std::vector<DecoderLayerIdx> dec;
  LnIdx final_ln;
};

template <class T>
struct Tensor {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
};

// All trainable tensors of one model. The output projection is tok_emb itself.
template <class T>
class Params {
 public:
  Params() = default;
  explicit Params(const ModelConfig& cfg);

  // Embeddings N(0, 0.02); linear weights N(0, 1/fan_in), residual outputs
  // further scaled by 1/sqrt(2 n_layers); gains 1, biases 0.
  void init(std::uint64_t seed);
  void zero_grad();

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }
  Tensor<T>& at(int i) { return tensors_[static_cast<std::size_t>(i)]; }
  const Tensor<T>& at(int i) const { return tensors_[static_cast<std::size_t>(i)]; }
  int index(std::string_view name) const;
  std::size_t count() const;

  // Sinusoidal table rows [first, first + n).
  Mat<T> positions(int first, int n) const;

  template <class U>
  Params<U> cast() const {
    Params<U> out(cfg_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) out.tensors()[i].value = tensors_[i].value.template cast<U>();
    return out;
  }

 private:
  int add(const std::string& name, int rows, int cols);

  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<Tensor<T>> tensors_;
  Mat<T> pos_table_;
};

// Everything the model sees besides the decoder tokens.
struct ModelInput {
  std::vector<TokenId> description;
  std::vector<TokenId> section;
  std::optional<std::vector<float>> image;
  std::vector<TokenId> encoder_caption;  // corrupted caption, encoder_decoder pretraining only

  bool operator==(const ModelInput&) const = default;
};

// One teacher-forced sequence: dec_in = BOS + x, dec_out = y + EOS.
struct Example {
  ModelInput input;
  std::vector<TokenId> dec_in;
  std::vector<TokenId> dec_out;
};

enum class Phase { pretrain, finetune };

// Builds the model input for a pair. Pretraining uses the corrupted caption
// (decoder input for decoder_prefix, encoder tail for encoder_decoder);
// finetuning uses the clean caption. Strategy/arch pairings are checked:
// mnem-decoder needs decoder_prefix, mnem-sentinel needs encoder_decoder.
Example make_example(const ModelConfig& cfg, const TrainingPair& pair, const FeatureStore* features, Phase phase,
                     bool use_image = true);

// Context for generation only.
ModelInput make_input(const ModelConfig& cfg, const ContextInputs& ctx, const FeatureStore* features,
                      bool use_image = true);

// Image slot (linear + layer norm) followed by description and section token
// embeddings, scaled by sqrt(d_model) with sinusoidal positions. The image
// slot has no position. For encoder_decoder this is the encoder input before
// the encoder caption tail.
template <class T>
Mat<T> embed_context(const Params<T>& params, const ModelInput& input);

// Rows of the final memory the decoder attends to (after the encoder for
// encoder_decoder).
template <class T>
Mat<T> encode_memory(const Params<T>& params, const ModelInput& input);

// Logits (prefix_len x vocab) for a decoder prefix starting with BOS.
template <class T>
Mat<T> forward_logits(const Params<T>& params, const ModelInput& input, const std::vector<TokenId>& prefix);

// Summed token cross-entropy times `weight`; accumulates gradients into
// params when `accumulate` is set. `dropout_seed` drives dropout masks.
template <class T>
T example_loss(Params<T>& params, const Example& ex, T weight, bool accumulate, std::uint64_t dropout_seed = 0);

// Standalone dynamic convolution sublayer (kernel projection, softmax,
// causal depthwise sum, output projection) for a layer's weights.
template <class T>
Mat<T> dynamic_conv_layer(const Params<T>& params, int layer, const Mat<T>& x);

}  // namespace mnem

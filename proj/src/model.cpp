#include "mnem/model.hpp"

#include <cmath>

#include "mnem/error.hpp"
#include "mnem/rng.hpp"

namespace mnem {

using json = nlohmann::json;

std::string_view to_string(Arch a) { return a == Arch::decoder_prefix ? "decoder_prefix" : "encoder_decoder"; }

Arch parse_arch(std::string_view s) {
  if (s == "decoder_prefix") return Arch::decoder_prefix;
  if (s == "encoder_decoder") return Arch::encoder_decoder;
  throw ArgumentError("unknown arch: " + std::string(s));
}

std::string_view to_string(BlockKind b) { return b == BlockKind::dynamic_conv ? "dynamic_conv" : "self_attn"; }

BlockKind parse_block(std::string_view s) {
  if (s == "dynamic_conv") return BlockKind::dynamic_conv;
  if (s == "self_attn") return BlockKind::self_attn;
  throw ArgumentError("unknown block: " + std::string(s));
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) throw ArgumentError("d_model must be a positive multiple of n_heads");
  if (n_layers < 0) throw ArgumentError("n_layers must be >= 0");
  if (conv_kernel < 1) throw ArgumentError("conv_kernel must be >= 1");
  if (d_img <= 0) throw ArgumentError("d_img must be positive");
  if (vocab_size < BpeVocab::kFirstLearned) throw ArgumentError("vocab_size below the reserved id range");
  if (max_len < 2) throw ArgumentError("max_len must be >= 2");
  if (max_context < 0) throw ArgumentError("max_context must be >= 0");
  if (ffn_mult < 1) throw ArgumentError("ffn_mult must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("dropout must lie in [0, 1)");
}

json ModelConfig::to_json() const {
  return json{{"arch", to_string(arch)},   {"block", to_string(block)},     {"d_model", d_model},
              {"n_layers", n_layers},      {"n_heads", n_heads},            {"conv_kernel", conv_kernel},
              {"d_img", d_img},            {"vocab_size", vocab_size},      {"max_len", max_len},
              {"max_context", max_context}, {"ffn_mult", ffn_mult},         {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.arch = parse_arch(j.at("arch").get<std::string>());
  c.block = parse_block(j.at("block").get<std::string>());
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.conv_kernel = j.at("conv_kernel");
  c.d_img = j.at("d_img");
  c.vocab_size = j.at("vocab_size");
  c.max_len = j.at("max_len");
  c.max_context = j.at("max_context");
  c.ffn_mult = j.at("ffn_mult");
  c.dropout = j.at("dropout");
  c.validate();
  return c;
}

template <class T>
int Params<T>::add(const std::string& name, int rows, int cols) {
  tensors_.push_back({name, Mat<T>::Zero(rows, cols), Mat<T>::Zero(rows, cols)});
  return static_cast<int>(tensors_.size()) - 1;
}

template <class T>
Params<T>::Params(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg.d_model;
  const int f = d * cfg.ffn_mult;
  auto ln = [&](const std::string& p) { return LnIdx{add(p + ".g", 1, d), add(p + ".b", 1, d)}; };
  auto lin = [&](const std::string& p, int in, int out) { return LinearIdx{add(p + ".w", in, out), add(p + ".b", 1, out)}; };
  auto attn = [&](const std::string& p) {
    return AttnIdx{lin(p + ".q", d, d), lin(p + ".k", d, d), lin(p + ".v", d, d), lin(p + ".o", d, d)};
  };
  layout_.tok_emb = add("tok_emb", cfg.vocab_size, d);
  layout_.lm_bias = add("lm_bias", 1, cfg.vocab_size);
  layout_.img = lin("img", cfg.d_img, d);
  layout_.img_ln = ln("img_ln");
  if (cfg.arch == Arch::encoder_decoder) {
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "enc" + std::to_string(l);
      EncoderLayerIdx e;
      e.ln1 = ln(p + ".ln1");
      e.self = attn(p + ".self");
      e.ln2 = ln(p + ".ln2");
      e.ff1 = lin(p + ".ff1", d, f);
      e.ff2 = lin(p + ".ff2", f, d);
      layout_.enc.push_back(e);
    }
    layout_.enc_ln = ln("enc_ln");
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    DecoderLayerIdx e;
    e.ln1 = ln(p + ".ln1");
    if (cfg.block == BlockKind::dynamic_conv) {
      e.dc_kernel = lin(p + ".dc_kernel", d, cfg.n_heads * cfg.conv_kernel);
      e.dc_out = lin(p + ".dc_out", d, d);
    } else {
      e.self = attn(p + ".self");
    }
    e.ln2 = ln(p + ".ln2");
    e.cross = attn(p + ".cross");
    e.ln3 = ln(p + ".ln3");
    e.ff1 = lin(p + ".ff1", d, f);
    e.ff2 = lin(p + ".ff2", f, d);
    layout_.dec.push_back(e);
  }
  layout_.final_ln = ln("final_ln");

  const int n_pos = cfg.max_len + 3 * cfg.max_context + 2;
  pos_table_.resize(n_pos, d);
  for (int p = 0; p < n_pos; ++p) {
    for (int i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
      pos_table_(p, i) = static_cast<T>(std::sin(p * freq));
      if (i + 1 < d) pos_table_(p, i + 1) = static_cast<T>(std::cos(p * freq));
    }
  }
}

template <class T>
void Params<T>::init(std::uint64_t seed) {
  const double resid = 1.0 / std::sqrt(2.0 * std::max(1, cfg_.n_layers));
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& t = tensors_[i];
    const std::string& n = t.name;
    CounterRng rng(derive_seed(seed, n));
    auto fill = [&](double sd) {
      for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = static_cast<T>(rng.normal() * sd);
    };
    auto ends = [&](std::string_view suf) { return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0; };
    if (n == "tok_emb") {
      fill(0.02);
    } else if (n == "lm_bias" || ends(".b")) {
      t.value.setZero();
    } else if (ends(".g")) {
      t.value.setOnes();
    } else if (ends(".w")) {
      double sd = 1.0 / std::sqrt(static_cast<double>(t.value.rows()));
      if (ends(".o.w") || ends(".ff2.w") || ends(".dc_out.w")) sd *= resid;
      if (ends(".dc_kernel.w")) sd = 0.02;
      fill(sd);
    }
    t.grad.setZero();
  }
}

template <class T>
void Params<T>::zero_grad() {
  for (auto& t : tensors_) t.grad.setZero();
}

template <class T>
int Params<T>::index(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return static_cast<int>(i);
  }
  throw ArgumentError("no parameter named " + std::string(name));
}

template <class T>
std::size_t Params<T>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

template <class T>
Mat<T> Params<T>::positions(int first, int n) const {
  if (first < 0 || first + n > pos_table_.rows()) throw ArgumentError("position beyond the sinusoid table");
  return pos_table_.middleRows(first, n);
}

template class Params<float>;
template class Params<double>;

namespace {

std::vector<TokenId> head(const std::vector<TokenId>& ids, int n) {
  return {ids.begin(), ids.begin() + std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ids.size()), n)};
}

std::optional<std::vector<float>> image_for(const ModelConfig& cfg, const std::optional<std::string>& id,
                                            const FeatureStore* features, bool use_image) {
  if (!use_image || !id || !features) return std::nullopt;
  const auto* v = features->find(*id);
  if (!v) throw ArgumentError("no image feature for " + *id);
  if (static_cast<int>(v->size()) != cfg.d_img) throw ArgumentError("image feature length differs from d_img");
  return *v;
}

}  // namespace

ModelInput make_input(const ModelConfig& cfg, const ContextInputs& ctx, const FeatureStore* features, bool use_image) {
  ModelInput in;
  in.description = head(ctx.description, cfg.max_context);
  in.section = head(ctx.section, cfg.max_context);
  in.image = image_for(cfg, ctx.image_feature_id, features, use_image);
  return in;
}

Example make_example(const ModelConfig& cfg, const TrainingPair& pair, const FeatureStore* features, Phase phase,
                     bool use_image) {
  const auto strat = pair.masked.strategy;
  Example ex;
  ex.input = make_input(cfg, pair.context, features, use_image);
  std::vector<TokenId> x, y;
  if (phase == Phase::finetune) {
    if (strat == MaskStrategy::MNEM_SENTINEL) throw ArgumentError("finetuning needs uncorrupted captions");
    y = pair.masked.target_ids;
    x = y;
  } else {
    if (strat == MaskStrategy::MNEM_DECODER && cfg.arch != Arch::decoder_prefix) {
      throw ArgumentError("mnem-decoder masking pairs with the decoder_prefix arch");
    }
    if (strat == MaskStrategy::MNEM_SENTINEL && cfg.arch != Arch::encoder_decoder) {
      throw ArgumentError("mnem-sentinel masking pairs with the encoder_decoder arch");
    }
    y = pair.masked.target_ids;
    if (cfg.arch == Arch::decoder_prefix) {
      x = pair.masked.input_ids;
    } else {
      ex.input.encoder_caption = head(pair.masked.input_ids, cfg.max_context);
      x = y;
    }
  }
  const std::size_t n = std::min(y.size(), static_cast<std::size_t>(cfg.max_len - 1));
  ex.dec_in.push_back(BpeVocab::kBos);
  ex.dec_in.insert(ex.dec_in.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(std::min(n, x.size())));
  ex.dec_out.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n));
  ex.dec_out.push_back(BpeVocab::kEos);
  if (ex.dec_in.size() != ex.dec_out.size()) throw ArgumentError("corrupted and target captions differ in length");
  return ex;
}

namespace {

template <class T>
class Graph {
 public:
  using Var = ag::Var;

  Graph(const Params<T>& p, Params<T>* grads, CounterRng* dropout_rng)
      : p_(p), grads_(grads), rng_(dropout_rng), cfg_(p.config()), vars_(p.tensors().size()) {}

  ag::Tape<T>& tape() { return tape_; }

  Var w(int i) {
    auto& v = vars_[static_cast<std::size_t>(i)];
    if (v.id < 0) {
      v = grads_ ? tape_.param(p_.at(i).value, grads_->at(i).grad) : tape_.ref(p_.at(i).value);
    }
    return v;
  }

  Var linear(Var x, LinearIdx l) { return tape_.add_row(tape_.matmul(x, w(l.w)), w(l.b)); }
  Var ln(Var x, LnIdx l) { return tape_.layer_norm(x, w(l.g), w(l.b)); }
  Var drop(Var x) { return rng_ ? tape_.dropout(x, cfg_.dropout, *rng_) : x; }

  Var tokens(const std::vector<TokenId>& ids, int first_pos) {
    Var e = tape_.gather(w(p_.layout().tok_emb), std::vector<int>(ids.begin(), ids.end()));
    e = tape_.scale(e, static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_model))));
    return tape_.add(e, tape_.constant(p_.positions(first_pos, static_cast<int>(ids.size()))));
  }

  Var context(const ModelInput& in, int* next_pos) {
    std::vector<Var> parts;
    if (in.image) {
      if (static_cast<int>(in.image->size()) != cfg_.d_img) throw ArgumentError("image feature length differs from d_img");
      Mat<T> f(1, cfg_.d_img);
      for (int i = 0; i < cfg_.d_img; ++i) f(0, i) = static_cast<T>((*in.image)[static_cast<std::size_t>(i)]);
      parts.push_back(ln(linear(tape_.constant(std::move(f)), p_.layout().img), p_.layout().img_ln));
    }
    int pos = 0;
    for (const auto* field : {&in.description, &in.section}) {
      if (field->empty()) continue;
      parts.push_back(tokens(*field, pos));
      pos += static_cast<int>(field->size());
    }
    if (parts.empty()) throw ArgumentError("model input has no context");
    if (next_pos) *next_pos = pos;
    return parts.size() == 1 ? parts[0] : tape_.concat_rows(parts);
  }

  Var attend(Var q_in, Var kv_in, const AttnIdx& a, bool causal) {
    Var q = linear(q_in, a.q);
    Var k = linear(kv_in, a.k);
    Var v = linear(kv_in, a.v);
    return linear(tape_.attention(q, k, v, cfg_.n_heads, causal), a.o);
  }

  Var ffn(Var x, LinearIdx f1, LinearIdx f2) { return linear(tape_.relu(linear(x, f1)), f2); }

  Var dynamic_conv(Var u, const DecoderLayerIdx& l) {
    Var logits = linear(u, l.dc_kernel);
    return linear(tape_.dynamic_conv(u, logits, cfg_.n_heads, cfg_.conv_kernel), l.dc_out);
  }

  Var memory(const ModelInput& in) {
    int pos = 0;
    Var m = context(in, &pos);
    if (cfg_.arch == Arch::decoder_prefix) return m;
    if (!in.encoder_caption.empty()) m = tape_.concat_rows({m, tokens(in.encoder_caption, pos)});
    for (const auto& l : p_.layout().enc) {
      Var u = ln(m, l.ln1);
      m = tape_.add(m, drop(attend(u, u, l.self, false)));
      m = tape_.add(m, drop(ffn(ln(m, l.ln2), l.ff1, l.ff2)));
    }
    return ln(m, p_.layout().enc_ln);
  }

  Var logits(Var mem, const std::vector<TokenId>& prefix) {
    if (prefix.empty() || static_cast<int>(prefix.size()) > cfg_.max_len) {
      throw ArgumentError("decoder prefix length must lie in [1, max_len]");
    }
    Var h = tokens(prefix, 0);
    for (const auto& l : p_.layout().dec) {
      Var u = ln(h, l.ln1);
      Var mix = cfg_.block == BlockKind::dynamic_conv ? dynamic_conv(u, l) : attend(u, u, l.self, true);
      h = tape_.add(h, drop(mix));
      h = tape_.add(h, drop(attend(ln(h, l.ln2), mem, l.cross, false)));
      h = tape_.add(h, drop(ffn(ln(h, l.ln3), l.ff1, l.ff2)));
    }
    h = ln(h, p_.layout().final_ln);
    return tape_.add_row(tape_.matmul_bt(h, w(p_.layout().tok_emb)), w(p_.layout().lm_bias));
  }

 private:
  const Params<T>& p_;
  Params<T>* grads_;
  CounterRng* rng_;
  const ModelConfig& cfg_;
  ag::Tape<T> tape_;
  std::vector<Var> vars_;
};

}  // namespace

template <class T>
Mat<T> embed_context(const Params<T>& params, const ModelInput& input) {
  Graph<T> g(params, nullptr, nullptr);
  return g.tape().value(g.context(input, nullptr));
}

template <class T>
Mat<T> encode_memory(const Params<T>& params, const ModelInput& input) {
  Graph<T> g(params, nullptr, nullptr);
  return g.tape().value(g.memory(input));
}

template <class T>
Mat<T> forward_logits(const Params<T>& params, const ModelInput& input, const std::vector<TokenId>& prefix) {
  Graph<T> g(params, nullptr, nullptr);
  return g.tape().value(g.logits(g.memory(input), prefix));
}

template <class T>
T example_loss(Params<T>& params, const Example& ex, T weight, bool accumulate, std::uint64_t dropout_seed) {
  if (ex.dec_in.size() != ex.dec_out.size()) throw ArgumentError("decoder input and target lengths differ");
  CounterRng rng(dropout_seed);
  const bool use_dropout = accumulate && params.config().dropout > 0.0;
  Graph<T> g(params, accumulate ? &params : nullptr, use_dropout ? &rng : nullptr);
  ag::Var logits = g.logits(g.memory(ex.input), ex.dec_in);
  ag::Var loss = g.tape().cross_entropy(logits, std::vector<int>(ex.dec_out.begin(), ex.dec_out.end()), weight);
  if (accumulate) g.tape().backward(loss);
  return g.tape().scalar(loss);
}

template <class T>
Mat<T> dynamic_conv_layer(const Params<T>& params, int layer, const Mat<T>& x) {
  if (params.config().block != BlockKind::dynamic_conv || layer < 0 ||
      layer >= static_cast<int>(params.layout().dec.size())) {
    throw ArgumentError("no dynamic convolution layer " + std::to_string(layer));
  }
  Graph<T> g(params, nullptr, nullptr);
  ag::Var in = g.tape().constant(x);
  return g.tape().value(g.dynamic_conv(in, params.layout().dec[static_cast<std::size_t>(layer)]));
}

#define MNEM_INSTANTIATE(T)                                                                               \
  template Mat<T> embed_context<T>(const Params<T>&, const ModelInput&);                                  \
  template Mat<T> encode_memory<T>(const Params<T>&, const ModelInput&);                                  \
  template Mat<T> forward_logits<T>(const Params<T>&, const ModelInput&, const std::vector<TokenId>&);    \
  template T example_loss<T>(Params<T>&, const Example&, T, bool, std::uint64_t);                         \
  template Mat<T> dynamic_conv_layer<T>(const Params<T>&, int, const Mat<T>&);

MNEM_INSTANTIATE(float)
MNEM_INSTANTIATE(double)

}  // namespace mnem

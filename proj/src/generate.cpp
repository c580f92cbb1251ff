#include "mnem/generate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mnem/error.hpp"

namespace mnem {

namespace {

template <class T>
using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
Row<T> layer_norm(const Row<T>& x, const Params<T>& p, LnIdx l) {
  const T mu = x.mean();
  const T var = (x.array() - mu).square().mean();
  const T rstd = T(1) / std::sqrt(var + T(1e-5));
  return ((x.array() - mu) * rstd * p.at(l.g).value.row(0).array() + p.at(l.b).value.row(0).array()).matrix();
}

template <class T>
Mat<T> linear(const Mat<T>& x, const Params<T>& p, LinearIdx l) {
  Mat<T> y = x * p.at(l.w).value;
  y.rowwise() += p.at(l.b).value.row(0);
  return y;
}

template <class T>
Row<T> linear(const Row<T>& x, const Params<T>& p, LinearIdx l) {
  return x * p.at(l.w).value + p.at(l.b).value.row(0);
}

template <class T>
void softmax(Eigen::Ref<Row<T>> s) {
  const T mx = s.maxCoeff();
  s = (s.array() - mx).exp();
  s /= s.sum();
}

// One query row against m keys/values.
template <class T>
Row<T> attend_row(const Row<T>& q, const Mat<T>& k, const Mat<T>& v, int heads) {
  const Eigen::Index dh = q.size() / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  Row<T> out(q.size());
  for (int h = 0; h < heads; ++h) {
    Row<T> s = (q.segment(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * sc;
    softmax<T>(s);
    out.segment(h * dh, dh) = s * v.middleCols(h * dh, dh);
  }
  return out;
}

template <class T>
void append_row(Mat<T>& m, const Row<T>& r) {
  m.conservativeResize(m.rows() + 1, r.size());
  m.row(m.rows() - 1) = r;
}

bool allowed(TokenId id) { return id == BpeVocab::kEos || !BpeVocab::is_special(id); }

template <class T>
std::vector<double> log_probs(const Mat<T>& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    if (allowed(static_cast<TokenId>(i))) mx = std::max(mx, static_cast<double>(logits(0, i)));
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    if (allowed(static_cast<TokenId>(i))) sum += std::exp(static_cast<double>(logits(0, i)) - mx);
  }
  const double lse = mx + std::log(sum);
  std::vector<double> out(static_cast<std::size_t>(logits.cols()), -std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    if (allowed(static_cast<TokenId>(i))) out[static_cast<std::size_t>(i)] = static_cast<double>(logits(0, i)) - lse;
  }
  return out;
}

int clamp_len(const ModelConfig& cfg, int max_len) { return std::max(0, std::min(max_len, cfg.max_len)); }

}  // namespace

template <class T>
DecoderState<T> start_decoding(const Params<T>& params, const ModelInput& input) {
  const Mat<T> mem = encode_memory(params, input);
  auto ks = std::make_shared<std::vector<Mat<T>>>();
  auto vs = std::make_shared<std::vector<Mat<T>>>();
  DecoderState<T> st;
  for (const auto& l : params.layout().dec) {
    ks->push_back(linear(mem, params, l.cross.k));
    vs->push_back(linear(mem, params, l.cross.v));
    st.layers.push_back({Mat<T>(0, params.config().d_model), Mat<T>(0, params.config().d_model)});
  }
  st.cross_k = std::move(ks);
  st.cross_v = std::move(vs);
  return st;
}

template <class T>
Mat<T> decode_step(const Params<T>& params, DecoderState<T>& st, TokenId token) {
  const ModelConfig& cfg = params.config();
  if (st.t >= cfg.max_len) throw ArgumentError("decoder prefix longer than max_len");
  if (token < 0 || token >= cfg.vocab_size) throw ArgumentError("token id out of range");
  const auto& lay = params.layout();
  Row<T> h = params.at(lay.tok_emb).value.row(token) * static_cast<T>(std::sqrt(static_cast<double>(cfg.d_model)));
  h += params.positions(st.t, 1).row(0);
  const int H = cfg.n_heads, K = cfg.conv_kernel;
  const Eigen::Index dh = cfg.d_model / H;
  for (std::size_t li = 0; li < lay.dec.size(); ++li) {
    const auto& l = lay.dec[li];
    auto& cache = st.layers[li];
    const Row<T> u = layer_norm<T>(h, params, l.ln1);
    Row<T> mix;
    if (cfg.block == BlockKind::dynamic_conv) {
      append_row<T>(cache.hist, u);
      Row<T> w = linear<T>(u, params, l.dc_kernel);
      Row<T> y = Row<T>::Zero(cfg.d_model);
      const Eigen::Index t = cache.hist.rows() - 1;
      for (int hh = 0; hh < H; ++hh) {
        softmax<T>(w.segment(hh * K, K));
        for (int j = 0; j < K && j <= t; ++j) {
          y.segment(hh * dh, dh) += w(hh * K + j) * cache.hist.row(t - j).segment(hh * dh, dh);
        }
      }
      mix = linear<T>(y, params, l.dc_out);
    } else {
      append_row<T>(cache.hist, linear<T>(u, params, l.self.k));
      append_row<T>(cache.hist_v, linear<T>(u, params, l.self.v));
      mix = linear<T>(attend_row<T>(linear<T>(u, params, l.self.q), cache.hist, cache.hist_v, H), params, l.self.o);
    }
    h += mix;
    const Row<T> q = linear<T>(layer_norm<T>(h, params, l.ln2), params, l.cross.q);
    h += linear<T>(attend_row<T>(q, (*st.cross_k)[li], (*st.cross_v)[li], H), params, l.cross.o);
    Row<T> f = linear<T>(layer_norm<T>(h, params, l.ln3), params, l.ff1).cwiseMax(T(0));
    h += linear<T>(f, params, l.ff2);
  }
  const Row<T> z = layer_norm<T>(h, params, lay.final_ln);
  Mat<T> logits = z * params.at(lay.tok_emb).value.transpose();
  logits.row(0) += params.at(lay.lm_bias).value.row(0);
  ++st.t;
  return logits;
}

template <class T>
std::vector<TokenId> greedy_decode(const Params<T>& params, const ModelInput& input, int max_len) {
  max_len = clamp_len(params.config(), max_len);
  DecoderState<T> st = start_decoding(params, input);
  std::vector<TokenId> out;
  TokenId tok = BpeVocab::kBos;
  for (int step = 0; step < max_len; ++step) {
    const auto lp = log_probs(decode_step(params, st, tok));
    tok = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (tok == BpeVocab::kEos) break;
    out.push_back(tok);
  }
  return out;
}

template <class T>
std::vector<TokenId> beam_decode(const Params<T>& params, const ModelInput& input, int width, int max_len,
                                 double length_alpha) {
  if (width < 1) throw ArgumentError("beam width must be >= 1");
  max_len = clamp_len(params.config(), max_len);
  struct Hyp {
    DecoderState<T> st;
    std::vector<TokenId> toks;
    double logp = 0.0;
    bool done = false;
  };
  struct Cand {
    std::size_t parent;
    TokenId tok;
    double logp;
  };
  std::vector<Hyp> alive;
  alive.push_back({start_decoding(params, input), {}, 0.0, false});
  std::vector<Hyp> finished;
  for (int step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      const TokenId last = alive[i].toks.empty() ? BpeVocab::kBos : alive[i].toks.back();
      const auto lp = log_probs(decode_step(params, alive[i].st, last));
      std::vector<TokenId> idx(lp.size());
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = static_cast<TokenId>(k);
      const std::size_t top = std::min(idx.size(), static_cast<std::size_t>(width));
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(), [&](TokenId a, TokenId b) {
        return lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(b)] ||
               (lp[static_cast<std::size_t>(a)] == lp[static_cast<std::size_t>(b)] && a < b);
      });
      for (std::size_t k = 0; k < top; ++k) {
        cands.push_back({i, idx[k], alive[i].logp + lp[static_cast<std::size_t>(idx[k])]});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.logp > b.logp; });
    const std::size_t slots = static_cast<std::size_t>(width) - finished.size();
    std::vector<Hyp> next;
    for (std::size_t c = 0; c < std::min(slots, cands.size()); ++c) {
      Hyp h{alive[cands[c].parent].st, alive[cands[c].parent].toks, cands[c].logp, false};
      h.toks.push_back(cands[c].tok);
      if (cands[c].tok == BpeVocab::kEos) {
        h.done = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  for (auto& h : alive) finished.push_back(std::move(h));
  if (finished.empty()) return {};
  auto score = [&](const Hyp& h) {
    return h.logp / std::pow(static_cast<double>(std::max<std::size_t>(1, h.toks.size())), length_alpha);
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (score(finished[i]) > score(finished[best])) best = i;
  }
  auto toks = finished[best].toks;
  if (!toks.empty() && toks.back() == BpeVocab::kEos) toks.pop_back();
  return toks;
}

template <class T>
std::vector<TokenId> generate(const Params<T>& params, const ModelInput& input, const GenerateOptions& opts) {
  if (opts.beam_width <= 1) return greedy_decode(params, input, opts.max_len);
  return beam_decode(params, input, opts.beam_width, opts.max_len, opts.length_alpha);
}

#define MNEM_INSTANTIATE(T)                                                                                      \
  template DecoderState<T> start_decoding<T>(const Params<T>&, const ModelInput&);                               \
  template Mat<T> decode_step<T>(const Params<T>&, DecoderState<T>&, TokenId);                                   \
  template std::vector<TokenId> generate<T>(const Params<T>&, const ModelInput&, const GenerateOptions&);        \
  template std::vector<TokenId> greedy_decode<T>(const Params<T>&, const ModelInput&, int);                      \
  template std::vector<TokenId> beam_decode<T>(const Params<T>&, const ModelInput&, int, int, double);

MNEM_INSTANTIATE(float)
MNEM_INSTANTIATE(double)

}  // namespace mnem

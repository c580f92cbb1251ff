#include <gtest/gtest.h>

#include <cmath>

#include "mnem/error.hpp"
#include "mnem/generate.hpp"
#include "mnem/gradcheck.hpp"
#include "mnem/io.hpp"
#include "mnem/model.hpp"
#include "mnem/train.hpp"
#include "test_util.hpp"

namespace mnem {
namespace {

using MatD = Mat<double>;

ModelConfig tiny(Arch arch = Arch::decoder_prefix, BlockKind block = BlockKind::dynamic_conv) {
  ModelConfig c;
  c.arch = arch;
  c.block = block;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.conv_kernel = 3;
  c.d_img = 4;
  c.vocab_size = BpeVocab::kFirstLearned + 20;
  c.max_len = 16;
  c.max_context = 16;
  return c;
}

ModelInput tiny_input() {
  ModelInput in;
  in.description = {'a', 'b', 'c'};
  in.section = {'d', 'e'};
  in.image = std::vector<float>{0.5F, -1.0F, 0.25F, 2.0F};
  return in;
}

// Finite-difference check of a scalar tape function of one input matrix.
template <class F>
double op_grad_error(const MatD& x0, F build) {
  ag::Tape<double> tape;
  MatD x = x0;
  MatD gx = MatD::Zero(x.rows(), x.cols());
  tape.backward(build(tape, tape.param(x, gx)));
  double worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + 1e-5;
    ag::Tape<double> t1;
    const double up = t1.scalar(build(t1, t1.ref(x)));
    x.data()[i] = orig - 1e-5;
    ag::Tape<double> t2;
    const double down = t2.scalar(build(t2, t2.ref(x)));
    x.data()[i] = orig;
    worst = std::max(worst, relative_error(gx.data()[i], (up - down) / 2e-5));
  }
  return worst;
}

MatD random_mat(int r, int c, std::uint64_t seed) {
  CounterRng rng(seed);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

TEST(Autograd, LinearMapIsExact) {
  const MatD w = random_mat(4, 3, 1), c = random_mat(5, 3, 2);
  const double err = op_grad_error(random_mat(5, 4, 3), [&](ag::Tape<double>& t, ag::Var x) {
    return t.dot(t.add_row(t.matmul(x, t.constant(w)), t.constant(MatD::Ones(1, 3))), c);
  });
  EXPECT_LT(err, 1e-8);
}

TEST(Autograd, FusedOpsMatchFiniteDifferences) {
  const MatD c = random_mat(5, 6, 9);
  const MatD g = random_mat(1, 6, 10), b = random_mat(1, 6, 11);
  const MatD other = random_mat(5, 6, 12);
  EXPECT_LT(op_grad_error(random_mat(5, 6, 4),
                          [&](ag::Tape<double>& t, ag::Var x) {
                            return t.dot(t.layer_norm(x, t.constant(g), t.constant(b)), c);
                          }),
            1e-6);
  for (bool causal : {false, true}) {
    EXPECT_LT(op_grad_error(random_mat(5, 6, 5),
                            [&](ag::Tape<double>& t, ag::Var x) {
                              ag::Var o = t.constant(other);
                              return t.dot(t.attention(x, t.add(x, o), t.scale(x, 0.5), 2, causal), c);
                            }),
              1e-6);
  }
  EXPECT_LT(op_grad_error(random_mat(5, 6, 6),
                          [&](ag::Tape<double>& t, ag::Var x) {
                            ag::Var logits = t.matmul(x, t.constant(random_mat(6, 6, 13)));
                            return t.dot(t.dynamic_conv(x, logits, 2, 3), c);
                          }),
            1e-6);
  EXPECT_LT(op_grad_error(random_mat(5, 6, 7),
                          [&](ag::Tape<double>& t, ag::Var x) {
                            return t.cross_entropy(x, {0, 3, 5, 1, 1}, 0.2);
                          }),
            1e-6);
  EXPECT_LT(op_grad_error(random_mat(3, 6, 8),
                          [&](ag::Tape<double>& t, ag::Var x) {
                            ag::Var rows = t.gather(x, {2, 0, 2, 1});
                            return t.dot(t.concat_rows({rows, t.constant(other.topRows(1))}), c);
                          }),
            1e-6);
}

TEST(Autograd, SoftmaxRowsSumToOne) {
  ag::Tape<double> t;
  ag::Var ones = t.constant(MatD::Ones(7, 6));
  ag::Var q = t.constant(random_mat(7, 6, 20));
  const MatD a = t.value(t.attention(q, q, ones, 3, true));
  EXPECT_LT((a.array() - 1.0).abs().maxCoeff(), 1e-6);
  const MatD y = t.value(t.dynamic_conv(ones, t.constant(random_mat(7, 6, 21) * 3.0), 2, 3));
  EXPECT_LT((y.bottomRows(5).array() - 1.0).abs().maxCoeff(), 1e-6);
  // t = 0: the two padded taps contribute nothing, so the sum is w_0 < 1
  EXPECT_LT(y(0, 0), 1.0);
}

TEST(EmbedContext, AbsentImageAndHandComputedRows) {
  ModelConfig c = tiny();
  c.d_model = 4;
  c.n_heads = 1;
  c.n_layers = 0;
  c.d_img = 2;
  Params<double> p(c);
  p.init(1);
  auto& emb = p.at(p.layout().tok_emb).value;
  emb.row('a') << 0.1, -0.2, 0.3, 0.0;
  emb.row('b') << 1.0, 0.5, -0.5, 0.25;
  ModelInput in;
  in.description = {'a'};
  in.section = {'b'};
  const MatD m = embed_context(p, in);
  ASSERT_EQ(m.rows(), 2);
  // sqrt(4) = 2; position 0 = (sin 0, cos 0, sin 0, cos 0), position 1 uses
  // frequencies 1 and 10000^(-1/2)
  const double expect[2][4] = {{0.2, -0.4 + 1.0, 0.6, 0.0 + 1.0},
                               {2.0 + std::sin(1.0), 1.0 + std::cos(1.0), -1.0 + std::sin(0.01), 0.5 + std::cos(0.01)}};
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(m(r, k), expect[r][k], 1e-12) << r << "," << k;
  }

  // image slot first: layer norm of f W + b
  p.at(p.layout().img.w).value << 1.0, 0.0, 2.0, -1.0, 0.5, 1.0, 0.0, 3.0;
  p.at(p.layout().img.b).value << 0.1, 0.2, 0.3, 0.4;
  in.image = std::vector<float>{2.0F, -1.0F};
  const MatD mi = embed_context(p, in);
  ASSERT_EQ(mi.rows(), 3);
  const double y[4] = {2.0 - 0.5 + 0.1, 0.0 - 1.0 + 0.2, 4.0 - 0.0 + 0.3, -2.0 - 3.0 + 0.4};
  const double mu = (y[0] + y[1] + y[2] + y[3]) / 4;
  double var = 0;
  for (double v : y) var += (v - mu) * (v - mu) / 4;
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(mi(0, k), (y[k] - mu) / std::sqrt(var + 1e-5), 1e-9);
  EXPECT_EQ(mi.bottomRows(2), m);

  in.image = std::vector<float>{0.0F, 0.0F};
  const MatD z = embed_context(p, in);
  const auto bias = p.at(p.layout().img.b).value;
  const double bm = bias.mean();
  const double bv = (bias.array() - bm).square().mean();
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(z(0, k), (bias(0, k) - bm) / std::sqrt(bv + 1e-5), 1e-9);

  in.image = std::vector<float>{1.0F};
  EXPECT_THROW(embed_context(p, in), ArgumentError);
  EXPECT_THROW(embed_context(p, ModelInput{}), ArgumentError);
}

TEST(DynamicConv, HandComputedSingleHead) {
  ModelConfig c = tiny();
  c.d_model = 4;
  c.n_heads = 1;
  c.conv_kernel = 2;
  c.n_layers = 1;
  Params<double> p(c);
  p.init(2);
  const auto& l = p.layout().dec[0];
  p.at(l.dc_kernel.w).value << 1.0, 0.0, 0.0, 1.0, 0.5, 0.5, -1.0, 0.0;
  p.at(l.dc_kernel.b).value << 0.0, 0.2;
  p.at(l.dc_out.w).value = MatD::Identity(4, 4);
  p.at(l.dc_out.b).value.setZero();
  MatD x(2, 4);
  x << 1.0, 2.0, 0.0, -1.0, 0.5, -0.5, 1.0, 2.0;
  const MatD y = dynamic_conv_layer(p, 0, x);
  // t = 0: logits (1 + 0 + 0 + 1, 0 + 2 + 0 + 0.2) = (2, 2.2)
  const double w00 = std::exp(2.0) / (std::exp(2.0) + std::exp(2.2));
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(y(0, k), w00 * x(0, k), 1e-12);
  // t = 1: logits (0.5 + 0 + 0.5 - 2, 0 - 0.5 + 0.5 + 0.2) = (-1, 0.2)
  const double w10 = std::exp(-1.0) / (std::exp(-1.0) + std::exp(0.2));
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(y(1, k), w10 * x(1, k) + (1 - w10) * x(0, k), 1e-12);
}

TEST(DynamicConv, KernelOneIsProjectedIdentity) {
  ModelConfig c = tiny();
  c.conv_kernel = 1;
  Params<double> p(c);
  p.init(3);
  const MatD x = random_mat(5, 8, 30);
  const auto& l = p.layout().dec[1];
  MatD expect = x * p.at(l.dc_out.w).value;
  expect.rowwise() += p.at(l.dc_out.b).value.row(0);
  EXPECT_LT((dynamic_conv_layer(p, 1, x) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

// Independent step-by-step forward of a one-layer decoder_prefix model with
// a dynamic_conv block, written against the parameter names only.
MatD manual_forward(const Params<double>& p, const ModelInput& in, const std::vector<TokenId>& prefix) {
  const auto& c = p.config();
  const int d = c.d_model, H = c.n_heads, K = c.conv_kernel, dh = d / H;
  auto P = [&](const std::string& n) -> const MatD& { return p.at(p.index(n)).value; };
  auto pe = [&](int pos) {
    MatD r(1, d);
    for (int i = 0; i < d; i += 2) {
      r(0, i) = std::sin(pos * std::pow(10000.0, -double(i) / d));
      r(0, i + 1) = std::cos(pos * std::pow(10000.0, -double(i) / d));
    }
    return r;
  };
  auto norm = [&](MatD x, const std::string& n) {
    for (int r = 0; r < x.rows(); ++r) {
      double mu = 0, var = 0;
      for (int k = 0; k < d; ++k) mu += x(r, k) / d;
      for (int k = 0; k < d; ++k) var += (x(r, k) - mu) * (x(r, k) - mu) / d;
      for (int k = 0; k < d; ++k) x(r, k) = (x(r, k) - mu) / std::sqrt(var + 1e-5) * P(n + ".g")(0, k) + P(n + ".b")(0, k);
    }
    return x;
  };
  auto lin = [&](const MatD& x, const std::string& n) {
    MatD y = x * P(n + ".w");
    for (int r = 0; r < y.rows(); ++r) y.row(r) += P(n + ".b");
    return y;
  };
  std::vector<MatD> mem_rows;
  MatD f(1, c.d_img);
  for (int i = 0; i < c.d_img; ++i) f(0, i) = (*in.image)[i];
  mem_rows.push_back(norm(lin(f, "img"), "img_ln"));
  int pos = 0;
  for (auto id : in.description) mem_rows.push_back(P("tok_emb").row(id) * std::sqrt(double(d)) + pe(pos++));
  for (auto id : in.section) mem_rows.push_back(P("tok_emb").row(id) * std::sqrt(double(d)) + pe(pos++));
  MatD mem(mem_rows.size(), d);
  for (std::size_t r = 0; r < mem_rows.size(); ++r) mem.row(r) = mem_rows[r];

  const int n = prefix.size();
  MatD h(n, d);
  for (int t = 0; t < n; ++t) h.row(t) = P("tok_emb").row(prefix[t]) * std::sqrt(double(d)) + pe(t);
  const MatD u = norm(h, "dec0.ln1");
  const MatD lg = lin(u, "dec0.dc_kernel");
  MatD conv = MatD::Zero(n, d);
  for (int t = 0; t < n; ++t) {
    for (int hh = 0; hh < H; ++hh) {
      double z = 0;
      for (int j = 0; j < K; ++j) z += std::exp(lg(t, hh * K + j));
      for (int j = 0; j < K; ++j) {
        if (t - j < 0) continue;
        for (int k = 0; k < dh; ++k) conv(t, hh * dh + k) += std::exp(lg(t, hh * K + j)) / z * u(t - j, hh * dh + k);
      }
    }
  }
  h += lin(conv, "dec0.dc_out");
  const MatD q = lin(norm(h, "dec0.ln2"), "dec0.cross.q");
  const MatD kk = lin(mem, "dec0.cross.k");
  const MatD vv = lin(mem, "dec0.cross.v");
  MatD att(n, d);
  for (int t = 0; t < n; ++t) {
    for (int hh = 0; hh < H; ++hh) {
      std::vector<double> s(mem.rows());
      double z = 0;
      for (int m = 0; m < mem.rows(); ++m) {
        double dot = 0;
        for (int k = 0; k < dh; ++k) dot += q(t, hh * dh + k) * kk(m, hh * dh + k);
        s[m] = std::exp(dot / std::sqrt(double(dh)));
        z += s[m];
      }
      for (int k = 0; k < dh; ++k) {
        double acc = 0;
        for (int m = 0; m < mem.rows(); ++m) acc += s[m] / z * vv(m, hh * dh + k);
        att(t, hh * dh + k) = acc;
      }
    }
  }
  h += lin(att, "dec0.cross.o");
  h += lin(lin(norm(h, "dec0.ln3"), "dec0.ff1").cwiseMax(0.0), "dec0.ff2");
  const MatD z = norm(h, "final_ln");
  MatD logits = z * P("tok_emb").transpose();
  for (int r = 0; r < n; ++r) logits.row(r) += P("lm_bias");
  return logits;
}

TEST(Forward, MatchesStepByStepCalculation) {
  ModelConfig c = tiny();
  c.n_layers = 1;
  Params<double> p(c);
  p.init(4);
  for (auto& t : p.tensors()) {
    if (t.value.rows() == 1) t.value += 0.1 * random_mat(1, t.value.cols(), std::hash<std::string>{}(t.name));
  }
  const auto in = tiny_input();
  const std::vector<TokenId> prefix = {BpeVocab::kBos, 'x', 'y', BpeVocab::kMask, 'z'};
  const MatD got = forward_logits(p, in, prefix);
  ASSERT_EQ(got.rows(), 5);
  ASSERT_EQ(got.cols(), c.vocab_size);
  EXPECT_LT((got - manual_forward(p, in, prefix)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Forward, ShapeAndLengthLimit) {
  for (auto arch : {Arch::decoder_prefix, Arch::encoder_decoder}) {
    Params<float> p(tiny(arch));
    p.init(5);
    const auto logits = forward_logits(p, tiny_input(), {BpeVocab::kBos, 'q'});
    EXPECT_EQ(logits.rows(), 2);
    EXPECT_EQ(logits.cols(), tiny().vocab_size);
    EXPECT_THROW(forward_logits(p, tiny_input(), std::vector<TokenId>(17, 'a')), ArgumentError);
    EXPECT_THROW(forward_logits(p, tiny_input(), {}), ArgumentError);
  }
}

TEST(Forward, CausalTruncationIsBitIdentical) {
  for (auto arch : {Arch::decoder_prefix, Arch::encoder_decoder}) {
    for (auto block : {BlockKind::dynamic_conv, BlockKind::self_attn}) {
      Params<float> p(tiny(arch, block));
      p.init(6);
      const std::vector<TokenId> full = {BpeVocab::kBos, 'h', 'e', 'l', 'l', 'o', ' ', 'w'};
      const auto all = forward_logits(p, tiny_input(), full);
      for (std::size_t t = 1; t <= full.size(); ++t) {
        const auto part = forward_logits(p, tiny_input(), std::vector<TokenId>(full.begin(), full.begin() + t));
        ASSERT_TRUE((part.row(t - 1).array() == all.row(t - 1).array()).all()) << to_string(block) << " t=" << t;
      }
    }
  }
}

TEST(Forward, DuplicatedMemoryRowChangesAttention) {
  Params<double> p(tiny());
  p.init(7);
  auto in = tiny_input();
  const auto a = forward_logits(p, in, {BpeVocab::kBos, 'a'});
  in.description.push_back(in.description.back());
  in.description.back() = 'a';  // a second 'a' at a new position
  const auto b = forward_logits(p, in, {BpeVocab::kBos, 'a'});
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Forward, OutputProjectionIsTheEmbeddingTable) {
  Params<double> p(tiny());
  p.init(8);
  for (const auto& t : p.tensors()) EXPECT_FALSE(t.value.rows() == 8 && t.value.cols() == tiny().vocab_size) << t.name;
  const auto in = tiny_input();
  const std::vector<TokenId> prefix = {BpeVocab::kBos, 'a', 'b'};
  const auto before = forward_logits(p, in, prefix);
  const TokenId r = 'Q';  // appears nowhere in the input
  p.at(p.layout().tok_emb).value.row(r) *= 3.0;
  const auto after = forward_logits(p, in, prefix);
  for (Eigen::Index v = 0; v < before.cols(); ++v) {
    if (v == r) {
      EXPECT_NEAR((after.col(v) - p.at(p.layout().lm_bias).value(0, v) * MatD::Ones(3, 1)).norm(),
                  3.0 * (before.col(v) - p.at(p.layout().lm_bias).value(0, v) * MatD::Ones(3, 1)).norm(), 1e-9);
    } else {
      EXPECT_EQ(after.col(v), before.col(v));
    }
  }
}

TEST(Decode, IncrementalStateMatchesFullForward) {
  for (auto arch : {Arch::decoder_prefix, Arch::encoder_decoder}) {
    for (auto block : {BlockKind::dynamic_conv, BlockKind::self_attn}) {
      Params<double> p(tiny(arch, block));
      p.init(9);
      const std::vector<TokenId> toks = {BpeVocab::kBos, 'a', 'b', 'c', 'd', 'e'};
      const auto full = forward_logits(p, tiny_input(), toks);
      auto st = start_decoding(p, tiny_input());
      for (std::size_t t = 0; t < toks.size(); ++t) {
        const auto row = decode_step(p, st, toks[t]);
        EXPECT_LT((row.row(0) - full.row(t)).cwiseAbs().maxCoeff(), 1e-10);
      }
      EXPECT_EQ(st.t, 6);
    }
  }
}

TEST(Decode, BeamWidthOneIsGreedyAndMaxLenOne) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Params<float> p(tiny());
    p.init(seed);
    const auto in = tiny_input();
    const auto g = greedy_decode(p, in, 12);
    EXPECT_EQ(beam_decode(p, in, 1, 12, 0.7), g);
    const auto one = greedy_decode(p, in, 1);
    const auto logits = forward_logits(p, in, {BpeVocab::kBos});
    TokenId best = BpeVocab::kEos;
    for (TokenId v = 0; v < logits.cols(); ++v) {
      if ((v == BpeVocab::kEos || !BpeVocab::is_special(v)) && logits(0, v) > logits(0, best)) best = v;
    }
    EXPECT_EQ(one, best == BpeVocab::kEos ? std::vector<TokenId>{} : std::vector<TokenId>{best});
    EXPECT_LE(beam_decode(p, in, 4, 12, 0.7).size(), 12u);
  }
}

Example single_example() {
  Example ex;
  ex.input = tiny_input();
  const std::vector<TokenId> cap = {'s', 'u', 'n', ' ', 'o', 'n', ' ', 'a', 'b'};
  ex.dec_in = {BpeVocab::kBos};
  ex.dec_in.insert(ex.dec_in.end(), cap.begin(), cap.end());
  ex.dec_out = cap;
  ex.dec_out.push_back(BpeVocab::kEos);
  return ex;
}

TEST(Loss, InitialLossNearUniformEntropy) {
  ModelConfig c = tiny();
  c.d_model = 64;
  c.n_heads = 4;
  c.vocab_size = 1000;
  Params<float> p(c);
  p.init(10);
  const auto ex = single_example();
  const float loss = example_loss(p, ex, 1.0F / ex.dec_out.size(), false);
  EXPECT_NEAR(loss, std::log(1000.0), 0.05 * std::log(1000.0));
}

TEST(Loss, ArchStrategyPairing) {
  TrainingPair pair;
  pair.masked.input_ids = {'a', 'b'};
  pair.masked.target_ids = {'a', 'b'};
  pair.masked.strategy = MaskStrategy::MNEM_SENTINEL;
  EXPECT_THROW(make_example(tiny(Arch::decoder_prefix), pair, nullptr, Phase::pretrain), ArgumentError);
  pair.masked.strategy = MaskStrategy::MNEM_DECODER;
  EXPECT_THROW(make_example(tiny(Arch::encoder_decoder), pair, nullptr, Phase::pretrain), ArgumentError);
  EXPECT_NO_THROW(make_example(tiny(Arch::decoder_prefix), pair, nullptr, Phase::pretrain));
}

TEST(Loss, NoMaskedSpansIsPlainCaptioning) {
  BpeVocab v;
  const auto seq = encode(v, "a caption");
  TrainingPair pair;
  pair.context.description = {'x', 'y'};
  pair.masked = mask_mnem_decoder(seq, {}, 0.8, 1);
  const auto pre = make_example(tiny(), pair, nullptr, Phase::pretrain);
  pair.masked = clean_instance(seq);
  const auto fine = make_example(tiny(), pair, nullptr, Phase::finetune);
  EXPECT_EQ(pre.dec_in, fine.dec_in);
  EXPECT_EQ(pre.dec_out, fine.dec_out);
  Params<double> p(tiny());
  p.init(11);
  EXPECT_EQ(example_loss(p, pre, 1.0, false), example_loss(p, fine, 1.0, false));
}

TEST(Loss, SentinelTargetsForEncoderDecoder) {
  BpeVocab v;
  const auto seq = encode(v, "John in Zurich");
  const auto spans = align_to_tokens({{0, 4, EntityLabel::PERSON, "John"}}, seq);
  TrainingPair pair;
  pair.context.section = {'s'};
  pair.masked = mask_mnem_sentinel(seq, spans, 1.0, 0);
  const auto ex = make_example(tiny(Arch::encoder_decoder), pair, nullptr, Phase::pretrain);
  EXPECT_EQ(ex.input.encoder_caption, pair.masked.input_ids);
  EXPECT_EQ(ex.dec_out.front(), BpeVocab::sentinel(0));
  EXPECT_EQ(ex.dec_out.back(), BpeVocab::kEos);
  EXPECT_EQ(ex.dec_in.front(), BpeVocab::kBos);
}

TEST(GradCheck, AllVariantsAgreeWithFiniteDifferences) {
  for (auto arch : {Arch::decoder_prefix, Arch::encoder_decoder}) {
    for (auto block : {BlockKind::dynamic_conv, BlockKind::self_attn}) {
      const auto rep = grad_check(tiny(arch, block), 42);
      EXPECT_LT(rep.max_rel_error, 1e-3) << to_string(arch) << "/" << to_string(block) << " worst " << rep.worst;
      EXPECT_EQ(rep.tensors.size(), Params<double>(tiny(arch, block)).tensors().size());
    }
  }
}

TEST(Train, WarmupSchedule) {
  TrainConfig t;
  t.lr = 2e-3;
  const long total = 400;
  EXPECT_EQ(warmup_steps(t, total), 20);
  EXPECT_NEAR(lr_at(t, 0, total), 2e-3 / 20, 1e-15);
  EXPECT_NEAR(lr_at(t, 20, total), 2e-3, 2e-3 / 20);
  EXPECT_DOUBLE_EQ(lr_at(t, 19, total), 2e-3);
  EXPECT_DOUBLE_EQ(lr_at(t, 399, total), 2e-3);
  EXPECT_EQ(warmup_steps(t, 10), 1);
}

TEST(Train, ZeroLearningRateLeavesParams) {
  Params<float> p(tiny());
  p.init(12);
  const auto before = p.tensors();
  TrainConfig t;
  t.lr = 0.0;
  t.epochs = 2;
  t.batch_size = 1;
  train(p, t, 3, [](std::size_t, int) { return single_example(); });
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(p.tensors()[i].value, before[i].value) << before[i].name;
}

TEST(Train, OverfitsOnePairAndGeneratesIt) {
  ModelConfig c = tiny();
  c.d_model = 32;
  c.n_heads = 4;
  Params<float> p(c);
  p.init(13);
  TrainConfig t;
  t.lr = 1e-2;
  t.epochs = 200;
  t.batch_size = 1;
  const auto ex = single_example();
  const auto res = train(p, t, 1, [&](std::size_t, int) { return ex; });
  ASSERT_EQ(res.steps, 200);
  EXPECT_LT(res.step_loss.back(), 0.1);
  const std::vector<TokenId> cap(ex.dec_out.begin(), ex.dec_out.end() - 1);
  EXPECT_EQ(greedy_decode(p, ex.input, 20), cap);
  EXPECT_EQ(beam_decode(p, ex.input, 3, 20, 0.7), cap);
}

std::vector<Example> ten_examples() {
  std::vector<Example> out;
  const char* caps[] = {"red boat", "blue tram", "old bridge", "new station", "green park",
                        "tall tower", "quiet lake", "busy market", "dark forest", "white church"};
  for (int i = 0; i < 10; ++i) {
    Example ex;
    ex.input.description = {static_cast<TokenId>('a' + i), 'x'};
    ex.input.image = std::vector<float>(4, static_cast<float>(i) / 10.0F);
    const std::string s = caps[i];
    ex.dec_in = {BpeVocab::kBos};
    for (char ch : s) {
      ex.dec_in.push_back(static_cast<unsigned char>(ch));
      ex.dec_out.push_back(static_cast<unsigned char>(ch));
    }
    ex.dec_out.push_back(BpeVocab::kEos);
    out.push_back(ex);
  }
  return out;
}

TEST(Train, SmoothedLossDecreasesOnTenSamples) {
  ModelConfig c = tiny();
  c.d_model = 32;
  c.n_heads = 4;
  Params<float> p(c);
  p.init(14);
  TrainConfig t;
  t.batch_size = 2;
  t.epochs = 10;
  const auto data = ten_examples();
  const auto res = train(p, t, data.size(), [&](std::size_t i, int) { return data[i]; });
  ASSERT_EQ(res.steps, 50);
  std::vector<double> window;
  for (int w = 0; w < 5; ++w) {
    double s = 0;
    for (int k = 0; k < 10; ++k) s += res.step_loss[w * 10 + k];
    window.push_back(s / 10);
  }
  for (int w = 1; w < 5; ++w) EXPECT_LT(window[w], window[w - 1]) << w;
}

TEST(Train, DeterministicCheckpointsAndRoundtrip) {
  const auto dir = testing::scratch_dir("ckpt");
  std::string bytes[2];
  for (int run = 0; run < 2; ++run) {
    Params<float> p(tiny());
    p.init(15);
    TrainConfig t;
    t.epochs = 2;
    t.batch_size = 3;
    t.seed = 5;
    t.checkpoint_dir = dir / std::to_string(run);
    const auto data = ten_examples();
    train(p, t, data.size(), [&](std::size_t i, int) { return data[i]; });
    bytes[run] = read_file(dir / std::to_string(run) / "epoch2.ckpt");
    const auto back = load_checkpoint(dir / std::to_string(run) / "epoch2.ckpt");
    EXPECT_EQ(back.config(), p.config());
    for (std::size_t i = 0; i < back.tensors().size(); ++i) EXPECT_EQ(back.tensors()[i].value, p.tensors()[i].value);
  }
  EXPECT_EQ(bytes[0], bytes[1]);
  write_file(dir / "bad.ckpt", bytes[0].substr(0, 50));
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), FormatError);
}

TEST(Train, NonFiniteLossAborts) {
  const auto dir = testing::scratch_dir("nan");
  Params<float> p(tiny());
  p.init(16);
  p.at(p.layout().lm_bias).value(0, 'a') = std::numeric_limits<float>::quiet_NaN();
  TrainConfig t;
  t.checkpoint_dir = dir;
  EXPECT_THROW(train(p, t, 1, [](std::size_t, int) { return single_example(); }), DivergenceError);
  EXPECT_TRUE(std::filesystem::exists(dir / "diverged.ckpt"));
}

}  // namespace
}  // namespace mnem

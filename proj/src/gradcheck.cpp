#include "mnem/gradcheck.hpp"

#include <cmath>

#include "mnem/rng.hpp"

namespace mnem {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

std::vector<TokenId> random_tokens(CounterRng& rng, int n, int vocab) {
  std::vector<TokenId> out;
  for (int i = 0; i < n; ++i) {
    // mostly learned/byte tokens, the odd MASK
    out.push_back(rng.unit() < 0.15 ? BpeVocab::kMask : static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab))));
  }
  return out;
}

}  // namespace

GradCheckReport grad_check(const ModelConfig& cfg, std::uint64_t seed, int coords, double step) {
  Params<double> p(cfg);
  p.init(seed);
  // Move gains and biases off their trivial init so every path is exercised.
  CounterRng rng(derive_seed(seed, "gradcheck"));
  for (auto& t : p.tensors()) {
    if (t.value.rows() == 1) {
      for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] += 0.1 * rng.normal();
    }
  }
  Example ex;
  ex.input.description = random_tokens(rng, 5, cfg.vocab_size);
  ex.input.section = random_tokens(rng, 4, cfg.vocab_size);
  ex.input.image = std::vector<float>(static_cast<std::size_t>(cfg.d_img));
  for (auto& v : *ex.input.image) v = static_cast<float>(rng.normal());
  if (cfg.arch == Arch::encoder_decoder) ex.input.encoder_caption = random_tokens(rng, 4, cfg.vocab_size);
  const int n = std::min(6, cfg.max_len);
  ex.dec_in = random_tokens(rng, n, cfg.vocab_size);
  ex.dec_in[0] = BpeVocab::kBos;
  ex.dec_out = random_tokens(rng, n, cfg.vocab_size);
  const double w = 1.0 / n;

  p.zero_grad();
  example_loss(p, ex, w, true);
  GradCheckReport rep;
  for (auto& t : p.tensors()) {
    TensorCheck tc{t.name, 0.0};
    for (int c = 0; c < coords; ++c) {
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(t.value.size())));
      double& x = t.value.data()[i];
      const double orig = x;
      x = orig + step;
      const double up = example_loss(p, ex, w, false);
      x = orig - step;
      const double down = example_loss(p, ex, w, false);
      x = orig;
      const double numeric = (up - down) / (2 * step);
      tc.max_rel_error = std::max(tc.max_rel_error, relative_error(t.grad.data()[i], numeric));
    }
    if (tc.max_rel_error >= rep.max_rel_error) {
      rep.max_rel_error = tc.max_rel_error;
      rep.worst = tc.name;
    }
    rep.tensors.push_back(tc);
  }
  return rep;
}

nlohmann::json grad_check_to_json(const GradCheckReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& t : r.tensors) per[t.name] = t.max_rel_error;
  return {{"max_rel_error", r.max_rel_error}, {"worst_tensor", r.worst}, {"tensors", per}};
}

}  // namespace mnem

#include "mnem/train.hpp"

#include <cmath>
#include <numeric>

#include "mnem/error.hpp"
#include "mnem/io.hpp"
#include "mnem/rng.hpp"

namespace mnem {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ArgumentError("learning rate must be >= 0");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ArgumentError("warmup fraction must lie in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ArgumentError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ArgumentError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight decay must be >= 0");
  if (batch_size < 1) throw ArgumentError("batch size must be >= 1");
  if (epochs < 0) throw ArgumentError("epochs must be >= 0");
}

json TrainConfig::to_json() const {
  return json{{"lr", lr},
              {"beta1", beta1},
              {"beta2", beta2},
              {"eps", eps},
              {"weight_decay", weight_decay},
              {"warmup_fraction", warmup_fraction},
              {"clip_norm", clip_norm},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"seed", seed}};
}

long warmup_steps(const TrainConfig& cfg, long total_steps) {
  return std::max(1L, static_cast<long>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps))));
}

double lr_at(const TrainConfig& cfg, long step, long total_steps) {
  const long w = warmup_steps(cfg, total_steps);
  return cfg.lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(w));
}

AdamW::AdamW(const Params<float>& params, const TrainConfig& cfg) : cfg_(cfg) {
  for (const auto& t : params.tensors()) {
    m_.push_back(Mat<float>::Zero(t.value.rows(), t.value.cols()));
    v_.push_back(Mat<float>::Zero(t.value.rows(), t.value.cols()));
  }
}

void AdamW::step(Params<float>& params, double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const float step_size = static_cast<float>(lr / c1);
  const float decay = static_cast<float>(lr * cfg_.weight_decay);
  for (std::size_t i = 0; i < params.tensors().size(); ++i) {
    auto& t = params.tensors()[i];
    auto& m = m_[i];
    auto& v = v_[i];
    m = static_cast<float>(b1) * m + static_cast<float>(1.0 - b1) * t.grad;
    v = static_cast<float>(b2) * v + static_cast<float>(1.0 - b2) * t.grad.cwiseProduct(t.grad);
    if (t.value.rows() > 1 && decay > 0.0F) t.value -= decay * t.value;
    const auto denom = (v.array() / static_cast<float>(c2)).sqrt() + static_cast<float>(cfg_.eps);
    t.value.array() -= step_size * m.array() / denom;
  }
}

double grad_norm(const Params<float>& params) {
  double s = 0.0;
  for (const auto& t : params.tensors()) s += t.grad.cast<double>().squaredNorm();
  return std::sqrt(s);
}

TrainResult train(Params<float>& params, const TrainConfig& cfg, std::size_t n_examples, const ExampleSource& source) {
  cfg.validate();
  TrainResult res;
  if (n_examples == 0 || cfg.epochs == 0) return res;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const long per_epoch = static_cast<long>((n_examples + bs - 1) / bs);
  const long total = per_epoch * cfg.epochs;
  AdamW opt(params, cfg);
  std::vector<std::size_t> order(n_examples);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
    CounterRng shuffle(epoch_seed);
    for (std::size_t i = n_examples; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double epoch_sum = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < n_examples; b += bs) {
      const std::size_t e = std::min(n_examples, b + bs);
      std::vector<Example> batch;
      std::size_t tokens = 0;
      for (std::size_t i = b; i < e; ++i) {
        batch.push_back(source(order[i], epoch));
        tokens += batch.back().dec_out.size();
      }
      params.zero_grad();
      double loss = 0.0;
      const float weight = 1.0F / static_cast<float>(std::max<std::size_t>(1, tokens));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        loss += example_loss(params, batch[i], weight, true, derive_seed(epoch_seed, static_cast<std::uint64_t>(order[b + i])));
      }
      if (!std::isfinite(loss)) {
        const auto dir = cfg.checkpoint_dir.empty() ? std::filesystem::current_path() : cfg.checkpoint_dir;
        save_checkpoint(params, dir / "diverged.ckpt");
        throw DivergenceError("non-finite loss at step " + std::to_string(res.steps) + "; parameters saved to " +
                              (dir / "diverged.ckpt").string());
      }
      if (cfg.clip_norm > 0.0) {
        const double norm = grad_norm(params);
        if (norm > cfg.clip_norm) {
          const float s = static_cast<float>(cfg.clip_norm / norm);
          for (auto& t : params.tensors()) t.grad *= s;
        }
      }
      opt.step(params, lr_at(cfg, res.steps, total));
      ++res.steps;
      res.step_loss.push_back(loss);
      epoch_sum += loss * static_cast<double>(tokens);
      epoch_tokens += tokens;
    }
    res.epoch_loss.push_back(epoch_sum / static_cast<double>(std::max<std::size_t>(1, epoch_tokens)));
    if (!cfg.checkpoint_dir.empty()) {
      save_checkpoint(params, cfg.checkpoint_dir / (cfg.checkpoint_prefix + std::to_string(epoch + 1) + ".ckpt"));
    }
  }
  params.zero_grad();
  return res;
}

void save_checkpoint(const Params<float>& params, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw("MNEM");
  w.u32(1);
  const std::string cfg = params.config().to_json().dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.raw(cfg);
  w.u32(static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) w.f32(t.value.data()[i]);
  }
  write_file(path, w.str());
}

Params<float> load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  ByteReader r(data);
  const std::string where = path.string() + ": ";
  if (r.bytes(4) != "MNEM") throw FormatError(where + "not a checkpoint");
  if (r.u32() != 1) throw FormatError(where + "unsupported checkpoint version");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(json::parse(r.bytes(r.u32())));
  } catch (const json::exception& e) {
    throw FormatError(where + "bad config block: " + e.what());
  }
  Params<float> p(cfg);
  const std::uint32_t n = r.u32();
  if (n != p.tensors().size()) throw FormatError(where + "tensor count does not match the config");
  for (auto& t : p.tensors()) {
    const std::string name = r.bytes(r.u16());
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (name != t.name || rows != t.value.rows() || cols != t.value.cols()) {
      throw FormatError(where + "unexpected tensor " + name);
    }
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = r.f32();
  }
  if (!r.at_end()) throw FormatError(where + "trailing bytes");
  return p;
}

}  // namespace mnem

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnem/model.hpp"

namespace mnem {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_fraction = 0.05;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
  int batch_size = 16;
  int epochs = 1;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty: no per-epoch checkpoints
  std::string checkpoint_prefix = "epoch";

  void validate() const;
  nlohmann::json to_json() const;
};

// Warmup steps = max(1, floor(warmup_fraction * total_steps)).
long warmup_steps(const TrainConfig& cfg, long total_steps);
// Rate for 0-based step: peak * min(1, (step + 1) / warmup), then constant.
double lr_at(const TrainConfig& cfg, long step, long total_steps);

// Decoupled weight decay on matrices with more than one row (weights and the
// embedding table); biases and layer-norm gains are not decayed.
class AdamW {
 public:
  AdamW(const Params<float>& params, const TrainConfig& cfg);
  void step(Params<float>& params, double lr);
  long steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<Mat<float>> m_, v_;
  long t_ = 0;
};

// Global L2 norm of all gradients.
double grad_norm(const Params<float>& params);

struct TrainResult {
  std::vector<double> step_loss;   // mean token loss per step
  std::vector<double> epoch_loss;  // mean token loss per epoch
  long steps = 0;
};

// Example i of epoch e. Pretraining draws fresh masks per epoch through this.
using ExampleSource = std::function<Example(std::size_t index, int epoch)>;

// Shuffles each epoch with a seed derived from cfg.seed, averages token
// losses per batch, clips, and steps AdamW. A non-finite loss writes
// <checkpoint_dir or cwd>/diverged.ckpt and throws DivergenceError.
TrainResult train(Params<float>& params, const TrainConfig& cfg, std::size_t n_examples, const ExampleSource& source);

// "MNEM", u32 version, u32 config-json length, config json, u32 tensor
// count, then per tensor u16 name length, name, u32 rows, u32 cols, f32 data.
void save_checkpoint(const Params<float>& params, const std::filesystem::path& path);
Params<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace mnem

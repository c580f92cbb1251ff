#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnem/mask.hpp"
#include "mnem/metrics.hpp"
#include "mnem/model.hpp"
#include "mnem/split.hpp"
#include "mnem/synth.hpp"
#include "mnem/train.hpp"

namespace mnem {

// One pretraining strategy of the A/B grid. "none" skips pretraining.
enum class PretrainStrategy { none, mlm, full, mnem };

std::string_view to_string(PretrainStrategy s);
PretrainStrategy parse_pretrain_strategy(std::string_view s);

struct ExperimentConfig {
  SynthConfig synth = SynthConfig::defaults();
  std::size_t n_test = 500;  // the rest of the synthetic corpus trains
  std::size_t vocab_size = 600;
  ModelConfig model;  // vocab_size and d_img are filled in
  std::vector<PretrainStrategy> strategies = {PretrainStrategy::none, PretrainStrategy::mlm, PretrainStrategy::full,
                                              PretrainStrategy::mnem};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  bool image_ablation = true;  // also run mnem without the image slot
  int pretrain_epochs = 8;
  int finetune_epochs = 4;
  double lr = 2e-3;
  int batch_size = 16;
  MaskParams mask;
  bool resample_masks = true;  // fresh corruptions every pretraining epoch
  DomainMode domain = DomainMode::wiki;
  ContextMode split_context = ContextMode::description;
  int beam_width = 1;
  int max_gen_len = 40;
  unsigned threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct RunResult {
  PretrainStrategy strategy = PretrainStrategy::none;
  std::uint64_t seed = 0;
  bool use_image = true;
  std::optional<EvaluationReport> eval;
  std::map<std::string, std::string> generated;  // test sample id -> caption
  std::vector<double> pretrain_epoch_loss;
  std::vector<double> finetune_epoch_loss;
  std::string error;  // non-empty when the run failed
  double seconds = 0.0;
};

// Medians over the seeds of one (strategy, image) group.
struct GroupSummary {
  PretrainStrategy strategy = PretrainStrategy::none;
  bool use_image = true;
  std::size_t completed = 0;
  MetricReport overall;
  MetricReport easy;
  MetricReport hard;
};

struct ExperimentReport {
  std::vector<RunResult> runs;
  std::vector<GroupSummary> groups;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t vocab_size = 0;
  double seconds = 0.0;

  const GroupSummary* group(PretrainStrategy s, bool use_image) const;
  bool complete() const;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Called after each finished run (from worker threads, serialized).
using ProgressFn = std::function<void(const RunResult&)>;

// Synthesizes the corpus, trains a shared BPE vocab on the training part, then
// for every strategy and seed: pretrain (unless none), finetune, greedy
// generate on the test part, evaluate with the Easy/Hard breakdown. Runs are
// spread over `threads` workers; results do not depend on the worker count.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

double median(std::vector<double> v);

}  // namespace mnem

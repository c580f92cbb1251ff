#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnem/model.hpp"

namespace mnem {

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;
  std::vector<TensorCheck> tensors;
};

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps roundoff on
// near-zero coordinates from dominating.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Double-precision check of example_loss on a random example: central
// differences with `step` at `coords` random coordinates of every tensor.
GradCheckReport grad_check(const ModelConfig& cfg, std::uint64_t seed, int coords = 10, double step = 1e-5);

nlohmann::json grad_check_to_json(const GradCheckReport& r);

}  // namespace mnem

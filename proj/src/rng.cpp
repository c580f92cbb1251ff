#include "mnem/rng.hpp"

#include <cmath>
#include <numbers>

namespace mnem {

double CounterRng::normal() {
  double u1 = unit();
  const double u2 = unit();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mnem

#pragma once

#include <cmath>
#include <random>

#include "vmloc/tensor.hpp"

namespace vmloc {

// Glorot-style normal init: N(0, gain^2 * 2 / (fan_in + fan_out)).
template <class Rng>
Tensor glorot_normal(std::size_t rows, std::size_t cols, Rng& rng, double gain = 1.0) {
  std::normal_distribution<double> n(0.0, gain * std::sqrt(2.0 / static_cast<double>(rows + cols)));
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = n(rng);
  return t;
}

}  // namespace vmloc

#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "gdmsr/tensor.hpp"

namespace gdmsr::num {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moments are keyed by parameter identity; the step
// counter is shared across the parameter group.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Applies one update from Parameter::grad. Throws on non-finite gradients.
  void step(std::span<Parameter* const> params);

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::unordered_map<const Parameter*, Moments> state_;
  int64_t t_ = 0;
};

}  // namespace gdmsr::num

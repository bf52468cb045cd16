// Adam with linear warmup followed by inverse-square-root decay.
#pragma once

#include <cstddef>
#include <vector>

#include "casr/checkpoint.hpp"
#include "casr/parameters.hpp"

namespace casr {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup_steps = 200;
};

// Rate for 1-based step t: lr * min(t / warmup, sqrt(warmup / t)).
double scheduled_learning_rate(const AdamOptions& options, std::size_t step);

class Adam {
 public:
  Adam(std::vector<Parameter> params, AdamOptions options);

  // Applies one update from the accumulated gradients, then clears them.
  void step();
  std::size_t steps() const { return step_; }
  const std::vector<Parameter>& params() const { return params_; }

  // Moments are stored as "optim.m.<name>" / "optim.v.<name>".
  void export_state(Checkpoint& ckpt) const;
  void import_state(const Checkpoint& ckpt, std::size_t step);

 private:
  std::vector<Parameter> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

}  // namespace casr

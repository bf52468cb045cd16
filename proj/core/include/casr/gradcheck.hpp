// Central-difference gradient verification.
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "casr/tensor.hpp"

namespace casr {

struct GradCheckOptions {
  double step = 1e-5;
  // Caps the number of probed coordinates per tensor; 0 probes all of them.
  // Probed coordinates are spread evenly over the tensor.
  std::size_t max_coords_per_tensor = 0;
  // Lower bound on the relative-error denominator, per unit of |loss|. A few
  // rounding steps of the loss divided by 2h reach ~1e-10 at h = 1e-5, so
  // components that are exactly zero are compared on an absolute scale.
  double denominator_floor = 1e-5;
};

// Largest relative error |analytic - numeric| /
// max(|analytic|, |numeric|, floor * max(1, |loss|))
// over the probed coordinates of every tensor in `wrt`. `loss` must return a
// scalar and be deterministic; a mismatch between two evaluations at the same
// point raises DeterminismError.
double grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> wrt,
                  const GradCheckOptions& options = {});

// Single-input convenience form: f is evaluated at x with x requiring grad.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

}  // namespace casr

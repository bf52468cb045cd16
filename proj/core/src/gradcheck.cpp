#include "casr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "casr/errors.hpp"

namespace casr {

double grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> wrt,
                  const GradCheckOptions& options) {
  std::vector<bool> saved_flags;
  for (auto& t : wrt) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor root = loss();
  if (root.numel() != 1) throw UsageError("grad_check: loss must be scalar");
  const double base = root.item();
  backward(root);

  std::vector<std::vector<double>> analytic;
  for (const auto& t : wrt) analytic.push_back(t.grad());

  NoGradGuard no_grad;
  const double again = loss().item();
  if (std::memcmp(&again, &base, sizeof(double)) != 0) {
    throw DeterminismError(
        "grad_check: repeated evaluation differs; seed any randomness in f");
  }

  const double h = options.step;
  const double floor = options.denominator_floor * std::max(1.0, std::fabs(base));
  double worst = 0.0;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto values = wrt[ti].mutable_data();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (options.max_coords_per_tensor > 0 && n > options.max_coords_per_tensor) {
      stride = (n + options.max_coords_per_tensor - 1) /
               options.max_coords_per_tensor;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = values[i];
      values[i] = original + h;
      const double up = loss().item();
      values[i] = original - h;
      const double down = loss().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[ti][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric),
                                    floor});
      const double err = std::fabs(a - numeric) / denom;
      if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
      worst = std::max(worst, err);
    }
  }
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    wrt[ti].set_requires_grad(saved_flags[ti]);
    wrt[ti].zero_grad();
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step) {
  GradCheckOptions options;
  options.step = step;
  return grad_check([&] { return f(x); }, {x}, options);
}

}  // namespace casr

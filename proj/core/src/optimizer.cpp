#include "casr/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "casr/errors.hpp"

namespace casr {

double scheduled_learning_rate(const AdamOptions& options, std::size_t step) {
  const double t = static_cast<double>(std::max<std::size_t>(step, 1));
  if (options.warmup_steps == 0) return options.learning_rate;
  const double w = static_cast<double>(options.warmup_steps);
  return options.learning_rate * std::min(t / w, std::sqrt(w / t));
}

Adam::Adam(std::vector<Parameter> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++step_;
  const double lr = scheduled_learning_rate(options_, step_);
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    if (!t.has_grad()) continue;
    auto g = t.mutable_grad();
    auto x = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      x[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
    }
    t.zero_grad();
  }
}

void Adam::export_state(Checkpoint& ckpt) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Shape& s = params_[i].tensor.shape();
    ckpt.tensors.emplace_back("optim.m." + params_[i].name, Tensor(s, m_[i]));
    ckpt.tensors.emplace_back("optim.v." + params_[i].name, Tensor(s, v_[i]));
  }
}

void Adam::import_state(const Checkpoint& ckpt, std::size_t step) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = params_[i].name;
    const Tensor& m = ckpt.get("optim.m." + name);
    const Tensor& v = ckpt.get("optim.v." + name);
    if (m.numel() != m_[i].size() || v.numel() != v_[i].size()) {
      throw FormatError("optimizer state for '" + name + "' has the wrong size");
    }
    std::copy(m.data().begin(), m.data().end(), m_[i].begin());
    std::copy(v.data().begin(), v.data().end(), v_[i].begin());
  }
  step_ = step;
}

}  // namespace casr

#include "casr/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "casr/errors.hpp"
#include "casr/ops.hpp"

namespace casr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0 || kl_weight < 0 || kl_weight > 1) {
    throw ConfigError("loss weights must be nonnegative and kl_weight in [0,1]");
  }
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const TokenId> targets,
                          TokenId pad_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + shape_to_string(logits.shape()) +
                     " vs " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t u = logits.dim(0), v = logits.dim(1);
  std::size_t count = 0;
  for (TokenId t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw VocabularyError("cross_entropy: target " + std::to_string(t) +
                            " outside vocabulary of " + std::to_string(v));
    }
    ++count;
  }
  if (count == 0) throw EmptyInputError("cross_entropy: every target is padding");

  const auto x = logits.data();
  auto probs = std::make_shared<std::vector<double>>(u * v);
  double total = 0.0;
  for (std::size_t r = 0; r < u; ++r) {
    const double* row = x.data() + r * v;
    double mx = kNegInf;
    for (std::size_t j = 0; j < v; ++j) {
      if (std::isnan(row[j])) throw NumericError("cross_entropy: NaN logit");
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[r * v + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] /= z;
    if (targets[r] != pad_id) {
      total -= row[targets[r]] - mx - std::log(z);
    }
  }
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  const double inv = 1.0 / static_cast<double>(count);
  return make_result({1}, {total * inv}, {&logits},
                     [probs, tgt = std::move(tgt), pad_id, u, v,
                      inv](TensorNode& node) {
    auto& parent = *node.parents[0];
    if (!parent.requires_grad) return;
    auto& g = parent.ensure_grad();
    const double go = node.grad[0] * inv;
    for (std::size_t r = 0; r < u; ++r) {
      if (tgt[r] == pad_id) continue;
      for (std::size_t j = 0; j < v; ++j) g[r * v + j] += go * (*probs)[r * v + j];
      g[r * v + tgt[r]] -= go;
    }
  });
}

std::size_t ctc_min_frames(std::span<const TokenId> label) {
  std::size_t n = label.size();
  for (std::size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++n;
  return n;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const TokenId> label,
                TokenId blank_id) {
  if (log_probs.rank() != 2) throw ShapeError("ctc: log_probs must be [t, V]");
  const std::size_t t_len = log_probs.dim(0), v = log_probs.dim(1);
  if (t_len == 0) throw EmptyInputError("ctc: no frames");
  for (TokenId l : label) {
    if (l == blank_id || l < 0 || static_cast<std::size_t>(l) >= v) {
      throw VocabularyError("ctc: invalid label symbol " + std::to_string(l));
    }
  }
  const std::size_t need = ctc_min_frames(label);
  if (need > t_len) {
    throw InfeasibleError("ctc: label of length " + std::to_string(label.size()) +
                          " needs " + std::to_string(need) + " frames, got " +
                          std::to_string(t_len));
  }

  const std::size_t s_len = 2 * label.size() + 1;
  std::vector<TokenId> ext(s_len, blank_id);
  for (std::size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];
  auto can_skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank_id && ext[s] != ext[s - 2];
  };

  const auto y = log_probs.data();
  auto emit = [&](std::size_t t, std::size_t s) { return y[t * v + ext[s]]; };

  std::vector<double> alpha(t_len * s_len, kNegInf);
  alpha[0] = emit(0, 0);
  if (s_len > 1) alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = alpha[(t - 1) * s_len + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
      if (can_skip(s)) a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
      if (a != kNegInf) alpha[t * s_len + s] = a + emit(t, s);
    }
  }
  const std::size_t last = (t_len - 1) * s_len;
  double log_total = alpha[last + s_len - 1];
  if (s_len > 1) log_total = log_add(log_total, alpha[last + s_len - 2]);
  if (log_total == kNegInf) {
    throw InfeasibleError("ctc: label has zero probability under log_probs");
  }

  std::vector<double> beta(t_len * s_len, kNegInf);
  beta[last + s_len - 1] = emit(t_len - 1, s_len - 1);
  if (s_len > 1) beta[last + s_len - 2] = emit(t_len - 1, s_len - 2);
  for (std::size_t t = t_len - 1; t-- > 0;) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double b = beta[(t + 1) * s_len + s];
      if (s + 1 < s_len) b = log_add(b, beta[(t + 1) * s_len + s + 1]);
      if (s + 2 < s_len && can_skip(s + 2)) {
        b = log_add(b, beta[(t + 1) * s_len + s + 2]);
      }
      if (b != kNegInf) beta[t * s_len + s] = b + emit(t, s);
    }
  }

  // Occupancy gradient: dL/dy[t][v] = -sum_{s: ext[s]=v} exp(a + b - y - logP).
  auto grad = std::make_shared<std::vector<double>>(t_len * v, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      const double ab = alpha[t * s_len + s] + beta[t * s_len + s];
      if (ab == kNegInf) continue;
      (*grad)[t * v + ext[s]] -= std::exp(ab - emit(t, s) - log_total);
    }
  }
  return make_result({1}, {-log_total}, {&log_probs}, [grad](TensorNode& node) {
    auto& parent = *node.parents[0];
    if (!parent.requires_grad) return;
    auto& g = parent.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[0] * (*grad)[i];
  });
}

Tensor masked_l1_loss(const Tensor& pred, const Tensor& target,
                      const std::vector<bool>& mask) {
  if (pred.shape() != target.shape() || pred.rank() != 2) {
    throw ShapeError("masked_l1: prediction " + shape_to_string(pred.shape()) +
                     " vs target " + shape_to_string(target.shape()));
  }
  const std::size_t t = pred.dim(0), d = pred.dim(1);
  if (mask.size() != t) throw ShapeError("masked_l1: mask length mismatch");
  const std::size_t rows = static_cast<std::size_t>(
      std::count(mask.begin(), mask.end(), true));
  if (rows == 0) throw EmptyInputError("masked_l1: empty mask");
  const auto p = pred.data(), q = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    for (std::size_t c = 0; c < d; ++c) total += std::fabs(p[i * d + c] - q[i * d + c]);
  }
  const double inv = 1.0 / static_cast<double>(rows * d);
  return make_result({1}, {total * inv}, {&pred, &target},
                     [mask, t, d, inv](TensorNode& node) {
    const auto& p = node.parents[0]->data;
    const auto& q = node.parents[1]->data;
    double* gp = node.parents[0]->requires_grad
                     ? node.parents[0]->ensure_grad().data() : nullptr;
    double* gq = node.parents[1]->requires_grad
                     ? node.parents[1]->ensure_grad().data() : nullptr;
    const double go = node.grad[0] * inv;
    for (std::size_t i = 0; i < t; ++i) {
      if (!mask[i]) continue;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = p[i * d + c] - q[i * d + c];
        const double sg = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        if (gp) gp[i * d + c] += go * sg;
        if (gq) gq[i * d + c] -= go * sg;
      }
    }
  });
}

Tensor gaussian_kl(const LatentGaussian& q, const LatentGaussian& p) {
  if (q.mu.shape() != p.mu.shape() || q.sigma.shape() != p.sigma.shape() ||
      q.mu.shape() != q.sigma.shape()) {
    throw ShapeError("gaussian_kl: distribution shapes differ");
  }
  for (const Tensor* s : {&q.sigma, &p.sigma}) {
    for (double v : s->data()) {
      if (!(v > 0)) throw NumericError("gaussian_kl: sigma must be positive");
    }
  }
  const Tensor log_ratio = sub(log(p.sigma), log(q.sigma));
  const Tensor spread = add(square(q.sigma), square(sub(q.mu, p.mu)));
  const Tensor term = div(spread, scale(square(p.sigma), 2.0));
  return sum(add_scalar(add(log_ratio, term), -0.5));
}

Tensor extractor_loss(const Tensor& ctc, const Tensor& speech_l1,
                      const Tensor& text_l1, const LossWeights& w) {
  return add(add(scale(ctc, w.alpha), scale(speech_l1, w.beta)),
             scale(text_l1, w.gamma));
}

Tensor final_loss(const Tensor& ce, const Tensor& kl_role,
                  const Tensor& kl_topical, const LossWeights& w) {
  Tensor kl;
  if (kl_role.defined()) kl = kl_role;
  if (kl_topical.defined()) kl = kl.defined() ? add(kl, kl_topical) : kl_topical;
  if (!kl.defined()) return ce;
  return add(ce, scale(kl, w.kl_weight));
}

double kl_anneal_weight(std::size_t step, std::size_t total_steps,
                        double warmup_fraction) {
  const double warm = warmup_fraction * static_cast<double>(total_steps);
  if (warm <= 0.0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / warm);
}

LossWeights extractor_weight_schedule(std::size_t step, std::size_t total_steps) {
  LossWeights w;
  if (3 * step < total_steps) w.alpha = 3.0;
  return w;
}

}  // namespace casr

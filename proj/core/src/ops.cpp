#include "casr/ops.hpp"

#include <algorithm>
#include <cmath>

#include "casr/errors.hpp"

namespace casr {

namespace {

// Gradient buffer of parent `i`, or nullptr when it does not need one.
double* parent_grad(TensorNode& node, std::size_t i) {
  auto& p = *node.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.ensure_grad().data();
}

const std::vector<double>& parent_data(const TensorNode& node, std::size_t i) {
  return node.parents[i]->data;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " +
                     shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()) + " differ");
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_to_string(a.shape()));
  }
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise unary op; `deriv(x, y)` returns dy/dx.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {&x},
                     [deriv](TensorNode& node) {
                       double* gx = parent_grad(node, 0);
                       if (!gx) return;
                       const auto& xd = parent_data(node, 0);
                       for (std::size_t i = 0; i < xd.size(); ++i) {
                         gx[i] += node.grad[i] * deriv(xd[i], node.data[i]);
                       }
                     });
}

}  // namespace

Activation activation_from_string(std::string_view name) {
  if (name == "swish") return Activation::kSwish;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  if (name == "softplus") return Activation::kSoftplus;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kSwish: return "swish";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
    case Activation::kSoftplus: return "softplus";
    case Activation::kRelu: return "relu";
  }
  return "unknown";
}

AttentionMask AttentionMask::causal(std::size_t t) {
  AttentionMask m{t, t, std::vector<bool>(t * t, false)};
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c <= r; ++c) m.allowed[r * t + c] = true;
  }
  return m;
}

AttentionMask AttentionMask::all(std::size_t rows, std::size_t cols) {
  return AttentionMask{rows, cols, std::vector<bool>(rows * cols, true)};
}

namespace {
// [rows, cols] -> [cols, rows].
std::vector<double> transposed_copy(const double* x, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return out;
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " +
                     shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {&a, &b},
                     [m, k, n](TensorNode& node) {
    const double* G = node.grad.data();
    const double* A = parent_data(node, 0).data();
    const double* B = parent_data(node, 1).data();
    if (double* gA = parent_grad(node, 0)) {
      // gA = G * B^T, accumulated row-wise against a transposed copy of B.
      const std::vector<double> bt = transposed_copy(B, k, n);
      for (std::size_t i = 0; i < m; ++i) {
        double* garow = gA + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          const double* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) garow[p] += g * btrow[p];
        }
      }
    }
    if (double* gB = parent_grad(node, 1)) {
      // gB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_transposed");
  require_matrix(b, "matmul_transposed");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_transposed: inner dimensions disagree for " +
                     shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const std::vector<double> bt = transposed_copy(b.data().data(), n, k);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* btrow = bt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * btrow[j];
    }
  }
  return make_result({m, n}, std::move(out), {&a, &b},
                     [m, k, n](TensorNode& node) {
    const double* G = node.grad.data();
    const double* A = parent_data(node, 0).data();
    const double* B = parent_data(node, 1).data();
    if (double* gA = parent_grad(node, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gA[i * k + p] += g * B[j * k + p];
        }
      }
    }
    if (double* gB = parent_grad(node, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gB[j * k + p] += g * A[i * k + p];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  return make_result({n, m}, std::move(out), {&a}, [m, n](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += node.grad[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](TensorNode& node) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = parent_grad(node, p)) {
        for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](TensorNode& node) {
    if (double* g = parent_grad(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
    }
    if (double* g = parent_grad(node, 1)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] -= node.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](TensorNode& node) {
    const auto& x = parent_data(node, 0);
    const auto& y = parent_data(node, 1);
    if (double* g = parent_grad(node, 0)) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += node.grad[i] * y[i];
    }
    if (double* g = parent_grad(node, 1)) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += node.grad[i] * x[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](TensorNode& node) {
    const auto& y = parent_data(node, 1);
    if (double* g = parent_grad(node, 0)) {
      for (std::size_t i = 0; i < y.size(); ++i) g[i] += node.grad[i] / y[i];
    }
    if (double* g = parent_grad(node, 1)) {
      for (std::size_t i = 0; i < y.size(); ++i) {
        g[i] -= node.grad[i] * node.data[i] / y[i];
      }
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  const std::size_t n = x.cols();
  if (row.numel() != n) {
    throw ShapeError("add_row: row of shape " + shape_to_string(row.shape()) +
                     " does not match " + shape_to_string(x.shape()));
  }
  const std::size_t m = x.numel() / n;
  const auto in = x.data(), r = row.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = in[i * n + j] + r[j];
  return make_result(x.shape(), std::move(out), {&x, &row},
                     [m, n](TensorNode& node) {
    if (double* g = parent_grad(node, 0)) {
      for (std::size_t i = 0; i < m * n; ++i) g[i] += node.grad[i];
    }
    if (double* g = parent_grad(node, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += node.grad[i * n + j];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({1}, {acc}, {&x}, [](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    const std::size_t n = node.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += node.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw EmptyInputError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::kSwish:
      return unary(
          x, [](double v) { return v * stable_sigmoid(v); },
          [](double v, double) {
            const double s = stable_sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
          });
    case Activation::kSigmoid:
      return unary(
          x, [](double v) { return stable_sigmoid(v); },
          [](double, double y) { return y * (1.0 - y); });
    case Activation::kTanh:
      return unary(
          x, [](double v) { return std::tanh(v); },
          [](double, double y) { return 1.0 - y * y; });
    case Activation::kSoftplus:
      return unary(
          x, [](double v) { return stable_softplus(v); },
          [](double v, double) { return stable_sigmoid(v); });
    case Activation::kRelu:
      return unary(
          x, [](double v) { return v > 0 ? v : 0.0; },
          [](double v, double) { return v > 0 ? 1.0 : 0.0; });
  }
  throw ConfigError("unknown activation kind");
}

Tensor softmax(const Tensor& x, int axis) {
  const auto& shape = x.shape();
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const double v = in[base + j * inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
        mx = std::max(mx, v);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return make_result(shape, std::move(out), {&x},
                     [outer, inner, n](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dot += node.data[base + j * inner] * node.grad[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += node.data[idx] * (node.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.cols();
  const std::size_t m = x.numel() / n;
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("log_softmax: NaN input");
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lz;
  }
  return make_result(x.shape(), std::move(out), {&x}, [m, n](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t r = 0; r < m; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += node.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = r * n + j;
        g[idx] += node.grad[idx] - std::exp(node.data[idx]) * gs;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const std::size_t d = x.cols();
  if (d == 0) throw ShapeError("layer_norm: empty feature axis");
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: affine parameters must have width " +
                     std::to_string(d));
  }
  const std::size_t m = x.numel() / d;
  const auto in = x.data(), gm = gamma.data(), bt = beta.data();
  std::vector<double> out(in.size());
  // Normalized values and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double denom = std::sqrt(var + eps);
    const double is = denom > 0 ? 1.0 / denom : 0.0;
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gm[j] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                     [m, d, xhat, inv_std](TensorNode& node) {
    const auto& gm = parent_data(node, 1);
    double* gx = parent_grad(node, 0);
    double* gg = parent_grad(node, 1);
    double* gb = parent_grad(node, 2);
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < m; ++r) {
      const double* G = node.grad.data() + r * d;
      const double* H = xhat->data() + r * d;
      if (gg || gb) {
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += G[j] * H[j];
          if (gb) gb[j] += G[j];
        }
      }
      if (!gx) continue;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dh[j] = G[j] * gm[j];
        mean_dh += dh[j];
        mean_dh_h += dh[j] * H[j];
      }
      mean_dh /= static_cast<double>(d);
      mean_dh_h /= static_cast<double>(d);
      const double is = (*inv_std)[r];
      for (std::size_t j = 0; j < d; ++j) {
        gx[r * d + j] += is * (dh[j] - mean_dh - H[j] * mean_dh_h);
      }
    }
  });
}

Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel) {
  require_matrix(x, "conv1d_depthwise");
  require_matrix(kernel, "conv1d_depthwise");
  const std::size_t t = x.dim(0), d = x.dim(1), k = kernel.dim(0);
  if (k % 2 == 0) {
    throw ConfigError("conv1d_depthwise: kernel length must be odd, got " +
                      std::to_string(k));
  }
  if (kernel.dim(1) != d) {
    throw ShapeError("conv1d_depthwise: kernel " +
                     shape_to_string(kernel.shape()) + " vs input " +
                     shape_to_string(x.shape()));
  }
  const long half = static_cast<long>(k / 2);
  const auto in = x.data(), ker = kernel.data();
  std::vector<double> out(t * d, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const long src = static_cast<long>(i) + static_cast<long>(j) - half;
      if (src < 0 || src >= static_cast<long>(t)) continue;
      const double* xr = in.data() + src * d;
      const double* kr = ker.data() + j * d;
      double* o = out.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) o[c] += kr[c] * xr[c];
    }
  }
  return make_result({t, d}, std::move(out), {&x, &kernel},
                     [t, d, k, half](TensorNode& node) {
    const auto& xd = parent_data(node, 0);
    const auto& kd = parent_data(node, 1);
    double* gx = parent_grad(node, 0);
    double* gk = parent_grad(node, 1);
    for (std::size_t i = 0; i < t; ++i) {
      const double* G = node.grad.data() + i * d;
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(i) + static_cast<long>(j) - half;
        if (src < 0 || src >= static_cast<long>(t)) continue;
        for (std::size_t c = 0; c < d; ++c) {
          if (gx) gx[src * d + c] += G[c] * kd[j * d + c];
          if (gk) gk[j * d + c] += G[c] * xd[src * d + c];
        }
      }
    }
  });
}

Tensor mean_pool(const Tensor& x) {
  const std::size_t d = x.cols();
  const std::size_t t = x.rank() == 1 ? 1 : x.dim(0);
  if (t == 0 || x.numel() == 0) throw EmptyInputError("mean_pool: no frames");
  const auto in = x.data();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < d; ++c) out[c] += in[i * d + c];
  const double inv = 1.0 / static_cast<double>(t);
  for (auto& v : out) v *= inv;
  return make_result({d}, std::move(out), {&x}, [t, d, inv](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < d; ++c) g[i * d + c] += node.grad[c] * inv;
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.cols() != d) {
      throw ShapeError("concat_rows: width mismatch " +
                       shape_to_string(p.shape()) + " vs " + std::to_string(d));
    }
    offsets.push_back(total);
    total += p.numel() / d;
  }
  std::vector<double> out;
  out.reserve(total * d);
  for (const auto& p : parts) {
    const auto src = p.data();
    out.insert(out.end(), src.begin(), src.end());
  }
  return make_result_list({total, d}, std::move(out), parts,
                          [offsets, d](TensorNode& node) {
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      double* g = parent_grad(node, p);
      if (!g) continue;
      const std::size_t n = node.parents[p]->data.size();
      const double* src = node.grad.data() + offsets[p] * d;
      for (std::size_t i = 0; i < n; ++i) g[i] += src[i];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths, offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(m * total);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].data();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(src.data() + r * widths[p], widths[p],
                  out.data() + r * total + offsets[p]);
    }
  }
  Shape shape = parts.front().rank() == 1 ? Shape{total} : Shape{m, total};
  return make_result_list(shape, std::move(out), parts,
                          [m, total, widths, offsets](TensorNode& node) {
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      double* g = parent_grad(node, p);
      if (!g) continue;
      for (std::size_t r = 0; r < m; ++r) {
        const double* src = node.grad.data() + r * total + offsets[p];
        for (std::size_t c = 0; c < widths[p]; ++c) g[r * widths[p] + c] += src[c];
      }
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  const std::size_t d = x.dim(1);
  if (begin > end || end > x.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") out of " +
                     shape_to_string(x.shape()));
  }
  const auto in = x.data();
  std::vector<double> out(in.begin() + begin * d, in.begin() + end * d);
  return make_result({end - begin, d}, std::move(out), {&x},
                     [begin, d](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      g[begin * d + i] += node.grad[i];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin > end || end > n) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  const auto in = x.data();
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(in.data() + r * n + begin, w, out.data() + r * w);
  return make_result({m, w}, std::move(out), {&x},
                     [m, n, w, begin](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c)
        g[r * n + begin + c] += node.grad[r * w + c];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
  require_matrix(table, "gather_rows");
  const std::size_t v = table.dim(0), d = table.dim(1);
  const auto in = table.data();
  std::vector<double> out(index.size() * d);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= v) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) +
                       " out of range " + std::to_string(v));
    }
    std::copy_n(in.data() + index[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result({index.size(), d}, std::move(out), {&table},
                     [idx = std::move(idx), d](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[idx[i] * d + c] += node.grad[i * d + c];
  });
}

Tensor where_rows(const Tensor& x, const std::vector<bool>& mask,
                  const Tensor& fill) {
  require_matrix(x, "where_rows");
  const std::size_t t = x.dim(0), d = x.dim(1);
  if (mask.size() != t || fill.numel() != d) {
    throw ShapeError("where_rows: mask/fill do not match " +
                     shape_to_string(x.shape()));
  }
  const auto in = x.data(), f = fill.data();
  std::vector<double> out(in.begin(), in.end());
  for (std::size_t i = 0; i < t; ++i) {
    if (mask[i]) std::copy_n(f.data(), d, out.data() + i * d);
  }
  return make_result({t, d}, std::move(out), {&x, &fill},
                     [mask, t, d](TensorNode& node) {
    double* gx = parent_grad(node, 0);
    double* gf = parent_grad(node, 1);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        const double g = node.grad[i * d + c];
        if (mask[i]) {
          if (gf) gf[c] += g;
        } else if (gx) {
          gx[i * d + c] += g;
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_to_string(x.shape()) + " -> " +
                     shape_to_string(shape));
  }
  const auto in = x.data();
  return make_result(std::move(shape), std::vector<double>(in.begin(), in.end()),
                     {&x}, [](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
  });
}

Tensor relative_bias(const Tensor& table, std::size_t head, std::size_t tq,
                     std::size_t tk, std::size_t clip) {
  require_matrix(table, "relative_bias");
  const std::size_t width = 2 * clip + 1;
  if (table.dim(1) != width || head >= table.dim(0)) {
    throw ShapeError("relative_bias: table " + shape_to_string(table.shape()) +
                     " incompatible with clip " + std::to_string(clip));
  }
  const auto tb = table.data();
  std::vector<std::size_t> idx(tq * tk);
  std::vector<double> out(tq * tk);
  const long c = static_cast<long>(clip);
  for (std::size_t i = 0; i < tq; ++i) {
    for (std::size_t j = 0; j < tk; ++j) {
      long rel = static_cast<long>(j) - static_cast<long>(i);
      rel = std::clamp(rel, -c, c);
      idx[i * tk + j] = head * width + static_cast<std::size_t>(rel + c);
      out[i * tk + j] = tb[idx[i * tk + j]];
    }
  }
  return make_result({tq, tk}, std::move(out), {&table},
                     [idx = std::move(idx)](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += node.grad[i];
  });
}

Tensor masked_fill(const Tensor& x, const AttentionMask& mask, double value) {
  require_matrix(x, "masked_fill");
  if (mask.rows != x.dim(0) || mask.cols != x.dim(1)) {
    throw ShapeError("attention mask [" + std::to_string(mask.rows) + "," +
                     std::to_string(mask.cols) + "] does not match scores " +
                     shape_to_string(x.shape()));
  }
  const auto in = x.data();
  std::vector<double> out(in.begin(), in.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!mask.allowed[i]) out[i] = value;
  }
  return make_result(x.shape(), std::move(out), {&x},
                     [allowed = mask.allowed](TensorNode& node) {
    double* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (allowed[i]) g[i] += node.grad[i];
    }
  });
}

}  // namespace casr

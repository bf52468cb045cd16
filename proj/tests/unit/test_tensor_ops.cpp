#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "casr/blocks.hpp"
#include "casr/errors.hpp"
#include "casr/gradcheck.hpp"
#include "casr/ops.hpp"
#include "casr/parameters.hpp"
#include "oracles.hpp"

using namespace casr;

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sample_uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

void expect_data(const Tensor& t, const std::vector<double>& want, double tol = 0.0) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.at(i), want[i], tol) << "index " << i;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  expect_data(matmul(eye, m), {1, 2, 3, 4});
}

TEST(Matmul, MatchesTripleLoop) {
  expect_data(matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5, 6}, {7, 8}})),
              {19, 22, 43, 50});
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + sample_index(rng, 5), k = 1 + sample_index(rng, 5),
                      n = 1 + sample_index(rng, 5);
    const Tensor a = uniform({m, k}, rng), b = uniform({k, n}, rng);
    const auto want = oracle::matmul({a.data().begin(), a.data().end()},
                                     {b.data().begin(), b.data().end()}, m, k, n);
    expect_data(matmul(a, b), want, 1e-12);
    expect_data(matmul_transposed(a, transpose(b)), want, 1e-12);
  }
}

TEST(Matmul, InnerMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  expect_data(softmax(Tensor::vector({1, 1})), {0.5, 0.5}, 1e-15);
  expect_data(softmax(Tensor::vector({0, std::log(3.0)})), {0.25, 0.75}, 1e-15);
  const Tensor big = softmax(Tensor::vector({1000, 0}));
  EXPECT_NEAR(big.at(0), 1.0, 1e-15);
  EXPECT_GE(big.at(1), 0.0);
  EXPECT_LT(big.at(1), 1e-300);
  EXPECT_TRUE(std::isfinite(big.at(0)));
}

TEST(Softmax, NanIsRejected) {
  EXPECT_THROW(softmax(Tensor::vector({0, std::nan("")})), NumericError);
}

TEST(Softmax, SlicesArePositiveAndSumToOne) {
  Rng rng(5);
  const Tensor x = uniform({6, 7}, rng, -20, 20);
  for (int axis : {0, 1}) {
    const Tensor y = softmax(x, axis);
    const std::size_t outer = axis == 1 ? 6 : 7, inner = axis == 1 ? 7 : 6;
    for (std::size_t i = 0; i < outer; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < inner; ++j) {
        const double v = axis == 1 ? y.at(i, j) : y.at(j, i);
        EXPECT_GT(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, Examples) {
  const Tensor ones3 = Tensor::vector({1, 1, 1}), zeros3 = Tensor::vector({0, 0, 0});
  expect_data(layer_norm(Tensor::matrix({{2, 2, 2}}), ones3, zeros3), {0, 0, 0});
  expect_data(layer_norm(Tensor::matrix({{1, 3}}), Tensor::vector({1, 1}), Tensor::vector({0, 0}), 0.0),
              {-1, 1}, 1e-15);
}

TEST(LayerNorm, UnitAffineNormalizesEachRow) {
  Rng rng(7);
  const std::size_t d = 9;
  const Tensor x = uniform({5, d}, rng);
  const Tensor y = layer_norm(x, Tensor::full({d}, 1.0), Tensor::zeros({d}), 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += y.at(r, c);
    mean /= d;
    for (std::size_t c = 0; c < d; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    var /= d;
    EXPECT_LE(std::fabs(mean), 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = uniform({3, 5}, rng), g = uniform({5}, rng), b = uniform({5}, rng);
    const Tensor w = uniform({3, 5}, rng);
    EXPECT_LE(grad_check([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b}), 1e-4);
  }
}

TEST(Activation, Examples) {
  EXPECT_EQ(activation(Activation::kSwish, Tensor::vector({0})).at(0), 0.0);
  EXPECT_NEAR(activation(Activation::kSoftplus, Tensor::vector({0})).at(0), std::log(2.0), 1e-15);
  // ln(1 + e^50) = 50 + ln(1 + e^-50)
  const double want = 50.0 + std::log1p(std::exp(-50.0));
  EXPECT_NEAR(activation(Activation::kSoftplus, Tensor::vector({50})).at(0), want, 1e-12);
  EXPECT_TRUE(std::isfinite(activation(Activation::kSoftplus, Tensor::vector({800})).at(0)));
  EXPECT_NEAR(activation(Activation::kSigmoid, Tensor::vector({0})).at(0), 0.5, 1e-15);
  EXPECT_EQ(activation(Activation::kRelu, Tensor::vector({-1, 2})).at(1), 2.0);
  EXPECT_THROW(activation_from_string("gelu"), ConfigError);
  EXPECT_EQ(activation_from_string("softplus"), Activation::kSoftplus);
}

TEST(Conv1dDepthwise, Examples) {
  Rng rng(11);
  const Tensor x = uniform({6, 3}, rng);
  Tensor centre = Tensor::zeros({3, 3});
  for (std::size_t c = 0; c < 3; ++c) centre.mutable_data()[3 + c] = 1.0;
  const Tensor a = conv1d_depthwise(x, centre);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(a.at(i), x.at(i));
  const Tensor b = conv1d_depthwise(x, Tensor::full({1, 3}, 1.0));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(b.at(i), x.at(i));
  expect_data(conv1d_depthwise(Tensor::matrix({{1}, {2}, {3}}), Tensor::matrix({{1}, {1}, {1}})),
              {3, 6, 5});
}

TEST(Conv1dDepthwise, EvenKernelIsConfigError) {
  EXPECT_THROW(conv1d_depthwise(Tensor::zeros({4, 2}), Tensor::zeros({2, 2})), ConfigError);
}

TEST(MeanPool, Examples) {
  expect_data(mean_pool(Tensor::matrix({{1, 2}, {3, 4}})), {2, 3});
  expect_data(mean_pool(Tensor::matrix({{5, -1, 7}})), {5, -1, 7});
  EXPECT_THROW(mean_pool(Tensor::zeros({0, 3})), EmptyInputError);
}

TEST(MeanPool, EachFrameReceivesGradOverT) {
  Tensor x = Tensor::zeros({4, 2}, true);
  backward(sum(mean_pool(x)));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Backward, SumOfSquares) {
  Tensor x = Tensor::vector({1, 2}, true);
  backward(sum(square(x)));
  expect_data(Tensor({2}, x.grad()), {2, 4});
}

TEST(Backward, SharedInputAccumulates) {
  Tensor x = Tensor::vector({1, -3}, true);
  backward(sum(add(x, x)));
  expect_data(Tensor({2}, x.grad()), {2, 2});
}

TEST(Backward, DisconnectedTensorKeepsZeroGrad) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor unused = Tensor::vector({3}, true);
  backward(sum(x));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarRootIsUsageError) {
  Tensor x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), UsageError);
}

TEST(Backward, RepeatedRunsGiveBitIdenticalGradients) {
  Rng rng(12);
  const Tensor a0 = uniform({4, 3}, rng), b0 = uniform({3, 5}, rng);
  auto run = [&] {
    Tensor a = a0.detach(), b = b0.detach();
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    backward(sum(log_softmax(matmul(a, b))));
    return std::make_pair(a.grad(), b.grad());
  };
  EXPECT_EQ(run(), run());
}

TEST(NoGradGuard, SuppressesGraph) {
  Tensor x = Tensor::vector({1, 2}, true);
  NoGradGuard guard;
  EXPECT_FALSE(square(x).requires_grad());
}

TEST(GradCheck, SumOfSquaresIsTight) {
  Rng rng(13);
  const Tensor x = uniform({7}, rng);
  EXPECT_LE(grad_check([](const Tensor& v) { return sum(square(v)); }, x), 1e-7);
}

TEST(GradCheck, ConformerBlockPipeline) {
  Rng rng(14);
  ParameterStore store;
  BlockDims dims;
  dims.d = 8;
  dims.heads = 2;
  dims.ffn_hidden = 16;
  dims.conv_kernel = 3;
  const auto block = make_conformer_block(store, "b", dims, rng);
  for (const auto& p : store.items()) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v += sample_normal(rng, 0.0, 0.3);
  }
  Tensor x = uniform({5, 8}, rng);
  const Tensor w = uniform({5, 8}, rng);
  auto wrt = store.trainable();
  wrt.push_back(x);
  EXPECT_LE(grad_check([&] { return sum(mul(conformer_block_forward(x, block), w)); }, wrt), 1e-4);
}

TEST(GradCheck, UnseededRandomnessIsFlagged) {
  Rng rng(15);
  std::random_device entropy;
  const Tensor x = uniform({3}, rng);
  auto noisy = [&](const Tensor& v) {
    return add_scalar(sum(v), static_cast<double>(entropy()) * 1e-3);
  };
  EXPECT_THROW(grad_check(noisy, x), DeterminismError);
}

TEST(Ops, ShapeHelpers) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  expect_data(transpose(m), {1, 4, 2, 5, 3, 6});
  expect_data(slice_rows(m, 1, 2), {4, 5, 6});
  expect_data(slice_cols(m, 1, 3), {2, 3, 5, 6});
  expect_data(concat_rows({m, slice_rows(m, 0, 1)}), {1, 2, 3, 4, 5, 6, 1, 2, 3});
  expect_data(concat_cols({m, slice_cols(m, 0, 1)}), {1, 2, 3, 1, 4, 5, 6, 4});
  const std::vector<std::size_t> idx{1, 1, 0};
  expect_data(gather_rows(m, idx), {4, 5, 6, 4, 5, 6, 1, 2, 3});
  expect_data(where_rows(m, {true, false}, Tensor::vector({0, 0, 9})), {0, 0, 9, 4, 5, 6});
  EXPECT_THROW(reshape(m, {4}), ShapeError);
}

TEST(Ops, MaskedFillBlocksGradient) {
  Tensor x = Tensor::matrix({{1, 2}, {3, 4}}, true);
  const AttentionMask mask = AttentionMask::causal(2);
  const Tensor y = softmax(masked_fill(x, mask), -1);
  EXPECT_EQ(y.at(0, 1), 0.0);
  backward(sum(mul(y, Tensor::matrix({{1, 2}, {3, 5}}))));
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Ops, RelativeBiasClipsDistance) {
  // table row for head 0: offsets -2..2 map to columns 0..4
  const Tensor table = Tensor::matrix({{10, 11, 12, 13, 14}});
  const Tensor b = relative_bias(table, 0, 4, 4, 2);
  EXPECT_EQ(b.at(0, 0), 12);
  EXPECT_EQ(b.at(0, 1), 13);
  EXPECT_EQ(b.at(0, 3), 14);
  EXPECT_EQ(b.at(3, 0), 10);
}

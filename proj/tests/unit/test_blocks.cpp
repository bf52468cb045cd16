#include <gtest/gtest.h>

#include <cmath>

#include "casr/blocks.hpp"
#include "casr/errors.hpp"
#include "casr/gradcheck.hpp"
#include "casr/ops.hpp"
#include "casr/parameters.hpp"

using namespace casr;

namespace {

BlockDims dims8() {
  BlockDims d;
  d.d = 8;
  d.heads = 2;
  d.ffn_hidden = 12;
  d.conv_kernel = 3;
  d.rel_clip = 4;
  return d;
}

Tensor randn(Shape shape, Rng& rng, double sd = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sample_normal(rng, 0.0, sd);
  return Tensor(std::move(shape), std::move(v));
}

void fill(Tensor t, double value) {
  for (double& x : t.mutable_data()) x = value;
}

void zero(const Linear& l) {
  fill(l.weight, 0.0);
  fill(l.bias, 0.0);
}

// Moves every parameter away from its structured initial value.
void perturb(ParameterStore& store, Rng& rng) {
  for (const auto& p : store.items()) {
    Tensor t = p.tensor;
    for (double& x : t.mutable_data()) x += sample_normal(rng, 0.0, 0.3);
  }
}

void expect_bit_equal(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i)) << "index " << i;
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), tol) << "index " << i;
}

double probe_check(const std::function<Tensor(const Tensor&)>& f, ParameterStore& store,
                   Tensor x, Rng& rng) {
  const Tensor w = randn(f(x).shape(), rng);
  auto wrt = store.trainable();
  wrt.push_back(x);
  return grad_check([&] { return sum(mul(f(x), w)); }, wrt);
}

}  // namespace

TEST(BlockDims, Validation) {
  BlockDims d = dims8();
  d.heads = 3;
  EXPECT_THROW(d.validate(), ConfigError);
  d = dims8();
  d.conv_kernel = 4;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(FeedForward, ZeroWeightsGiveZero) {
  Rng rng(1);
  ParameterStore store;
  const auto f = make_feed_forward(store, "f", 8, 12, rng);
  zero(f.in);
  zero(f.out);
  const Tensor y = ffn_forward(randn({3, 8}, rng), f);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(FeedForward, ScalarHandTrace) {
  Rng rng(2);
  ParameterStore store;
  const auto f = make_feed_forward(store, "f", 1, 1, rng);
  fill(f.in.weight, 2.0);
  fill(f.in.bias, 1.0);
  fill(f.out.weight, 3.0);
  fill(f.out.bias, 0.5);
  const double h = 2.0 * 0.5 + 1.0;
  const double want = 3.0 * h / (1.0 + std::exp(-h)) + 0.5;
  EXPECT_NEAR(ffn_forward(Tensor::matrix({{0.5}}), f).item(), want, 1e-14);
}

TEST(FeedForward, GradCheck) {
  Rng rng(3);
  ParameterStore store;
  const auto f = make_feed_forward(store, "f", 8, 12, rng);
  perturb(store, rng);
  EXPECT_LE(probe_check([&](const Tensor& x) { return ffn_forward(x, f); }, store,
                        randn({4, 8}, rng), rng), 1e-4);
}

TEST(Mhsa, SinglePositionIsValueThenOutput) {
  Rng rng(4);
  ParameterStore store;
  const auto a = make_attention(store, "a", dims8(), rng, true);
  perturb(store, rng);
  const Tensor x = randn({1, 8}, rng);
  expect_near(mhsa_forward(x, a), a.out(a.value(x)), 1e-14);
}

TEST(Mhsa, PermutationEquivariantWithoutPositionBias) {
  Rng rng(5);
  ParameterStore store;
  const auto a = make_attention(store, "a", dims8(), rng, true);
  perturb(store, rng);
  const Tensor x = randn({5, 8}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const Tensor y = mhsa_forward(x, a, nullptr, false);
  const Tensor yp = mhsa_forward(gather_rows(x, perm), a, nullptr, false);
  expect_near(yp, gather_rows(y, perm), 1e-12);
}

TEST(Mhsa, CausalMaskFirstPositionSeesOnlyItself) {
  Rng rng(6);
  ParameterStore store;
  const auto a = make_attention(store, "a", dims8(), rng, true);
  perturb(store, rng);
  const Tensor x = randn({3, 8}, rng);
  const AttentionMask causal = AttentionMask::causal(3);
  const Tensor y = mhsa_forward(x, a, &causal);
  const Tensor want = a.out(a.value(slice_rows(x, 0, 1)));
  expect_near(slice_rows(y, 0, 1), want, 1e-14);

  // Dense enumeration for position 1: softmax over keys {0, 1} per head.
  const std::size_t dh = 4;
  const Tensor q = a.query(x), k = a.key(x), v = a.value(x);
  std::vector<double> heads_out(8, 0.0);
  for (std::size_t h = 0; h < 2; ++h) {
    double logits[2];
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += q.at(1, h * dh + c) * k.at(j, h * dh + c);
      const long rel = static_cast<long>(j) - 1;
      logits[j] = s / std::sqrt(static_cast<double>(dh)) +
                  a.rel_bias.at(h, static_cast<std::size_t>(rel + 4));
    }
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    for (std::size_t c = 0; c < dh; ++c) {
      heads_out[h * dh + c] = (e0 * v.at(0, h * dh + c) + e1 * v.at(1, h * dh + c)) / (e0 + e1);
    }
  }
  expect_near(slice_rows(y, 1, 2), a.out(Tensor({1, 8}, heads_out)), 1e-12);
}

TEST(Mhsa, MaskShapeMismatchIsShapeError) {
  Rng rng(7);
  ParameterStore store;
  const auto a = make_attention(store, "a", dims8(), rng, true);
  const AttentionMask wrong = AttentionMask::causal(2);
  EXPECT_THROW(mhsa_forward(randn({3, 8}, rng), a, &wrong), ShapeError);
}

TEST(Mha, SingleKeyIsAffineInThatKey) {
  Rng rng(8);
  ParameterStore store;
  const auto a = make_attention(store, "a", dims8(), rng, false);
  perturb(store, rng);
  const Tensor v = randn({1, 8}, rng);
  const Tensor y = mha_forward(randn({4, 8}, rng), v, a);
  const Tensor row = a.out(a.value(v));
  for (std::size_t r = 0; r < 4; ++r) expect_near(slice_rows(y, r, r + 1), row, 1e-14);
}

TEST(ConvModule, ZeroOutputProjectionIsResidualOnly) {
  Rng rng(9);
  ParameterStore store;
  const auto c = make_conv_module(store, "c", dims8(), rng);
  perturb(store, rng);
  zero(c.pointwise_out);
  const Tensor x = randn({6, 8}, rng);
  expect_bit_equal(conv_module_forward(x, c), x);
}

TEST(ConvModule, ZeroGateLogitsHalveTheLinearPath) {
  Rng rng(10);
  ParameterStore store;
  const auto c = make_conv_module(store, "c", dims8(), rng);
  perturb(store, rng);
  // Gate half of the 2d-wide pointwise projection forced to zero logits.
  Tensor w = c.pointwise_in.weight, b = c.pointwise_in.bias;
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t j = 8; j < 16; ++j) w.mutable_data()[r * 16 + j] = 0.0;
  for (std::size_t j = 8; j < 16; ++j) b.mutable_data()[j] = 0.0;
  const Tensor x = randn({5, 8}, rng);
  const Tensor value = slice_cols(c.pointwise_in(c.norm_in(x)), 0, 8);
  const Tensor glu = scale(value, 0.5);
  const Tensor h = activation(Activation::kSwish, c.norm_mid(conv1d_depthwise(glu, c.depthwise)));
  expect_near(conv_module_forward(x, c), add(c.pointwise_out(h), x), 1e-13);
}

TEST(ConvModule, GradCheck) {
  Rng rng(11);
  ParameterStore store;
  const auto c = make_conv_module(store, "c", dims8(), rng);
  perturb(store, rng);
  EXPECT_LE(probe_check([&](const Tensor& x) { return conv_module_forward(x, c); }, store,
                        randn({5, 8}, rng), rng), 1e-4);
}

TEST(ConformerBlock, ZeroedBranchesReduceToLayerNorm) {
  Rng rng(12);
  ParameterStore store;
  const auto b = make_conformer_block(store, "b", dims8(), rng);
  perturb(store, rng);
  zero(b.ffn1.out);
  zero(b.mhsa.out);
  zero(b.conv.pointwise_out);
  zero(b.ffn2.out);
  const Tensor x = randn({5, 8}, rng);
  expect_bit_equal(conformer_block_forward(x, b), b.final_norm(x));
}

TEST(ConformerBlock, PreservesShape) {
  Rng rng(13);
  ParameterStore store;
  BlockDims d = dims8();
  d.d = 16;
  d.heads = 4;
  const auto b = make_conformer_block(store, "b", d, rng);
  EXPECT_EQ(conformer_block_forward(randn({7, 16}, rng), b).shape(), (Shape{7, 16}));
}

TEST(TransformerBlock, ZeroedBranchesReduceToLayerNorm) {
  Rng rng(14);
  ParameterStore store;
  const auto b = make_transformer_block(store, "b", dims8(), rng);
  perturb(store, rng);
  zero(b.attn.out);
  zero(b.ffn.out);
  const Tensor x = randn({4, 8}, rng);
  expect_bit_equal(transformer_block_forward(x, b), b.final_norm(x));
  EXPECT_EQ(transformer_block_forward(randn({9, 8}, rng), b).shape(), (Shape{9, 8}));
}

TEST(TransformerBlock, GradCheck) {
  Rng rng(15);
  ParameterStore store;
  const auto b = make_transformer_block(store, "b", dims8(), rng);
  perturb(store, rng);
  EXPECT_LE(probe_check([&](const Tensor& x) { return transformer_block_forward(x, b); }, store,
                        randn({4, 8}, rng), rng), 1e-4);
}

TEST(DecoderBlock, ZeroedContextProjectionEqualsBaseline) {
  Rng rng(16);
  ParameterStore store;
  const auto b = make_decoder_block(store, "d", dims8(), rng, true);
  perturb(store, rng);
  zero(b.context_attn->out);
  const Tensor q = randn({4, 8}, rng), z = randn({6, 8}, rng), v = randn({3, 8}, rng);
  expect_bit_equal(decoder_block_forward(q, z, &v, b, DecoderMode::kAttentionCondition),
                   decoder_block_forward(q, z, nullptr, b, DecoderMode::kBaseline));
}

TEST(DecoderBlock, AttentionModeNeedsContext) {
  Rng rng(17);
  ParameterStore store;
  const auto with = make_decoder_block(store, "a", dims8(), rng, true);
  const auto without = make_decoder_block(store, "b", dims8(), rng, false);
  const Tensor q = randn({2, 8}, rng), z = randn({3, 8}, rng), v = randn({1, 8}, rng);
  EXPECT_THROW(decoder_block_forward(q, z, nullptr, with, DecoderMode::kAttentionCondition),
               ConfigError);
  EXPECT_THROW(decoder_block_forward(q, z, &v, without, DecoderMode::kAttentionCondition),
               ConfigError);
}

TEST(DecoderBlock, LaterTargetsDoNotAffectEarlierOutputs) {
  Rng rng(18);
  ParameterStore store;
  const auto b = make_decoder_block(store, "d", dims8(), rng, true);
  perturb(store, rng);
  const Tensor z = randn({6, 8}, rng), v = randn({2, 8}, rng);
  Tensor q = randn({5, 8}, rng);
  for (DecoderMode mode : {DecoderMode::kBaseline, DecoderMode::kAttentionCondition}) {
    const Tensor before = decoder_block_forward(q, z, &v, b, mode);
    Tensor changed = q.detach();
    for (std::size_t c = 0; c < 8; ++c) changed.mutable_data()[3 * 8 + c] += 1.5;
    const Tensor after = decoder_block_forward(changed, z, &v, b, mode);
    expect_bit_equal(slice_rows(before, 0, 3), slice_rows(after, 0, 3));
    EXPECT_NE(before.at(3, 0), after.at(3, 0));
  }
}

TEST(DecoderBlock, GradCheckBothModes) {
  Rng rng(19);
  ParameterStore store;
  const auto b = make_decoder_block(store, "d", dims8(), rng, true);
  perturb(store, rng);
  const Tensor z = randn({5, 8}, rng), v = randn({2, 8}, rng);
  for (DecoderMode mode : {DecoderMode::kBaseline, DecoderMode::kAttentionCondition}) {
    EXPECT_LE(probe_check([&](const Tensor& q) { return decoder_block_forward(q, z, &v, b, mode); },
                          store, randn({3, 8}, rng), rng), 1e-4);
  }
}

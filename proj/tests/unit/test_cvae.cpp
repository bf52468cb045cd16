#include <gtest/gtest.h>

#include "casr/cvae.hpp"
#include "casr/errors.hpp"
#include "casr/gradcheck.hpp"
#include "casr/ops.hpp"

using namespace casr;

namespace {

struct Fixture {
  ParameterStore store;
  LvmParams lvm;
  Rng rng{11};

  Fixture() {
    BlockDims dims;
    dims.d = 8;
    dims.heads = 2;
    dims.ffn_hidden = 12;
    lvm = make_lvm(store, dims, 1, 15, 4, rng);
  }

  Tensor feats(std::size_t rows) {
    std::vector<double> v(rows * 8);
    for (double& x : v) x = sample_normal(rng);
    return Tensor({rows, 8}, std::move(v));
  }
};

}  // namespace

TEST(Lvm, HeadsProduceLatentWidthAndPositiveSigma) {
  Fixture f;
  const Tensor ctx = f.feats(5);
  const std::vector<TokenId> y{4, 6, 9};
  for (LvmKind kind : {LvmKind::kRole, LvmKind::kTopical}) {
    const LatentGaussian prior = prenet_forward(f.lvm, kind, ctx);
    const LatentGaussian post = postnet_forward(f.lvm, kind, ctx, lvm_text_encode(f.lvm, y));
    EXPECT_EQ(prior.mu.shape(), (Shape{4}));
    EXPECT_EQ(post.sigma.shape(), (Shape{4}));
    for (double s : prior.sigma.data()) EXPECT_GT(s, 0.0);
    for (double s : post.sigma.data()) EXPECT_GT(s, 0.0);
  }
}

TEST(Lvm, PrenetIgnoresRowOrderOfContext) {
  Fixture f;
  const Tensor ctx = f.feats(4);
  const std::vector<std::size_t> rev{3, 2, 1, 0};
  const Tensor flipped = gather_rows(ctx, rev);
  const auto a = prenet_forward(f.lvm, LvmKind::kTopical, ctx);
  const auto b = prenet_forward(f.lvm, LvmKind::kTopical, flipped);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.mu.at(i), b.mu.at(i), 1e-13);
}

TEST(Lvm, TextEncodeValidatesTokens) {
  Fixture f;
  EXPECT_THROW(lvm_text_encode(f.lvm, std::vector<TokenId>{}), EmptyInputError);
  EXPECT_THROW(lvm_text_encode(f.lvm, std::vector<TokenId>{4, 15}), VocabularyError);
  EXPECT_EQ(lvm_text_encode(f.lvm, std::vector<TokenId>{4, 5}).shape(), (Shape{2, 8}));
}

TEST(Reparameterize, ZeroNoiseGivesMean) {
  const LatentGaussian g{Tensor::vector({1.0, -2.0}), Tensor::vector({0.5, 3.0})};
  const Tensor v = reparameterize(g, Tensor::zeros({2}));
  EXPECT_EQ(v.at(0), 1.0);
  EXPECT_EQ(v.at(1), -2.0);
  const Tensor w = reparameterize(g, Tensor::vector({2.0, -1.0}));
  EXPECT_EQ(w.at(0), 2.0);
  EXPECT_EQ(w.at(1), -5.0);
}

TEST(Reparameterize, GradCheckThroughPostnet) {
  Fixture f;
  const Tensor ctx = f.feats(3);
  const std::vector<TokenId> y{5, 7};
  const Tensor eps = standard_normal(4, f.rng);
  Tensor w = f.lvm.role_postnet.mu.weight;
  Tensor s = f.lvm.role_postnet.sigma.bias;
  const double err = grad_check(
      [&] {
        const auto post = postnet_forward(f.lvm, LvmKind::kRole, ctx, lvm_text_encode(f.lvm, y));
        return sum(square(reparameterize(post, eps)));
      },
      {w, s});
  EXPECT_LE(err, 1e-4);
}

TEST(ConversationalReps, DecodeUsesPrenetMeanDeterministically) {
  Fixture f;
  const Tensor role = f.feats(2), topical = f.feats(3);
  const auto a = conversational_representations(f.lvm, LvmMode::kDecode, role, topical,
                                                 std::nullopt, nullptr);
  const auto b = conversational_representations(f.lvm, LvmMode::kDecode, role, topical,
                                                 std::nullopt, nullptr);
  const auto prior = prenet_forward(f.lvm, LvmKind::kRole, role);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.v_role.at(i), prior.mu.at(i));
    EXPECT_EQ(a.v_topical.at(i), b.v_topical.at(i));
  }
  EXPECT_FALSE(a.kl_role.defined());
  EXPECT_FALSE(a.kl_topical.defined());
}

TEST(ConversationalReps, TrainingSamplesPosteriorAndReportsKl) {
  Fixture f;
  const Tensor role = f.feats(2), topical = f.feats(3);
  const std::vector<TokenId> y{4, 8, 9};
  Rng rng(3);
  const auto reps = conversational_representations(f.lvm, LvmMode::kTrain, role, topical,
                                                    std::span<const TokenId>(y), &rng);
  ASSERT_TRUE(reps.kl_role.defined());
  ASSERT_TRUE(reps.kl_topical.defined());
  EXPECT_GE(reps.kl_role.item(), 0.0);
  EXPECT_GE(reps.kl_topical.item(), 0.0);
  EXPECT_EQ(reps.v_role.shape(), (Shape{4}));

  const auto role_only = conversational_representations(
      f.lvm, LvmMode::kTrain, role, Tensor(), std::span<const TokenId>(y), &rng);
  EXPECT_TRUE(role_only.v_role.defined());
  EXPECT_FALSE(role_only.v_topical.defined());
  EXPECT_FALSE(role_only.kl_topical.defined());
}

TEST(ConversationalReps, TrainingNeedsTranscriptAndRng) {
  Fixture f;
  const Tensor role = f.feats(2);
  const std::vector<TokenId> y{4};
  Rng rng(1);
  EXPECT_THROW(conversational_representations(f.lvm, LvmMode::kTrain, role, Tensor(),
                                              std::nullopt, &rng),
               UsageError);
  EXPECT_THROW(conversational_representations(f.lvm, LvmMode::kTrain, role, Tensor(),
                                              std::span<const TokenId>(y), nullptr),
               UsageError);
}

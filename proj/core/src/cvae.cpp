#include "casr/cvae.hpp"

#include <string>

#include "casr/errors.hpp"
#include "casr/ops.hpp"

namespace casr {

namespace {

GaussianHead make_head(ParameterStore& store, const std::string& name,
                       std::size_t in, std::size_t d_z, Rng& rng) {
  return {make_linear(store, name + ".mu", in, d_z, rng),
          make_linear(store, name + ".sigma", in, d_z, rng)};
}

const GaussianHead& head_for(const LvmParams& lvm, LvmKind kind, bool posterior) {
  if (kind == LvmKind::kRole) return posterior ? lvm.role_postnet : lvm.role_prenet;
  return posterior ? lvm.topical_postnet : lvm.topical_prenet;
}

}  // namespace

LvmParams make_lvm(ParameterStore& store, const BlockDims& dims,
                   std::size_t text_blocks, std::size_t vocab, std::size_t d_z,
                   Rng& rng) {
  LvmParams p;
  p.text_embedding = store.normal("lvm.text.embedding", {vocab, dims.d}, 1.0, rng);
  for (std::size_t i = 0; i < text_blocks; ++i) {
    p.text_blocks.push_back(make_transformer_block(
        store, "lvm.text.block" + std::to_string(i), dims, rng));
  }
  p.role_prenet = make_head(store, "lvm.role.prenet", dims.d, d_z, rng);
  p.role_postnet = make_head(store, "lvm.role.postnet", 2 * dims.d, d_z, rng);
  p.topical_prenet = make_head(store, "lvm.topical.prenet", dims.d, d_z, rng);
  p.topical_postnet = make_head(store, "lvm.topical.postnet", 2 * dims.d, d_z, rng);
  p.no_context = store.normal("lvm.no_context", {dims.d}, 0.1, rng);
  return p;
}

Tensor lvm_text_encode(const LvmParams& lvm, std::span<const TokenId> text) {
  if (text.empty()) throw EmptyInputError("lvm_text_encode: empty text");
  std::vector<std::size_t> rows;
  rows.reserve(text.size());
  for (TokenId t : text) {
    if (t < 0 || static_cast<std::size_t>(t) >= lvm.text_embedding.dim(0)) {
      throw VocabularyError("lvm_text_encode: token " + std::to_string(t) +
                            " outside vocabulary of " +
                            std::to_string(lvm.text_embedding.dim(0)));
    }
    rows.push_back(static_cast<std::size_t>(t));
  }
  Tensor h = gather_rows(lvm.text_embedding, rows);
  for (const auto& block : lvm.text_blocks) h = transformer_block_forward(h, block);
  return h;
}

LatentGaussian gaussian_head_forward(const GaussianHead& head, const Tensor& input) {
  return {head.mu(input), softplus(head.sigma(input))};
}

LatentGaussian prenet_forward(const LvmParams& lvm, LvmKind kind,
                              const Tensor& context_feats) {
  return gaussian_head_forward(head_for(lvm, kind, false), mean_pool(context_feats));
}

LatentGaussian postnet_forward(const LvmParams& lvm, LvmKind kind,
                               const Tensor& context_feats,
                               const Tensor& y_k_feats) {
  const Tensor a = mean_pool(context_feats);
  const Tensor a_y = mean_pool(y_k_feats);
  const Tensor joint = reshape(concat_cols({reshape(a, {1, a.numel()}),
                                            reshape(a_y, {1, a_y.numel()})}),
                               {a.numel() + a_y.numel()});
  return gaussian_head_forward(head_for(lvm, kind, true), joint);
}

Tensor reparameterize(const LatentGaussian& g, const Tensor& eps) {
  return add(g.mu, mul(g.sigma, eps));
}

Tensor standard_normal(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = sample_normal(rng);
  return Tensor({n}, std::move(v));
}

ConversationalReps conversational_representations(
    const LvmParams& lvm, LvmMode mode, const Tensor& role_feats,
    const Tensor& topical_feats, std::optional<std::span<const TokenId>> y_k,
    Rng* rng) {
  ConversationalReps reps;
  if (mode == LvmMode::kDecode) {
    if (role_feats.defined()) reps.v_role = prenet_forward(lvm, LvmKind::kRole, role_feats).mu;
    if (topical_feats.defined()) {
      reps.v_topical = prenet_forward(lvm, LvmKind::kTopical, topical_feats).mu;
    }
    return reps;
  }
  if (!y_k || y_k->empty()) {
    throw UsageError("conversational_representations: training needs the transcript");
  }
  if (rng == nullptr) throw UsageError("conversational_representations: training needs an rng");
  const Tensor y_feats = lvm_text_encode(lvm, *y_k);
  auto run = [&](LvmKind kind, const Tensor& feats, Tensor& v, Tensor& kl) {
    const LatentGaussian prior = prenet_forward(lvm, kind, feats);
    const LatentGaussian post = postnet_forward(lvm, kind, feats, y_feats);
    v = reparameterize(post, standard_normal(post.mu.numel(), *rng));
    kl = gaussian_kl(post, prior);
  };
  if (role_feats.defined()) run(LvmKind::kRole, role_feats, reps.v_role, reps.kl_role);
  if (topical_feats.defined()) {
    run(LvmKind::kTopical, topical_feats, reps.v_topical, reps.kl_topical);
  }
  return reps;
}

}  // namespace casr

// Role and topical latent variational modules: shared LVM text encoder,
// prenet (prior) and postnet (posterior) diagonal Gaussians, and the
// train/decode representation paths.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "casr/blocks.hpp"
#include "casr/objectives.hpp"
#include "casr/parameters.hpp"

namespace casr {

struct GaussianHead {
  Linear mu;
  Linear sigma;  // pre-activation; softplus is applied on top
};

struct LvmParams {
  Tensor text_embedding;  // [V, d]
  std::vector<TransformerBlockParams> text_blocks;
  GaussianHead role_prenet;
  GaussianHead role_postnet;
  GaussianHead topical_prenet;
  GaussianHead topical_postnet;
  Tensor no_context;  // [d], stands in for an empty context window
};

LvmParams make_lvm(ParameterStore& store, const BlockDims& dims,
                   std::size_t text_blocks, std::size_t vocab, std::size_t d_z,
                   Rng& rng);

enum class LvmKind { kRole, kTopical };

Tensor lvm_text_encode(const LvmParams& lvm, std::span<const TokenId> text);

LatentGaussian gaussian_head_forward(const GaussianHead& head, const Tensor& input);
LatentGaussian prenet_forward(const LvmParams& lvm, LvmKind kind,
                              const Tensor& context_feats);
LatentGaussian postnet_forward(const LvmParams& lvm, LvmKind kind,
                               const Tensor& context_feats,
                               const Tensor& y_k_feats);

// mu + sigma * eps.
Tensor reparameterize(const LatentGaussian& g, const Tensor& eps);
// Standard-normal noise of the given width.
Tensor standard_normal(std::size_t n, Rng& rng);

enum class LvmMode { kTrain, kDecode };

struct ConversationalReps {
  Tensor v_role;  // undefined when the role module is disabled
  Tensor v_topical;
  Tensor kl_role;  // training only
  Tensor kl_topical;
};

// Context features are undefined for disabled components. Training draws the
// latent from the postnet and pairs it with the prenet through a KL term;
// decoding uses the prenet mean.
ConversationalReps conversational_representations(
    const LvmParams& lvm, LvmMode mode, const Tensor& role_feats,
    const Tensor& topical_feats, std::optional<std::span<const TokenId>> y_k,
    Rng* rng);

}  // namespace casr

// Layers and blocks: feed-forward, attention, convolution module, Conformer,
// Transformer encoder and conditional decoder blocks.
//
// Parameters live in a ParameterStore; the *Params structs below hold shared
// handles into it, so a block can be rebuilt, saved and restored by name.
#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "casr/ops.hpp"
#include "casr/parameters.hpp"

namespace casr {

struct BlockDims {
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 64;
  std::size_t conv_kernel = 5;
  std::size_t rel_clip = 64;

  void validate() const;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

Linear make_linear(ParameterStore& store, const std::string& name,
                   std::size_t in, std::size_t out, Rng& rng);

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  Tensor operator()(const Tensor& x) const {
    return layer_norm(x, gamma, beta, eps);
  }
};

LayerNormParams make_layer_norm(ParameterStore& store, const std::string& name,
                                std::size_t d);

struct FeedForwardParams {
  Linear in;
  Linear out;
};

FeedForwardParams make_feed_forward(ParameterStore& store,
                                    const std::string& name, std::size_t d,
                                    std::size_t hidden, Rng& rng);

// linear -> swish -> linear. Residual and scaling belong to the caller.
Tensor ffn_forward(const Tensor& x, const FeedForwardParams& p);

struct AttentionParams {
  Linear query;
  Linear key;
  Linear value;
  Linear out;
  Tensor rel_bias;  // [heads, 2 * clip + 1]; undefined for cross-attention
  std::size_t heads = 1;
  std::size_t clip = 64;
};

AttentionParams make_attention(ParameterStore& store, const std::string& name,
                               const BlockDims& dims, Rng& rng,
                               bool relative_position);

// Self-attention with a learned, distance-clipped relative-position bias per
// head. Disallowed mask entries get -inf logits before the softmax.
Tensor mhsa_forward(const Tensor& x, const AttentionParams& p,
                    const AttentionMask* mask = nullptr,
                    bool use_position_bias = true);

// Cross-attention of `query` rows over `memory` rows (no position bias).
Tensor mha_forward(const Tensor& query, const Tensor& memory,
                   const AttentionParams& p);

struct ConvModuleParams {
  LayerNormParams norm_in;
  Linear pointwise_in;  // d -> 2d, split into value and gate halves
  Tensor depthwise;     // [kernel, d]
  LayerNormParams norm_mid;
  Linear pointwise_out;
};

ConvModuleParams make_conv_module(ParameterStore& store,
                                  const std::string& name,
                                  const BlockDims& dims, Rng& rng);

// norm -> pointwise(2d) -> GLU -> depthwise conv -> norm -> swish -> pointwise,
// plus the residual input.
Tensor conv_module_forward(const Tensor& x, const ConvModuleParams& p);

struct ConformerBlockParams {
  LayerNormParams ffn1_norm;
  FeedForwardParams ffn1;
  LayerNormParams attn_norm;
  AttentionParams mhsa;
  ConvModuleParams conv;
  LayerNormParams ffn2_norm;
  FeedForwardParams ffn2;
  LayerNormParams final_norm;
};

ConformerBlockParams make_conformer_block(ParameterStore& store,
                                          const std::string& name,
                                          const BlockDims& dims, Rng& rng);

// x1 = x + FFN(x)/2; x2 = MHSA(x1) + x1; x3 = Conv(x2); out = LN(FFN(x3)/2 + x3)
Tensor conformer_block_forward(const Tensor& x, const ConformerBlockParams& p,
                               bool use_position_bias = true);

struct TransformerBlockParams {
  LayerNormParams attn_norm;
  AttentionParams attn;
  LayerNormParams ffn_norm;
  FeedForwardParams ffn;
  LayerNormParams final_norm;
};

TransformerBlockParams make_transformer_block(ParameterStore& store,
                                              const std::string& name,
                                              const BlockDims& dims, Rng& rng);

// Pre-norm self-attention and FFN sublayers with residuals, then a final norm.
Tensor transformer_block_forward(const Tensor& x,
                                 const TransformerBlockParams& p,
                                 const AttentionMask* mask = nullptr,
                                 bool use_position_bias = true);

enum class DecoderMode { kBaseline, kAttentionCondition };

struct DecoderBlockParams {
  LayerNormParams self_norm;
  AttentionParams self_attn;
  LayerNormParams source_norm;
  AttentionParams source_attn;
  std::optional<LayerNormParams> context_norm;
  std::optional<AttentionParams> context_attn;
  LayerNormParams ffn_norm;
  FeedForwardParams ffn;
};

DecoderBlockParams make_decoder_block(ParameterStore& store,
                                      const std::string& name,
                                      const BlockDims& dims, Rng& rng,
                                      bool with_context_attention);

// Baseline:   q1 = MHSA(q) + q;  p = MHA(q1, z) + q1
// Attention:  additionally p' = MHA(p, v_context) + p
// followed by a residual FFN. Self-attention is causal over target positions.
Tensor decoder_block_forward(const Tensor& q, const Tensor& z,
                             const Tensor* v_context,
                             const DecoderBlockParams& p, DecoderMode mode);

}  // namespace casr

#include "casr/blocks.hpp"

#include <cmath>

#include "casr/errors.hpp"

namespace casr {

void BlockDims::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("model width " + std::to_string(d) +
                      " is not divisible by head count " +
                      std::to_string(heads));
  }
  if (conv_kernel % 2 == 0) {
    throw ConfigError("depthwise kernel length must be odd, got " +
                      std::to_string(conv_kernel));
  }
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.rank() == 1) {
    return reshape(add_row(matmul(reshape(x, {1, x.numel()}), weight), bias),
                   {weight.dim(1)});
  }
  return add_row(matmul(x, weight), bias);
}

Linear make_linear(ParameterStore& store, const std::string& name,
                   std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = store.normal(name + ".w", {in, out},
                          1.0 / std::sqrt(static_cast<double>(in)), rng);
  l.bias = store.zeros(name + ".b", {out});
  return l;
}

LayerNormParams make_layer_norm(ParameterStore& store, const std::string& name,
                                std::size_t d) {
  LayerNormParams p;
  p.gamma = store.constant(name + ".gamma", {d}, 1.0);
  p.beta = store.zeros(name + ".beta", {d});
  return p;
}

FeedForwardParams make_feed_forward(ParameterStore& store,
                                    const std::string& name, std::size_t d,
                                    std::size_t hidden, Rng& rng) {
  return {make_linear(store, name + ".in", d, hidden, rng),
          make_linear(store, name + ".out", hidden, d, rng)};
}

Tensor ffn_forward(const Tensor& x, const FeedForwardParams& p) {
  if (x.cols() != p.in.in_features()) {
    throw ShapeError("ffn: input " + shape_to_string(x.shape()) +
                     " does not match width " +
                     std::to_string(p.in.in_features()));
  }
  return p.out(swish(p.in(x)));
}

AttentionParams make_attention(ParameterStore& store, const std::string& name,
                               const BlockDims& dims, Rng& rng,
                               bool relative_position) {
  dims.validate();
  AttentionParams p;
  p.query = make_linear(store, name + ".q", dims.d, dims.d, rng);
  p.key = make_linear(store, name + ".k", dims.d, dims.d, rng);
  p.value = make_linear(store, name + ".v", dims.d, dims.d, rng);
  p.out = make_linear(store, name + ".o", dims.d, dims.d, rng);
  p.heads = dims.heads;
  p.clip = dims.rel_clip;
  if (relative_position) {
    p.rel_bias = store.zeros(name + ".rel_bias", {dims.heads, 2 * dims.rel_clip + 1});
  }
  return p;
}

namespace {

Tensor attend(const Tensor& query_in, const Tensor& memory_in,
              const AttentionParams& p, const AttentionMask* mask,
              bool use_position_bias) {
  const std::size_t d = p.query.out_features();
  if (query_in.cols() != p.query.in_features() ||
      memory_in.cols() != p.key.in_features()) {
    throw ShapeError("attention: inputs " + shape_to_string(query_in.shape()) +
                     " / " + shape_to_string(memory_in.shape()) +
                     " do not match width " + std::to_string(d));
  }
  const std::size_t tq = query_in.dim(0), tk = memory_in.dim(0);
  if (mask && (mask->rows != tq || mask->cols != tk)) {
    throw ShapeError("attention mask [" + std::to_string(mask->rows) + "," +
                     std::to_string(mask->cols) + "] does not match [" +
                     std::to_string(tq) + "," + std::to_string(tk) + "]");
  }
  const Tensor q = p.query(query_in);
  const Tensor k = p.key(memory_in);
  const Tensor v = p.value(memory_in);
  const std::size_t dk = d / p.heads;
  const double scaling = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const std::size_t lo = h * dk, hi = lo + dk;
    Tensor scores = scale(matmul_transposed(slice_cols(q, lo, hi),
                                            slice_cols(k, lo, hi)),
                          scaling);
    if (use_position_bias && p.rel_bias.defined()) {
      scores = add(scores, relative_bias(p.rel_bias, h, tq, tk, p.clip));
    }
    if (mask) scores = masked_fill(scores, *mask);
    heads.push_back(matmul(softmax(scores, -1), slice_cols(v, lo, hi)));
  }
  return p.out(p.heads == 1 ? heads.front() : concat_cols(heads));
}

}  // namespace

Tensor mhsa_forward(const Tensor& x, const AttentionParams& p,
                    const AttentionMask* mask, bool use_position_bias) {
  return attend(x, x, p, mask, use_position_bias);
}

Tensor mha_forward(const Tensor& query, const Tensor& memory,
                   const AttentionParams& p) {
  return attend(query, memory, p, nullptr, false);
}

ConvModuleParams make_conv_module(ParameterStore& store,
                                  const std::string& name,
                                  const BlockDims& dims, Rng& rng) {
  dims.validate();
  ConvModuleParams p;
  p.norm_in = make_layer_norm(store, name + ".norm_in", dims.d);
  p.pointwise_in = make_linear(store, name + ".pw_in", dims.d, 2 * dims.d, rng);
  p.depthwise = store.normal(
      name + ".depthwise", {dims.conv_kernel, dims.d},
      1.0 / std::sqrt(static_cast<double>(dims.conv_kernel)), rng);
  p.norm_mid = make_layer_norm(store, name + ".norm_mid", dims.d);
  p.pointwise_out = make_linear(store, name + ".pw_out", dims.d, dims.d, rng);
  return p;
}

Tensor conv_module_forward(const Tensor& x, const ConvModuleParams& p) {
  const std::size_t d = p.pointwise_out.out_features();
  if (x.rank() != 2 || x.cols() != d) {
    throw ShapeError("conv module: input " + shape_to_string(x.shape()) +
                     " does not match width " + std::to_string(d));
  }
  const Tensor expanded = p.pointwise_in(p.norm_in(x));
  const Tensor gated = mul(slice_cols(expanded, 0, d),
                           sigmoid(slice_cols(expanded, d, 2 * d)));
  const Tensor conv = conv1d_depthwise(gated, p.depthwise);
  return add(x, p.pointwise_out(swish(p.norm_mid(conv))));
}

ConformerBlockParams make_conformer_block(ParameterStore& store,
                                          const std::string& name,
                                          const BlockDims& dims, Rng& rng) {
  dims.validate();
  ConformerBlockParams p;
  p.ffn1_norm = make_layer_norm(store, name + ".ffn1_norm", dims.d);
  p.ffn1 = make_feed_forward(store, name + ".ffn1", dims.d, dims.ffn_hidden, rng);
  p.attn_norm = make_layer_norm(store, name + ".attn_norm", dims.d);
  p.mhsa = make_attention(store, name + ".mhsa", dims, rng, true);
  p.conv = make_conv_module(store, name + ".conv", dims, rng);
  p.ffn2_norm = make_layer_norm(store, name + ".ffn2_norm", dims.d);
  p.ffn2 = make_feed_forward(store, name + ".ffn2", dims.d, dims.ffn_hidden, rng);
  p.final_norm = make_layer_norm(store, name + ".final_norm", dims.d);
  return p;
}

Tensor conformer_block_forward(const Tensor& x, const ConformerBlockParams& p,
                               bool use_position_bias) {
  const Tensor x1 = add(x, scale(ffn_forward(p.ffn1_norm(x), p.ffn1), 0.5));
  const Tensor x2 =
      add(mhsa_forward(p.attn_norm(x1), p.mhsa, nullptr, use_position_bias), x1);
  const Tensor x3 = conv_module_forward(x2, p.conv);
  return p.final_norm(add(scale(ffn_forward(p.ffn2_norm(x3), p.ffn2), 0.5), x3));
}

TransformerBlockParams make_transformer_block(ParameterStore& store,
                                              const std::string& name,
                                              const BlockDims& dims, Rng& rng) {
  dims.validate();
  TransformerBlockParams p;
  p.attn_norm = make_layer_norm(store, name + ".attn_norm", dims.d);
  p.attn = make_attention(store, name + ".attn", dims, rng, true);
  p.ffn_norm = make_layer_norm(store, name + ".ffn_norm", dims.d);
  p.ffn = make_feed_forward(store, name + ".ffn", dims.d, dims.ffn_hidden, rng);
  p.final_norm = make_layer_norm(store, name + ".final_norm", dims.d);
  return p;
}

Tensor transformer_block_forward(const Tensor& x,
                                 const TransformerBlockParams& p,
                                 const AttentionMask* mask,
                                 bool use_position_bias) {
  const Tensor h =
      add(x, mhsa_forward(p.attn_norm(x), p.attn, mask, use_position_bias));
  return p.final_norm(add(h, ffn_forward(p.ffn_norm(h), p.ffn)));
}

DecoderBlockParams make_decoder_block(ParameterStore& store,
                                      const std::string& name,
                                      const BlockDims& dims, Rng& rng,
                                      bool with_context_attention) {
  dims.validate();
  DecoderBlockParams p;
  p.self_norm = make_layer_norm(store, name + ".self_norm", dims.d);
  p.self_attn = make_attention(store, name + ".self_attn", dims, rng, true);
  p.source_norm = make_layer_norm(store, name + ".src_norm", dims.d);
  p.source_attn = make_attention(store, name + ".src_attn", dims, rng, false);
  if (with_context_attention) {
    p.context_norm = make_layer_norm(store, name + ".ctx_norm", dims.d);
    p.context_attn = make_attention(store, name + ".ctx_attn", dims, rng, false);
  }
  p.ffn_norm = make_layer_norm(store, name + ".ffn_norm", dims.d);
  p.ffn = make_feed_forward(store, name + ".ffn", dims.d, dims.ffn_hidden, rng);
  return p;
}

Tensor decoder_block_forward(const Tensor& q, const Tensor& z,
                             const Tensor* v_context,
                             const DecoderBlockParams& p, DecoderMode mode) {
  if (mode == DecoderMode::kAttentionCondition &&
      (v_context == nullptr || !v_context->defined())) {
    throw ConfigError("attention-condition decoder block needs a context input");
  }
  if (mode == DecoderMode::kAttentionCondition && !p.context_attn) {
    throw ConfigError("decoder block was built without context attention");
  }
  const AttentionMask causal = AttentionMask::causal(q.dim(0));
  const Tensor q1 = add(mhsa_forward(p.self_norm(q), p.self_attn, &causal), q);
  Tensor out = add(mha_forward(p.source_norm(q1), z, p.source_attn), q1);
  if (mode == DecoderMode::kAttentionCondition) {
    out = add(mha_forward((*p.context_norm)(out), *v_context, *p.context_attn),
              out);
  }
  return add(out, ffn_forward(p.ffn_norm(out), p.ffn));
}

}  // namespace casr

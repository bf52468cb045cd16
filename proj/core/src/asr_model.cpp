#include "casr/asr_model.hpp"

#include <algorithm>
#include <cmath>

#include "casr/errors.hpp"
#include "casr/ops.hpp"

namespace casr {

namespace {

bool attention_fusion(const AsrConfig& c) {
  return c.context_mode != ContextMode::kNone && c.fusion == FusionStrategy::kAttention;
}

Tensor as_row(const Tensor& v) { return reshape(v, {1, v.numel()}); }

std::vector<TokenId> concat_texts(const Conversation& conv, const ContextWindow& w) {
  std::vector<TokenId> out;
  for (std::size_t i : w.indices) {
    const auto& t = conv.utterances.at(i).text;
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

}  // namespace

ExtractorModel build_extractor(const AsrConfig& config, std::uint64_t seed) {
  config.validate();
  ExtractorModel m;
  m.config = config;
  m.stubs = make_stub_encoders(m.store, config.d_raw, config.d, config.vocab, seed);
  Rng rng(derive_seed(seed, "cme"));
  m.cme = make_cme(m.store, config.dims(), config.cme_blocks, config.vocab, rng);
  return m;
}

AsrModel build_asr_model(const AsrConfig& config, std::uint64_t seed) {
  config.validate();
  const BlockDims dims = config.dims();
  AsrModel m;
  m.config = config;
  m.stubs = make_stub_encoders(m.store, config.d_raw, config.d, config.vocab, seed);
  if (config.needs_cme()) {
    Rng rng(derive_seed(seed, "cme"));
    m.cme = make_cme(m.store, dims, config.cme_blocks, config.vocab, rng);
  }
  {
    Rng rng(derive_seed(seed, "encoder"));
    for (std::size_t i = 0; i < config.encoder_blocks; ++i) {
      m.encoder.push_back(
          make_conformer_block(m.store, "encoder.block" + std::to_string(i), dims, rng));
    }
  }
  {
    Rng rng(derive_seed(seed, "decoder"));
    m.embedding = m.store.normal("decoder.embedding", {config.vocab, config.d}, 1.0, rng);
    for (std::size_t i = 0; i < config.decoder_blocks; ++i) {
      m.decoder.push_back(make_decoder_block(
          m.store, "decoder.block" + std::to_string(i), dims, rng, false));
    }
    m.final_norm = make_layer_norm(m.store, "decoder.final_norm", config.d);
    m.output = make_linear(m.store, "decoder.output", config.d, config.vocab, rng);
  }
  if (config.context_mode == ContextMode::kNone) return m;

  if (config.fusion == FusionStrategy::kAttention) {
    Rng rng(derive_seed(seed, "fusion.attention"));
    for (std::size_t i = 0; i < config.decoder_blocks; ++i) {
      const std::string name = "decoder.block" + std::to_string(i);
      m.decoder[i].context_norm = make_layer_norm(m.store, name + ".ctx_norm", config.d);
      m.decoder[i].context_attn =
          make_attention(m.store, name + ".ctx_attn", dims, rng, false);
    }
  } else {
    // W_trans sees [pooled context; q]. The q block starts as the identity so
    // the stage-1 decoder output survives the new layer.
    Rng rng(derive_seed(seed, "fusion.linear"));
    const std::size_t d = config.d;
    std::vector<double> w(2 * d * d, 0.0);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(2 * d));
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) w[r * d + c] = sample_normal(rng, 0.0, stddev);
    for (std::size_t i = 0; i < d; ++i) w[(d + i) * d + i] = 1.0;
    Linear l;
    l.weight = m.store.add("fusion.w_trans", Tensor({2 * d, d}, std::move(w), true));
    l.bias = m.store.zeros("fusion.b_trans", {d});
    m.fusion = l;
  }
  if (config.uses_cvae()) {
    Rng rng(derive_seed(seed, "lvm"));
    m.lvm = make_lvm(m.store, dims, config.lvm_blocks, config.vocab, config.d_z, rng);
    m.latent_proj = make_linear(m.store, "fusion.latent_proj", config.d_z, config.d, rng);
  }
  return m;
}

Tensor encode(const AsrModel& model, const Tensor& frames) {
  Tensor h = model.stubs.speech(frames);
  for (const auto& block : model.encoder) h = conformer_block_forward(h, block);
  return h;
}

Tensor assemble_v_context(const AsrModel& model, ContextMode mode,
                          const Tensor& s_context, const Tensor& v_role,
                          const Tensor& v_topical) {
  if (mode == ContextMode::kNone) {
    throw ConfigError("assemble_v_context: context mode none has no context");
  }
  const bool crm = mode == ContextMode::kCrm || mode == ContextMode::kCvaeCrm;
  const bool cvae = mode == ContextMode::kCvae || mode == ContextMode::kCvaeCrm;
  std::vector<Tensor> parts;
  if (cvae) {
    if (!v_role.defined() && !v_topical.defined()) {
      throw ConfigError("assemble_v_context: cvae mode needs a role or topical latent");
    }
    if (!model.latent_proj) {
      throw ConfigError("assemble_v_context: model has no latent projection");
    }
    if (v_role.defined()) parts.push_back(as_row((*model.latent_proj)(v_role)));
    if (v_topical.defined()) parts.push_back(as_row((*model.latent_proj)(v_topical)));
  }
  if (crm) {
    if (!s_context.defined()) {
      throw ConfigError("assemble_v_context: crm mode needs S_context");
    }
    // Linear fusion pools V_context anyway; summarizing S_context first keeps
    // its frames from outweighing the latent rows.
    parts.push_back(model.config.fusion == FusionStrategy::kLinear ? as_row(mean_pool(s_context))
                                                                    : s_context);
  }
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

Tensor decode_forward(const AsrModel& model, const Tensor& z,
                      const Tensor& v_context, std::span<const TokenId> inputs) {
  const AsrConfig& c = model.config;
  if (inputs.empty()) throw EmptyInputError("decode_forward: no decoder inputs");
  std::vector<std::size_t> rows;
  rows.reserve(inputs.size());
  for (TokenId t : inputs) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab) {
      throw VocabularyError("decode_forward: token " + std::to_string(t) +
                            " outside vocabulary");
    }
    rows.push_back(static_cast<std::size_t>(t));
  }
  const bool with_context = c.context_mode != ContextMode::kNone;
  if (with_context && !v_context.defined()) {
    throw ConfigError("decode_forward: context mode " + to_string(c.context_mode) +
                      " needs V_context");
  }
  const DecoderMode mode =
      attention_fusion(c) ? DecoderMode::kAttentionCondition : DecoderMode::kBaseline;
  Tensor q = gather_rows(model.embedding, rows);
  for (const auto& block : model.decoder) {
    q = decoder_block_forward(q, z, with_context ? &v_context : nullptr, block, mode);
  }
  Tensor g = model.final_norm(q);
  if (with_context && c.fusion == FusionStrategy::kLinear) {
    const Tensor pooled = as_row(mean_pool(v_context));
    const std::vector<std::size_t> zeros(g.rows(), 0);
    g = tanh((*model.fusion)(concat_cols({gather_rows(pooled, zeros), g})));
  }
  return model.output(g);
}

std::vector<TokenId> greedy_decode(const AsrModel& model, const Tensor& z,
                                   const Tensor& v_context, std::size_t max_len) {
  NoGradGuard guard;
  std::vector<TokenId> inputs{SpecialTokens::kBos};
  std::vector<TokenId> out;
  while (out.size() < max_len) {
    const Tensor logits = decode_forward(model, z, v_context, inputs);
    const auto data = logits.data();
    const std::size_t v = logits.cols();
    const double* last = data.data() + (logits.rows() - 1) * v;
    TokenId best = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (last[j] > last[best]) best = static_cast<TokenId>(j);
    if (best == SpecialTokens::kEos) break;
    out.push_back(best);
    inputs.push_back(best);
  }
  return out;
}

std::size_t edit_distance(std::span<const TokenId> ref, std::span<const TokenId> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double cer(std::span<const TokenId> ref, std::span<const TokenId> hyp) {
  if (ref.empty()) throw EmptyInputError("cer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

ContextCache::ContextCache(const AsrModel& model, const std::vector<Conversation>& corpus)
    : model_(model), corpus_(corpus) {
  entries_.resize(corpus.size());
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    entries_[c].resize(corpus[c].utterances.size());
  }
}

UtteranceContext ContextCache::get(std::size_t conversation, std::size_t k) {
  const AsrConfig& c = model_.config;
  const Conversation& conv = corpus_.at(conversation);
  UtteranceContext ctx;
  ctx.crm_window = build_crm_context(k, c.crm_history);
  ctx.role_window = build_role_context(k, c.role_n);
  ctx.topical_window = build_topical_context(k, c.topical_n);
  if (c.context_mode == ContextMode::kNone) return ctx;

  Entry& e = entries_.at(conversation).at(k);
  const bool cross_modal = c.lvm_input == LvmInput::kCrossModal;
  if (!e.ready) {
    NoGradGuard guard;
    if (c.uses_crm()) {
      e.s_context = crm_infer(conv, ctx.crm_window, model_.stubs, *model_.cme, Tensor());
    }
    if (c.uses_cvae() && cross_modal) {
      auto pooled = [&](const ContextWindow& w) {
        if (w.empty()) return Tensor();
        return as_row(mean_pool(crm_infer(conv, w, model_.stubs, *model_.cme, Tensor())));
      };
      if (c.use_role) e.role_pooled = pooled(ctx.role_window);
      if (c.use_topical) e.topical_pooled = pooled(ctx.topical_window);
    }
    e.ready = true;
  }
  ctx.s_context = e.s_context;
  if (c.uses_cvae()) {
    auto feats = [&](const ContextWindow& w, const Tensor& cached) {
      if (w.empty()) return as_row(model_.lvm->no_context);
      if (cross_modal) return cached;
      return lvm_text_encode(*model_.lvm, concat_texts(conv, w));
    };
    if (c.use_role) ctx.role_feats = feats(ctx.role_window, e.role_pooled);
    if (c.use_topical) ctx.topical_feats = feats(ctx.topical_window, e.topical_pooled);
  }
  return ctx;
}

UtteranceLoss utterance_loss(const AsrModel& model, const Utterance& utt,
                             const UtteranceContext& ctx, double kl_weight, Rng& rng) {
  const AsrConfig& c = model.config;
  std::vector<TokenId> inputs{SpecialTokens::kBos};
  inputs.insert(inputs.end(), utt.text.begin(), utt.text.end());
  std::vector<TokenId> targets(utt.text.begin(), utt.text.end());
  targets.push_back(SpecialTokens::kEos);

  const Tensor z = encode(model, utt.frames);
  UtteranceLoss out;
  Tensor v_context;
  ConversationalReps reps;
  if (c.context_mode != ContextMode::kNone) {
    if (c.uses_cvae()) {
      reps = conversational_representations(*model.lvm, LvmMode::kTrain, ctx.role_feats,
                                            ctx.topical_feats,
                                            std::span<const TokenId>(utt.text), &rng);
    }
    v_context = assemble_v_context(model, c.context_mode, ctx.s_context, reps.v_role,
                                   reps.v_topical);
  }
  const Tensor logits = decode_forward(model, z, v_context, inputs);
  const Tensor ce = cross_entropy_loss(logits, targets, SpecialTokens::kPad);
  LossWeights w;
  w.kl_weight = kl_weight;
  out.loss = final_loss(ce, reps.kl_role, reps.kl_topical, w);
  out.ce = ce.item();
  if (reps.kl_role.defined()) {
    out.kl_role = reps.kl_role.item();
    out.has_kl_role = true;
  }
  if (reps.kl_topical.defined()) {
    out.kl_topical = reps.kl_topical.item();
    out.has_kl_topical = true;
  }
  return out;
}

Tensor decode_v_context(const AsrModel& model, const UtteranceContext& ctx) {
  const AsrConfig& c = model.config;
  if (c.context_mode == ContextMode::kNone) return Tensor();
  ConversationalReps reps;
  if (c.uses_cvae()) {
    reps = conversational_representations(*model.lvm, LvmMode::kDecode, ctx.role_feats,
                                          ctx.topical_feats, std::nullopt, nullptr);
  }
  return assemble_v_context(model, c.context_mode, ctx.s_context, reps.v_role,
                            reps.v_topical);
}

}  // namespace casr

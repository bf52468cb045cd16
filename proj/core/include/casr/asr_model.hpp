// Conversational recognizer: stub-fed Conformer encoder, context assembly for
// the CRM / CVAE / CVAE+CRM variants, conditional decoder with attention or
// linear fusion, greedy decoding and character error rate.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "casr/blocks.hpp"
#include "casr/config.hpp"
#include "casr/conversation.hpp"
#include "casr/cvae.hpp"
#include "casr/extractor.hpp"
#include "casr/parameters.hpp"

namespace casr {

// Stubs and cross-modal encoder: everything extractor pretraining touches.
struct ExtractorModel {
  AsrConfig config;
  ParameterStore store;
  StubEncoders stubs;
  CmeParams cme;
};

ExtractorModel build_extractor(const AsrConfig& config, std::uint64_t seed);

struct AsrModel {
  AsrConfig config;
  ParameterStore store;
  StubEncoders stubs;
  std::optional<CmeParams> cme;
  std::vector<ConformerBlockParams> encoder;
  Tensor embedding;  // decoder token embedding [V, d]
  std::vector<DecoderBlockParams> decoder;
  LayerNormParams final_norm;
  Linear output;  // d -> V
  std::optional<LvmParams> lvm;
  std::optional<Linear> latent_proj;  // d_z -> d
  std::optional<Linear> fusion;       // W_trans, 2d -> d (linear fusion)
};

// Parameters are drawn from per-component streams of `seed`, so models that
// differ only in context configuration share their common weights.
AsrModel build_asr_model(const AsrConfig& config, std::uint64_t seed);

Tensor encode(const AsrModel& model, const Tensor& frames);

// Time-axis concatenation [V_role, V_topical, S_context], omitting absent
// parts; latent vectors go through the d_z -> d projection. Under linear
// fusion S_context enters as its row mean.
Tensor assemble_v_context(const AsrModel& model, ContextMode mode,
                          const Tensor& s_context, const Tensor& v_role,
                          const Tensor& v_topical);

// Teacher-forced logits [u, V] for decoder inputs (starting with bos).
// v_context is ignored (and may be undefined) in context mode none.
Tensor decode_forward(const AsrModel& model, const Tensor& z,
                      const Tensor& v_context, std::span<const TokenId> inputs);

std::vector<TokenId> greedy_decode(const AsrModel& model, const Tensor& z,
                                   const Tensor& v_context, std::size_t max_len);

std::size_t edit_distance(std::span<const TokenId> ref, std::span<const TokenId> hyp);
// edit_distance / |ref|; an empty reference raises EmptyInputError.
double cer(std::span<const TokenId> ref, std::span<const TokenId> hyp);

// Context features for utterance k of a conversation. Undefined members are
// disabled by the configuration. role/topical features are pooled to [1, d]
// when they come from the frozen cross-modal encoder.
struct UtteranceContext {
  ContextWindow crm_window;
  ContextWindow role_window;
  ContextWindow topical_window;
  Tensor s_context;
  Tensor role_feats;
  Tensor topical_feats;
};

// Memoizes the frozen cross-modal features per utterance so that training
// and evaluation only run the CME once per context window.
class ContextCache {
 public:
  ContextCache(const AsrModel& model, const std::vector<Conversation>& corpus);

  UtteranceContext get(std::size_t conversation, std::size_t k);

 private:
  struct Entry {
    bool ready = false;
    Tensor s_context;
    Tensor role_pooled;
    Tensor topical_pooled;
  };
  const AsrModel& model_;
  const std::vector<Conversation>& corpus_;
  std::vector<std::vector<Entry>> entries_;
};

struct UtteranceLoss {
  Tensor loss;  // differentiable final loss
  double ce = 0.0;
  double kl_role = 0.0;
  double kl_topical = 0.0;
  bool has_kl_role = false;
  bool has_kl_topical = false;
};

// Teacher-forced training loss for one utterance. In CVAE modes the latent is
// sampled from the postnet with `rng`.
UtteranceLoss utterance_loss(const AsrModel& model, const Utterance& utt,
                             const UtteranceContext& ctx, double kl_weight, Rng& rng);

// Deterministic decode-path context: prenet means for the latents.
Tensor decode_v_context(const AsrModel& model, const UtteranceContext& ctx);

}  // namespace casr

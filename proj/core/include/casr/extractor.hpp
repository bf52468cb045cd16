// Cross-modal extractor: frozen stub encoders, the cross-modal encoder (CME),
// token- and modal-level masking, pretraining step and speech-only inference.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "casr/blocks.hpp"
#include "casr/conversation.hpp"
#include "casr/objectives.hpp"
#include "casr/parameters.hpp"

namespace casr {

// Fixed maps standing in for pretrained speech and text models. Registered
// as non-trainable parameters so they persist with checkpoints.
struct StubEncoders {
  Tensor speech_w;        // [d_raw, d]
  Tensor speech_b;        // [d]
  Tensor jitter;          // [rows, d], added to frame i as jitter[i % rows]
  Tensor text_embedding;  // [V, d]

  Tensor speech(const Tensor& frames) const;               // [t, d_raw] -> [t, d]
  Tensor text(std::span<const TokenId> tokens) const;       // [s] -> [s, d]
  std::vector<Tensor> tensors() const;
};

StubEncoders make_stub_encoders(ParameterStore& store, std::size_t d_raw,
                                std::size_t d, std::size_t vocab,
                                std::uint64_t seed);

struct CmeParams {
  std::vector<TransformerBlockParams> blocks;
  Tensor speech_type;  // modality-type embeddings, [d]
  Tensor text_type;
  Tensor speech_mask;  // learned token-mask vectors, [d]
  Tensor text_mask;
  Linear speech_head;  // masked-feature prediction heads, d -> d
  Linear text_head;
  Linear ctc_head;     // d -> V

  // Tensors updated during extractor pretraining.
  std::vector<Tensor> tensors() const;
};

CmeParams make_cme(ParameterStore& store, const BlockDims& dims,
                   std::size_t blocks, std::size_t vocab, Rng& rng);

enum class ModalMask { kNone, kTextMasked, kSpeechMasked };
enum class ModalOrder { kSpeechFirst, kTextFirst };

struct CrossModalBatch {
  Tensor speech;  // [t, d]
  Tensor text;    // [t, d], upsampled
  std::vector<bool> token_mask_speech;
  std::vector<bool> token_mask_text;
  ModalMask modal = ModalMask::kNone;
  ModalOrder order = ModalOrder::kSpeechFirst;
};

// Repeats row i of text_feats durations[i] times.
Tensor upsample_text(const Tensor& text_feats, std::span<const int> durations);

std::size_t token_mask_count(std::size_t t, double ratio);

struct TokenMaskResult {
  Tensor masked;
  std::vector<bool> mask;
};

// Replaces exactly token_mask_count(t, ratio) uniformly chosen rows by
// mask_vector.
TokenMaskResult apply_token_mask(const Tensor& x, double ratio,
                                 const Tensor& mask_vector, Rng& rng);

// With probability p picks one modality by a fair coin.
ModalMask draw_modal_mask(double p, Rng& rng);
// Zeroes the chosen modality in place of its features.
void apply_modal_mask(CrossModalBatch& batch, ModalMask mask);
void apply_modal_mask(CrossModalBatch& batch, double p, Rng& rng);

// [2t, d]: the two halves in batch.order, each with its type embedding, through
// the transformer stack.
Tensor cme_forward(const CrossModalBatch& batch, const CmeParams& cme,
                   bool use_position_bias = true);

struct ExtractorOptions {
  double mask_ratio = 0.3;
  double modal_prob = 0.3;
  double flip_prob = 0.5;
};

struct ExtractorStep {
  Tensor loss;  // differentiable total
  double ctc = 0.0;
  double speech_l1 = 0.0;  // 0 when no speech position was masked
  double text_l1 = 0.0;
  CrossModalBatch batch;
};

ExtractorStep extractor_train_step(const Utterance& utt, const StubEncoders& stubs,
                                   const CmeParams& cme, const LossWeights& w,
                                   Rng& rng, const ExtractorOptions& options = {});

// Speech-only cross-modal representation of a set of frame sequences. Text is
// replaced by the zero vector; an empty window yields no_context as [1, d].
Tensor crm_infer(const std::vector<Tensor>& frames_windows,
                 const StubEncoders& stubs, const CmeParams& cme,
                 const Tensor& no_context);
Tensor crm_infer(const Conversation& conv, const ContextWindow& window,
                 const StubEncoders& stubs, const CmeParams& cme,
                 const Tensor& no_context);

}  // namespace casr

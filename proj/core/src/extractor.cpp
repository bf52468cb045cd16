#include "casr/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "casr/errors.hpp"
#include "casr/ops.hpp"

namespace casr {

namespace {
constexpr std::size_t kJitterRows = 512;
constexpr double kJitterScale = 0.1;
}  // namespace

Tensor StubEncoders::speech(const Tensor& frames) const {
  if (frames.rank() != 2 || frames.cols() != speech_w.dim(0)) {
    throw ShapeError("speech stub: frames " + shape_to_string(frames.shape()) +
                     " do not have width " + std::to_string(speech_w.dim(0)));
  }
  std::vector<std::size_t> rows(frames.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i % jitter.dim(0);
  return add(add_row(matmul(frames, speech_w), speech_b), gather_rows(jitter, rows));
}

Tensor StubEncoders::text(std::span<const TokenId> tokens) const {
  std::vector<std::size_t> rows;
  rows.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= text_embedding.dim(0)) {
      throw VocabularyError("text stub: token " + std::to_string(t) +
                            " outside vocabulary");
    }
    rows.push_back(static_cast<std::size_t>(t));
  }
  return gather_rows(text_embedding, rows);
}

std::vector<Tensor> StubEncoders::tensors() const {
  return {speech_w, speech_b, jitter, text_embedding};
}

StubEncoders make_stub_encoders(ParameterStore& store, std::size_t d_raw,
                                std::size_t d, std::size_t vocab,
                                std::uint64_t seed) {
  Rng rng(derive_seed(seed, "stubs"));
  StubEncoders s;
  s.speech_w = store.normal("stub.speech.w", {d_raw, d},
                            1.0 / std::sqrt(static_cast<double>(d_raw)), rng, false);
  s.speech_b = store.normal("stub.speech.b", {d}, 0.1, rng, false);
  s.jitter = store.normal("stub.speech.jitter", {kJitterRows, d}, kJitterScale, rng,
                          false);
  s.text_embedding = store.normal("stub.text.embedding", {vocab, d}, 1.0, rng, false);
  return s;
}

std::vector<Tensor> CmeParams::tensors() const {
  std::vector<Tensor> out{speech_type, text_type, speech_mask, text_mask};
  for (const Linear* l : {&speech_head, &text_head, &ctc_head}) {
    out.push_back(l->weight);
    out.push_back(l->bias);
  }
  for (const auto& b : blocks) {
    for (const LayerNormParams* n : {&b.attn_norm, &b.ffn_norm, &b.final_norm}) {
      out.push_back(n->gamma);
      out.push_back(n->beta);
    }
    for (const Linear* l : {&b.attn.query, &b.attn.key, &b.attn.value, &b.attn.out,
                            &b.ffn.in, &b.ffn.out}) {
      out.push_back(l->weight);
      out.push_back(l->bias);
    }
    if (b.attn.rel_bias.defined()) out.push_back(b.attn.rel_bias);
  }
  return out;
}

CmeParams make_cme(ParameterStore& store, const BlockDims& dims,
                   std::size_t blocks, std::size_t vocab, Rng& rng) {
  CmeParams p;
  for (std::size_t i = 0; i < blocks; ++i) {
    p.blocks.push_back(
        make_transformer_block(store, "cme.block" + std::to_string(i), dims, rng));
  }
  p.speech_type = store.normal("cme.type.speech", {dims.d}, 0.1, rng);
  p.text_type = store.normal("cme.type.text", {dims.d}, 0.1, rng);
  p.speech_mask = store.normal("cme.mask.speech", {dims.d}, 0.1, rng);
  p.text_mask = store.normal("cme.mask.text", {dims.d}, 0.1, rng);
  p.speech_head = make_linear(store, "cme.head.speech", dims.d, dims.d, rng);
  p.text_head = make_linear(store, "cme.head.text", dims.d, dims.d, rng);
  p.ctc_head = make_linear(store, "cme.head.ctc", dims.d, vocab, rng);
  return p;
}

Tensor upsample_text(const Tensor& text_feats, std::span<const int> durations) {
  if (text_feats.rank() != 2 || text_feats.rows() != durations.size()) {
    throw AlignmentError("upsample_text: " + std::to_string(durations.size()) +
                         " durations for features " +
                         shape_to_string(text_feats.shape()));
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    if (durations[i] <= 0) {
      throw AlignmentError("upsample_text: duration " + std::to_string(durations[i]) +
                           " at position " + std::to_string(i) + " is not positive");
    }
    rows.insert(rows.end(), static_cast<std::size_t>(durations[i]), i);
  }
  return gather_rows(text_feats, rows);
}

std::size_t token_mask_count(std::size_t t, double ratio) {
  if (t == 0) return 0;
  const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(t)));
  return std::min(t, std::max<std::size_t>(1, n));
}

TokenMaskResult apply_token_mask(const Tensor& x, double ratio,
                                 const Tensor& mask_vector, Rng& rng) {
  const std::size_t t = x.rows();
  if (t == 0) throw EmptyInputError("apply_token_mask: no rows");
  std::vector<std::size_t> order(t);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = token_mask_count(t, ratio);
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(order[i], order[i + sample_index(rng, t - i)]);
  }
  std::vector<bool> mask(t, false);
  for (std::size_t i = 0; i < n; ++i) mask[order[i]] = true;
  return {where_rows(x, mask, mask_vector), mask};
}

ModalMask draw_modal_mask(double p, Rng& rng) {
  if (sample_uniform(rng) >= p) return ModalMask::kNone;
  return sample_uniform(rng) < 0.5 ? ModalMask::kTextMasked : ModalMask::kSpeechMasked;
}

void apply_modal_mask(CrossModalBatch& batch, ModalMask mask) {
  batch.modal = mask;
  if (mask == ModalMask::kTextMasked) {
    batch.text = Tensor::zeros(batch.text.shape());
  } else if (mask == ModalMask::kSpeechMasked) {
    batch.speech = Tensor::zeros(batch.speech.shape());
  }
}

void apply_modal_mask(CrossModalBatch& batch, double p, Rng& rng) {
  apply_modal_mask(batch, draw_modal_mask(p, rng));
}

Tensor cme_forward(const CrossModalBatch& batch, const CmeParams& cme,
                   bool use_position_bias) {
  if (batch.speech.shape() != batch.text.shape()) {
    throw ShapeError("cme: speech " + shape_to_string(batch.speech.shape()) +
                     " and text " + shape_to_string(batch.text.shape()) +
                     " lengths differ");
  }
  const Tensor s = add_row(batch.speech, cme.speech_type);
  const Tensor y = add_row(batch.text, cme.text_type);
  Tensor h = batch.order == ModalOrder::kSpeechFirst ? concat_rows({s, y})
                                                     : concat_rows({y, s});
  for (const auto& block : cme.blocks) {
    h = transformer_block_forward(h, block, nullptr, use_position_bias);
  }
  return h;
}

ExtractorStep extractor_train_step(const Utterance& utt, const StubEncoders& stubs,
                                   const CmeParams& cme, const LossWeights& w,
                                   Rng& rng, const ExtractorOptions& options) {
  if (utt.durations.size() != utt.text.size()) {
    throw AlignmentError("extractor step: utterance has no alignment");
  }
  const Tensor speech = stubs.speech(utt.frames);
  const Tensor text = upsample_text(stubs.text(utt.text), utt.durations);
  const std::size_t t = speech.rows();

  ExtractorStep step;
  CrossModalBatch& b = step.batch;
  b.speech = speech;
  b.text = text;
  const ModalMask modal = draw_modal_mask(options.modal_prob, rng);
  if (modal == ModalMask::kNone) {
    auto ms = apply_token_mask(speech, options.mask_ratio, cme.speech_mask, rng);
    auto mt = apply_token_mask(text, options.mask_ratio, cme.text_mask, rng);
    b.speech = ms.masked;
    b.text = mt.masked;
    b.token_mask_speech = std::move(ms.mask);
    b.token_mask_text = std::move(mt.mask);
  } else {
    apply_modal_mask(b, modal);
    b.token_mask_speech.assign(t, modal == ModalMask::kSpeechMasked);
    b.token_mask_text.assign(t, modal == ModalMask::kTextMasked);
  }
  b.order = sample_uniform(rng) < options.flip_prob ? ModalOrder::kTextFirst
                                                    : ModalOrder::kSpeechFirst;

  const Tensor out = cme_forward(b, cme);
  const bool speech_first = b.order == ModalOrder::kSpeechFirst;
  const Tensor s_half = slice_rows(out, speech_first ? 0 : t, speech_first ? t : 2 * t);
  const Tensor y_half = slice_rows(out, speech_first ? t : 0, speech_first ? 2 * t : t);

  const Tensor ctc = ctc_loss(log_softmax(cme.ctc_head(s_half)), utt.text,
                              SpecialTokens::kBlank);
  Tensor total = scale(ctc, w.alpha);
  step.ctc = ctc.item();
  auto any = [](const std::vector<bool>& m) {
    return std::find(m.begin(), m.end(), true) != m.end();
  };
  if (any(b.token_mask_speech)) {
    const Tensor l = masked_l1_loss(cme.speech_head(s_half), speech, b.token_mask_speech);
    step.speech_l1 = l.item();
    total = add(total, scale(l, w.beta));
  }
  if (any(b.token_mask_text)) {
    const Tensor l = masked_l1_loss(cme.text_head(y_half), text, b.token_mask_text);
    step.text_l1 = l.item();
    total = add(total, scale(l, w.gamma));
  }
  step.loss = total;
  return step;
}

Tensor crm_infer(const std::vector<Tensor>& frames_windows,
                 const StubEncoders& stubs, const CmeParams& cme,
                 const Tensor& no_context) {
  if (frames_windows.empty()) {
    if (!no_context.defined()) throw EmptyInputError("crm_infer: empty context window");
    return reshape(no_context, {1, no_context.numel()});
  }
  std::vector<Tensor> parts;
  parts.reserve(frames_windows.size());
  for (const auto& f : frames_windows) parts.push_back(stubs.speech(f));
  CrossModalBatch b;
  b.speech = parts.size() == 1 ? parts.front() : concat_rows(parts);
  b.text = Tensor::zeros(b.speech.shape());
  b.modal = ModalMask::kTextMasked;
  b.order = ModalOrder::kSpeechFirst;
  return cme_forward(b, cme);
}

Tensor crm_infer(const Conversation& conv, const ContextWindow& window,
                 const StubEncoders& stubs, const CmeParams& cme,
                 const Tensor& no_context) {
  std::vector<Tensor> frames;
  for (std::size_t i : window.indices) frames.push_back(conv.utterances.at(i).frames);
  return crm_infer(frames, stubs, cme, no_context);
}

}  // namespace casr

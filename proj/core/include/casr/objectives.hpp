// Training objectives: cross-entropy, CTC, masked L1, diagonal-Gaussian KL and
// the weighted combinations used by the extractor and the conversational ASR
// stage.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "casr/tensor.hpp"

namespace casr {

using TokenId = int;

// Diagonal Gaussian over the latent space. sigma is a standard deviation.
struct LatentGaussian {
  Tensor mu;
  Tensor sigma;
};

struct LossWeights {
  double alpha = 1.0;  // CTC
  double beta = 1.0;   // masked speech reconstruction
  double gamma = 1.0;  // masked text reconstruction
  double kl_weight = 1.0;

  void validate() const;
};

// Mean negative log-likelihood of `targets` under row-wise softmax(logits),
// ignoring positions equal to pad_id.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const TokenId> targets,
                          TokenId pad_id);

// Negative log of the total probability of all blank-augmented alignments of
// `label` given per-frame log-probabilities [t, V]. Forward/backward DP in
// log space. Throws InfeasibleError when the label cannot fit in t frames.
Tensor ctc_loss(const Tensor& log_probs, std::span<const TokenId> label,
                TokenId blank_id);

// Minimum frame count needed to emit `label` (one blank between repeats).
std::size_t ctc_min_frames(std::span<const TokenId> label);

// Mean absolute error over the rows selected by `mask`.
Tensor masked_l1_loss(const Tensor& pred, const Tensor& target,
                      const std::vector<bool>& mask);

// KL(q || p) summed over latent dimensions.
Tensor gaussian_kl(const LatentGaussian& q, const LatentGaussian& p);

// alpha * ctc + beta * speech + gamma * text.
Tensor extractor_loss(const Tensor& ctc, const Tensor& speech_l1,
                      const Tensor& text_l1, const LossWeights& w);

// ce + kl_weight * (kl_role + kl_topical). Either KL may be undefined when the
// corresponding latent module is disabled.
Tensor final_loss(const Tensor& ce, const Tensor& kl_role,
                  const Tensor& kl_topical, const LossWeights& w);

// Linear warmup of the KL multiplier from 0 to 1 over the first
// `warmup_fraction` of `total_steps`.
double kl_anneal_weight(std::size_t step, std::size_t total_steps,
                        double warmup_fraction);

// (3, 1, 1) for the first third of extractor training, then (1, 1, 1).
LossWeights extractor_weight_schedule(std::size_t step, std::size_t total_steps);

}  // namespace casr

// Model and training configuration, with a line-delimited `key: value`
// text form (dotted keys for nesting).
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "casr/blocks.hpp"
#include "casr/conversation.hpp"

namespace casr {

enum class FusionStrategy { kAttention, kLinear };
enum class ContextMode { kNone, kCrm, kCvae, kCvaeCrm };
// Source of the LVM prenet input: cross-modal speech features or transcripts
// of the context utterances.
enum class LvmInput { kCrossModal, kText };

FusionStrategy fusion_from_string(std::string_view s);
ContextMode context_mode_from_string(std::string_view s);
LvmInput lvm_input_from_string(std::string_view s);
std::string to_string(FusionStrategy f);
std::string to_string(ContextMode m);
std::string to_string(LvmInput l);

struct AsrConfig {
  std::size_t vocab = 40;
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 64;
  std::size_t conv_kernel = 5;
  std::size_t rel_clip = 64;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  std::size_t cme_blocks = 3;
  std::size_t lvm_blocks = 2;
  std::size_t d_raw = 24;
  std::size_t d_z = 32;

  FusionStrategy fusion = FusionStrategy::kLinear;
  ContextMode context_mode = ContextMode::kNone;
  bool use_role = true;
  bool use_topical = true;
  LvmInput lvm_input = LvmInput::kCrossModal;
  std::size_t crm_history = 1;
  std::size_t topical_n = 3;
  std::size_t role_n = 3;
  std::size_t max_decode_len = 32;

  BlockDims dims() const;
  bool uses_crm() const;
  bool uses_cvae() const;
  // The cross-modal encoder is needed for CRM features or cross-modal LVM input.
  bool needs_cme() const;
  void validate() const;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  std::size_t warmup_steps = 200;
  std::size_t extractor_steps = 2000;
  std::size_t stage1_steps = 6000;
  std::size_t stage2_steps = 5000;
  std::size_t batch_size = 8;
  double kl_warmup_fraction = 0.2;
  // Ceiling the annealed KL multiplier ramps up to.
  double kl_weight_max = 0.02;
  std::size_t log_every = 100;
  std::string train_corpus;
  std::string dev_corpus;
  std::string test_corpus;

  CorpusSpec corpus;
  AsrConfig model;

  void validate() const;
};

std::string format_config(const TrainConfig& config);
// Starts from `base` and overrides every key present. Unknown keys and
// malformed values raise ConfigError; lines starting with '#' are ignored.
TrainConfig parse_config(std::string_view text, const TrainConfig& base = {});
TrainConfig load_config(const std::filesystem::path& path);

// Splits `key: value` lines into pairs, preserving order.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

}  // namespace casr

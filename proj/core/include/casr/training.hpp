// Training stages, evaluation and the history-length sweep.
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "casr/asr_model.hpp"
#include "casr/checkpoint.hpp"
#include "casr/config.hpp"
#include "casr/conversation.hpp"

namespace casr {

// Loads the corpus files named in the config, or generates the splits from
// the corpus spec and seed when no path is given.
CorpusSplits load_or_generate(const TrainConfig& config);

struct RunOptions {
  // Steps to execute in this invocation; the checkpoint then holds the state
  // needed to continue.
  std::size_t stop_after = std::numeric_limits<std::size_t>::max();
  const Checkpoint* resume = nullptr;
  std::ostream* log = nullptr;
};

struct StageResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // mean batch loss per executed step
  std::size_t step = 0;        // steps completed overall
  bool finished = false;
};

StageResult pretrain_extractor(const std::vector<Conversation>& corpus,
                               const TrainConfig& config, const RunOptions& options = {});

// Sentence-level model: context mode none, cross-entropy only.
StageResult train_stage1(const std::vector<Conversation>& corpus,
                         const TrainConfig& config, const RunOptions& options = {});

// Continues from the stage-1 model with the configured context mode. The
// extractor checkpoint is required whenever the mode uses cross-modal
// features; stubs and CME stay frozen.
StageResult train_stage2(const std::vector<Conversation>& corpus,
                         const Checkpoint& stage1, const Checkpoint* extractor,
                         const TrainConfig& config, const RunOptions& options = {});

TrainConfig config_from_checkpoint(const Checkpoint& ckpt);
ExtractorModel extractor_from_checkpoint(const Checkpoint& ckpt);
AsrModel model_from_checkpoint(const Checkpoint& ckpt);

struct ExtractorProbe {
  double loss = 0.0;  // unit-weighted sum of the three terms
  double ctc = 0.0;
  double speech_l1 = 0.0;
  double text_l1 = 0.0;
};

// Averages over the first `count` utterances of the corpus with masks drawn
// from `seed`, so repeated probes see the same batch.
ExtractorProbe probe_extractor(const ExtractorModel& model,
                               const std::vector<Conversation>& corpus,
                               std::uint64_t seed, std::size_t count = 32);

struct UtteranceResult {
  std::string conversation_id;
  std::size_t k = 0;
  std::vector<TokenId> ref;
  std::vector<TokenId> hyp;
  std::size_t edits = 0;
  ContextWindow crm_window;
  ContextWindow role_window;
  ContextWindow topical_window;
};

struct EvalReport {
  std::string mode;
  double cer = 0.0;
  std::size_t edits = 0;
  std::size_t ref_tokens = 0;
  std::vector<UtteranceResult> utterances;

  // Line-delimited text; the last line is `CER <value>`.
  std::string to_text() const;
};

EvalReport evaluate(const std::vector<Conversation>& corpus, const AsrModel& model);
EvalReport evaluate(const std::vector<Conversation>& corpus, const Checkpoint& asr);

enum class SweepVariant { kCrm, kCvae, kHybrid };

// Stage-2 configuration for one point of the history-length sweep: CRM varies
// crm_history, CVAE varies the role/topical window size, Hybrid combines the
// CVAE window with at most one previous sentence of CRM history.
TrainConfig sweep_config(const TrainConfig& base, SweepVariant variant, std::size_t m);

struct SweepRow {
  std::size_t m = 0;
  double crm = 0.0;
  double cvae = 0.0;
  double hybrid = 0.0;
};

std::vector<SweepRow> sweep_history_length(const CorpusSplits& corpus,
                                           const TrainConfig& config,
                                           const Checkpoint& stage1,
                                           const Checkpoint& extractor,
                                           const std::vector<std::size_t>& ms,
                                           std::ostream* log = nullptr);
std::string format_sweep(const std::vector<SweepRow>& rows);

}  // namespace casr

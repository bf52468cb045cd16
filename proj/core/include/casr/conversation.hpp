// Conversation data model, context-window construction and the synthetic
// two-speaker corpus with pseudo-speech frames.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "casr/objectives.hpp"
#include "casr/parameters.hpp"
#include "casr/tensor.hpp"

namespace casr {

// Reserved vocabulary entries. Regular tokens start at kFirstRegular.
struct SpecialTokens {
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kBlank = 3;
  static constexpr TokenId kFirstRegular = 4;
};

enum class Speaker : std::uint8_t { kA = 0, kB = 1 };

struct Utterance {
  std::size_t index = 0;
  Speaker speaker = Speaker::kA;
  std::vector<TokenId> text;
  Tensor frames;               // [t, d_raw]
  std::vector<int> durations;  // frames per token, sums to t
};

struct Conversation {
  std::string id;
  int topic = 0;
  std::array<int, 2> roles{0, 1};  // role of speaker A and speaker B
  std::vector<Utterance> utterances;
};

enum class ContextKind { kTopical, kRole, kCrm };

struct ContextWindow {
  ContextKind kind = ContextKind::kTopical;
  std::vector<std::size_t> indices;

  bool empty() const { return indices.empty(); }
};

// The n utterances immediately preceding k: [k-n, ..., k-1] clipped at 0.
ContextWindow build_topical_context(std::size_t k, std::size_t n);
// The current speaker's previous n utterances: [k-2n, ..., k-4, k-2] clipped.
ContextWindow build_role_context(std::size_t k, std::size_t n);
// The current utterance and `history` predecessors: [k-history, ..., k].
ContextWindow build_crm_context(std::size_t k, std::size_t history = 1);

struct CorpusSpec {
  std::size_t vocab_size = 40;
  std::size_t topics = 5;
  std::size_t roles = 3;
  std::size_t conversations = 200;
  std::size_t dev_conversations = 20;
  std::size_t test_conversations = 20;
  std::size_t utterances_per_conversation = 20;

  // Lexicon layout. Each topic group is a set of acoustically confusable
  // tokens with one member per topic; role and adjacency groups likewise.
  std::size_t topic_groups = 2;
  std::size_t topic_cues_per_topic = 1;
  std::size_t role_groups = 1;
  std::size_t adjacency_cues = 3;
  std::size_t adjacency_groups = 2;

  double topic_cue_prob = 0.4;
  double role_cue_prob = 0.4;
  double adjacency_prob = 0.7;
  double topic_leak_prob = 0.03;
  std::size_t min_shared = 2;
  std::size_t max_shared = 4;

  std::size_t d_raw = 24;
  double noise_sigma = 0.1;
  double confusable_distance = 0.02;
  int min_duration = 2;
  int max_duration = 4;

  void validate() const;
};

// Token-id assignment derived from a CorpusSpec.
struct TokenLayout {
  std::vector<std::vector<TokenId>> topic_groups;      // [group][topic]
  std::vector<std::vector<TokenId>> topic_cues;        // [topic][j]
  std::vector<std::vector<TokenId>> role_groups;       // [group][role]
  std::vector<TokenId> role_cues;                      // [role]
  std::vector<TokenId> adjacency_cues;                 // [cue]
  std::vector<std::vector<TokenId>> adjacency_groups;  // [group][cue]
  std::vector<TokenId> shared;

  static TokenLayout from_spec(const CorpusSpec& spec);
  // Sets of tokens that share a codebook base vector.
  std::vector<std::vector<TokenId>> confusable_sets() const;
  std::vector<TokenId> topic_lexicon(int topic) const;
};

struct SynthesisOptions {
  double noise_sigma = -1.0;  // < 0: use the corpus noise level
  int fixed_duration = 0;     // > 0: every token lasts exactly this long
};

struct SynthesizedFrames {
  Tensor frames;
  std::vector<int> durations;
};

// Maps tokens to pseudo-speech: one codebook row per token, repeated for a
// random duration, plus Gaussian noise. Confusable sets share a base row.
class FrameSynthesizer {
 public:
  FrameSynthesizer(const CorpusSpec& spec, std::uint64_t seed);

  SynthesizedFrames synthesize(std::span<const TokenId> text, Rng& rng,
                               const SynthesisOptions& options = {}) const;
  SynthesizedFrames synthesize(std::span<const TokenId> text,
                               std::uint64_t seed,
                               const SynthesisOptions& options = {}) const;

  const Tensor& codebook() const { return codebook_; }
  const TokenLayout& layout() const { return layout_; }

 private:
  CorpusSpec spec_;
  TokenLayout layout_;
  Tensor codebook_;  // [vocab, d_raw]
};

// Deterministic for (spec, seed, split). The codebook depends on the seed
// only, so all splits of one seed share acoustics.
std::vector<Conversation> generate_corpus(const CorpusSpec& spec,
                                          std::uint64_t seed,
                                          const std::string& split = "train");

struct CorpusSplits {
  std::vector<Conversation> train;
  std::vector<Conversation> dev;
  std::vector<Conversation> test;
};

CorpusSplits generate_splits(const CorpusSpec& spec, std::uint64_t seed);

// `<prefix>.jsonl` holds one conversation per line; `<prefix>.cfrm` holds the
// frames referenced by each utterance's frames_ref.
void save_corpus(const std::filesystem::path& prefix,
                 const std::vector<Conversation>& corpus);
std::vector<Conversation> load_corpus(const std::filesystem::path& prefix);

std::string speaker_name(Speaker s);

}  // namespace casr

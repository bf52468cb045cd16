#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "casr/errors.hpp"
#include "casr/training.hpp"

using namespace casr;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.seed = 5;
  c.corpus.conversations = 4;
  c.corpus.dev_conversations = 1;
  c.corpus.test_conversations = 2;
  c.corpus.utterances_per_conversation = 6;
  c.corpus.d_raw = 8;
  c.model.d_raw = 8;
  c.model.d = 16;
  c.model.heads = 2;
  c.model.ffn_hidden = 24;
  c.model.conv_kernel = 3;
  c.model.rel_clip = 8;
  c.model.encoder_blocks = 1;
  c.model.decoder_blocks = 1;
  c.model.cme_blocks = 1;
  c.model.lvm_blocks = 1;
  c.model.d_z = 8;
  c.model.max_decode_len = 12;
  c.extractor_steps = 20;
  c.stage1_steps = 20;
  c.stage2_steps = 12;
  c.batch_size = 2;
  c.warmup_steps = 5;
  c.log_every = 1;
  return c;
}

// Shared across the tests below: generating checkpoints is the slow part.
struct Trained {
  TrainConfig cfg = tiny_config();
  CorpusSplits splits = load_or_generate(cfg);
  StageResult extractor = pretrain_extractor(splits.train, cfg);
  StageResult stage1 = train_stage1(splits.train, cfg);
};

const Trained& trained() {
  static const Trained t;
  return t;
}

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<long>(from), v.begin() + static_cast<long>(to), 0.0) /
         static_cast<double>(to - from);
}

}  // namespace

TEST(Extractor, PretrainingLowersProbeLossAndKeepsStubs) {
  TrainConfig cfg = tiny_config();
  cfg.extractor_steps = 150;
  const auto splits = load_or_generate(cfg);
  const ExtractorModel fresh = build_extractor(cfg.model, cfg.seed);
  const double before = probe_extractor(fresh, splits.train, 1).loss;
  const StageResult r = pretrain_extractor(splits.train, cfg);
  const ExtractorModel after = extractor_from_checkpoint(r.checkpoint);
  EXPECT_LT(probe_extractor(after, splits.train, 1).loss, before);
  EXPECT_TRUE(bit_identical(snapshot(fresh.stubs.tensors()), snapshot(after.stubs.tensors())));
  EXPECT_TRUE(r.finished);
  EXPECT_EQ(r.losses.size(), 150u);
}

TEST(Stage1, DeterministicForSeed) {
  const Trained& t = trained();
  const StageResult again = train_stage1(t.splits.train, t.cfg);
  EXPECT_EQ(again.losses, t.stage1.losses);
  EXPECT_EQ(serialize_checkpoint(again.checkpoint), serialize_checkpoint(t.stage1.checkpoint));
}

TEST(Stage1, OverfitsSingleUtterance) {
  TrainConfig cfg = tiny_config();
  cfg.stage1_steps = 300;
  cfg.batch_size = 1;
  cfg.warmup_steps = 20;
  cfg.learning_rate = 3e-3;
  auto corpus = generate_corpus(cfg.corpus, cfg.seed);
  corpus.resize(1);
  corpus[0].utterances.resize(1);
  const StageResult r = train_stage1(corpus, cfg);
  EXPECT_LT(r.losses.back(), 0.1);
  // Smoothed loss falls across the run.
  EXPECT_LT(mean(r.losses, 200, 300), mean(r.losses, 100, 200));
  EXPECT_LT(mean(r.losses, 100, 200), mean(r.losses, 0, 100));
  const EvalReport rep = evaluate(corpus, r.checkpoint);
  EXPECT_EQ(rep.cer, 0.0);
}

TEST(Stage1, ResumeReproducesUninterruptedRun) {
  const Trained& t = trained();
  RunOptions first;
  first.stop_after = 7;
  const StageResult part = train_stage1(t.splits.train, t.cfg, first);
  EXPECT_FALSE(part.finished);
  EXPECT_EQ(part.step, 7u);
  const Checkpoint saved = deserialize_checkpoint(serialize_checkpoint(part.checkpoint));
  RunOptions second;
  second.resume = &saved;
  const StageResult rest = train_stage1(t.splits.train, t.cfg, second);
  std::vector<double> joined = part.losses;
  joined.insert(joined.end(), rest.losses.begin(), rest.losses.end());
  EXPECT_EQ(joined, t.stage1.losses);
  EXPECT_EQ(serialize_checkpoint(rest.checkpoint), serialize_checkpoint(t.stage1.checkpoint));
}

TEST(Stage2, FreezesExtractorAndLogsBothKlTerms) {
  const Trained& t = trained();
  TrainConfig cfg = t.cfg;
  cfg.model.context_mode = ContextMode::kCvaeCrm;
  std::ostringstream log;
  RunOptions o;
  o.log = &log;
  const StageResult r = train_stage2(t.splits.train, t.stage1.checkpoint, &t.extractor.checkpoint,
                                     cfg, o);
  EXPECT_NE(log.str().find("kl_role"), std::string::npos);
  EXPECT_NE(log.str().find("kl_topical"), std::string::npos);
  for (const auto& [name, tensor] : t.extractor.checkpoint.tensors) {
    if (name.rfind("optim.", 0) == 0) continue;
    EXPECT_TRUE(bit_identical(snapshot({tensor}), snapshot({r.checkpoint.get(name)}))) << name;
  }
  for (const auto& [name, tensor] : r.checkpoint.tensors)
    EXPECT_FALSE(name.rfind("optim.m.cme.", 0) == 0) << name;
}

TEST(Stage2, ResumeReproducesLosses) {
  const Trained& t = trained();
  TrainConfig cfg = t.cfg;
  cfg.model.context_mode = ContextMode::kCvae;
  const StageResult full = train_stage2(t.splits.train, t.stage1.checkpoint,
                                        &t.extractor.checkpoint, cfg);
  RunOptions first;
  first.stop_after = 5;
  const StageResult part = train_stage2(t.splits.train, t.stage1.checkpoint,
                                        &t.extractor.checkpoint, cfg, first);
  RunOptions second;
  second.resume = &part.checkpoint;
  const StageResult rest = train_stage2(t.splits.train, t.stage1.checkpoint,
                                        &t.extractor.checkpoint, cfg, second);
  std::vector<double> joined = part.losses;
  joined.insert(joined.end(), rest.losses.begin(), rest.losses.end());
  EXPECT_EQ(joined, full.losses);
}

TEST(Stage2, RejectsMismatchedInputs) {
  const Trained& t = trained();
  TrainConfig cfg = t.cfg;
  cfg.model.context_mode = ContextMode::kCrm;
  EXPECT_THROW(train_stage2(t.splits.train, t.stage1.checkpoint, nullptr, cfg), ConfigError);
  EXPECT_THROW(train_stage2(t.splits.train, t.extractor.checkpoint, &t.extractor.checkpoint, cfg),
               ConfigError);
  TrainConfig wide = cfg;
  wide.model.d = 32;
  EXPECT_THROW(train_stage2(t.splits.train, t.stage1.checkpoint, &t.extractor.checkpoint, wide),
               ConfigError);
  RunOptions o;
  o.resume = &t.extractor.checkpoint;
  EXPECT_THROW(train_stage1(t.splits.train, t.cfg, o), ConfigError);
}

TEST(Evaluate, DeterministicWithMatchingWindows) {
  const Trained& t = trained();
  TrainConfig cfg = t.cfg;
  cfg.model.context_mode = ContextMode::kCvaeCrm;
  cfg.model.crm_history = 2;
  const StageResult r = train_stage2(t.splits.train, t.stage1.checkpoint,
                                     &t.extractor.checkpoint, cfg);
  const EvalReport a = evaluate(t.splits.test, r.checkpoint);
  const EvalReport b = evaluate(t.splits.test, r.checkpoint);
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(a.mode, "cvae_crm");
  ASSERT_EQ(a.utterances.size(), 12u);
  std::size_t edits = 0, refs = 0;
  for (const auto& u : a.utterances) {
    EXPECT_EQ(u.crm_window.indices, build_crm_context(u.k, 2).indices);
    EXPECT_EQ(u.role_window.indices, build_role_context(u.k, 3).indices);
    EXPECT_EQ(u.topical_window.indices, build_topical_context(u.k, 3).indices);
    edits += u.edits;
    refs += u.ref.size();
  }
  EXPECT_EQ(a.edits, edits);
  EXPECT_DOUBLE_EQ(a.cer, static_cast<double>(edits) / static_cast<double>(refs));
  const std::string text = a.to_text();
  const auto last = text.substr(text.rfind('\n', text.size() - 2) + 1);
  EXPECT_EQ(last.rfind("CER ", 0), 0u);
}

TEST(Sweep, ConfigsAndTableShape) {
  const TrainConfig base = tiny_config();
  EXPECT_EQ(sweep_config(base, SweepVariant::kCrm, 4).model.crm_history, 4u);
  EXPECT_EQ(sweep_config(base, SweepVariant::kCvae, 2).model.topical_n, 2u);
  const TrainConfig hybrid = sweep_config(base, SweepVariant::kHybrid, 5);
  EXPECT_EQ(hybrid.model.context_mode, ContextMode::kCvaeCrm);
  EXPECT_EQ(hybrid.model.crm_history, 1u);
  EXPECT_EQ(hybrid.model.role_n, 5u);

  const Trained& t = trained();
  TrainConfig cfg = t.cfg;
  cfg.stage2_steps = 3;
  const auto rows = sweep_history_length(t.splits, cfg, t.stage1.checkpoint,
                                         t.extractor.checkpoint, {0, 2});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].m, 0u);
  for (const auto& r : rows) {
    for (double v : {r.crm, r.cvae, r.hybrid}) {
      EXPECT_GE(v, 0.0);
      EXPECT_TRUE(std::isfinite(v));
    }
  }
  const std::string table = format_sweep(rows);
  EXPECT_EQ(table.rfind("m CRM CVAE Hybrid\n", 0), 0u);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
}

#include "casr/training.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "casr/errors.hpp"
#include "casr/ops.hpp"
#include "casr/optimizer.hpp"

namespace casr {

namespace {

struct SampleResult {
  Tensor loss;
  std::vector<std::pair<const char*, double>> parts;
};

struct UtteranceRef {
  std::size_t conversation;
  std::size_t k;
};

std::vector<UtteranceRef> flatten(const std::vector<Conversation>& corpus) {
  std::vector<UtteranceRef> out;
  for (std::size_t c = 0; c < corpus.size(); ++c)
    for (std::size_t k = 0; k < corpus[c].utterances.size(); ++k) out.push_back({c, k});
  if (out.empty()) throw EmptyInputError("training corpus has no utterances");
  return out;
}

std::vector<Parameter> trainable_parameters(const ParameterStore& store) {
  std::vector<Parameter> out;
  for (const auto& p : store.items())
    if (p.tensor.requires_grad()) out.push_back(p);
  return out;
}

void freeze_prefix(ParameterStore& store, const std::string& prefix) {
  for (const auto& p : store.items()) {
    if (p.name.rfind(prefix, 0) == 0) {
      Tensor t = p.tensor;
      t.set_requires_grad(false);
    }
  }
}

std::vector<Tensor> tensors_with_prefix(const ParameterStore& store,
                                        const std::string& prefix) {
  std::vector<Tensor> out;
  for (const auto& p : store.items())
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p.tensor);
  return out;
}

AdamOptions adam_options(const TrainConfig& c) {
  AdamOptions o;
  o.learning_rate = c.learning_rate;
  o.beta1 = c.adam_beta1;
  o.beta2 = c.adam_beta2;
  o.eps = c.adam_eps;
  o.warmup_steps = c.warmup_steps;
  return o;
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (is.fail()) throw CorruptionError("checkpoint random-source state is malformed");
  return rng;
}

Checkpoint state_checkpoint(const TrainConfig& cfg, const std::string& kind,
                            std::size_t step, const Rng& rng,
                            const ParameterStore& store, const Adam& adam) {
  Checkpoint ckpt;
  ckpt.config_text = format_config(cfg);
  ckpt.config_text += "state.kind: " + kind + "\n";
  ckpt.config_text += "state.step: " + std::to_string(step) + "\n";
  ckpt.config_text += "state.rng: " + rng_to_string(rng) + "\n";
  append_parameters(ckpt, store);
  adam.export_state(ckpt);
  return ckpt;
}

void check_kind(const Checkpoint& ckpt, const std::string& kind) {
  const std::string actual = ckpt.config_value("state.kind");
  if (actual != kind) {
    throw ConfigError("expected a " + kind + " checkpoint, got '" + actual + "'");
  }
}

std::size_t checkpoint_step(const Checkpoint& ckpt) {
  const std::string s = ckpt.config_value("state.step", "0");
  try {
    return static_cast<std::size_t>(std::stoull(s));
  } catch (const std::exception&) {
    throw CorruptionError("checkpoint step counter '" + s + "' is malformed");
  }
}

template <typename Fn>
StageResult run_loop(const std::string& tag, const TrainConfig& cfg, const std::string& kind,
                     std::size_t total_steps, ParameterStore& store,
                     std::size_t num_samples, const RunOptions& options,
                     std::uint64_t stream_salt, Fn sample_loss) {
  Adam adam(trainable_parameters(store), adam_options(cfg));
  Rng rng(derive_seed(cfg.seed, stream_salt));
  std::size_t step = 0;
  if (options.resume) {
    check_kind(*options.resume, kind);
    load_parameters(store, *options.resume);
    step = checkpoint_step(*options.resume);
    rng = rng_from_string(options.resume->config_value("state.rng"));
    adam.import_state(*options.resume, step);
  }

  StageResult result;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  std::size_t executed = 0;
  while (step < total_steps && executed < options.stop_after) {
    double batch_loss = 0.0;
    std::vector<std::pair<const char*, double>> parts;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = sample_index(rng, num_samples);
      SampleResult r = sample_loss(idx, step, rng);
      const double value = r.loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError(tag + " diverged at step " + std::to_string(step + 1) +
                            " (loss " + std::to_string(value) + ")");
      }
      backward(scale(r.loss, inv_batch));
      batch_loss += value * inv_batch;
      if (parts.empty()) {
        for (auto& [name, v] : r.parts) parts.emplace_back(name, v * inv_batch);
      } else {
        for (std::size_t i = 0; i < parts.size() && i < r.parts.size(); ++i) {
          parts[i].second += r.parts[i].second * inv_batch;
        }
      }
    }
    adam.step();
    ++step;
    ++executed;
    result.losses.push_back(batch_loss);
    if (options.log && cfg.log_every > 0 &&
        (step % cfg.log_every == 0 || step == total_steps)) {
      *options.log << tag << " step " << step << " loss " << std::setprecision(6)
                   << batch_loss;
      for (auto& [name, v] : parts) *options.log << ' ' << name << ' ' << v;
      *options.log << '\n';
    }
  }
  result.step = step;
  result.finished = step >= total_steps;
  result.checkpoint = state_checkpoint(cfg, kind, step, rng, store, adam);
  return result;
}

void assert_unchanged(const std::vector<std::vector<double>>& before,
                      const std::vector<Tensor>& now, const std::string& what) {
  if (!bit_identical(before, snapshot(now))) {
    throw TrainingError(what + " changed during training");
  }
}

void check_architecture(const AsrConfig& a, const AsrConfig& b) {
  if (a.vocab != b.vocab || a.d != b.d || a.heads != b.heads ||
      a.ffn_hidden != b.ffn_hidden || a.conv_kernel != b.conv_kernel ||
      a.rel_clip != b.rel_clip || a.encoder_blocks != b.encoder_blocks ||
      a.decoder_blocks != b.decoder_blocks || a.d_raw != b.d_raw) {
    throw ConfigError("checkpoint architecture does not match the configuration");
  }
}

}  // namespace

CorpusSplits load_or_generate(const TrainConfig& config) {
  CorpusSplits s;
  if (config.train_corpus.empty()) {
    s = generate_splits(config.corpus, config.seed);
  } else {
    s.train = load_corpus(config.train_corpus);
    if (!config.dev_corpus.empty()) s.dev = load_corpus(config.dev_corpus);
    if (!config.test_corpus.empty()) s.test = load_corpus(config.test_corpus);
  }
  return s;
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
  return parse_config(ckpt.config_text);
}

ExtractorModel extractor_from_checkpoint(const Checkpoint& ckpt) {
  check_kind(ckpt, "extractor");
  const TrainConfig cfg = config_from_checkpoint(ckpt);
  ExtractorModel m = build_extractor(cfg.model, cfg.seed);
  load_parameters(m.store, ckpt);
  return m;
}

AsrModel model_from_checkpoint(const Checkpoint& ckpt) {
  const std::string kind = ckpt.config_value("state.kind");
  if (kind != "stage1" && kind != "stage2") {
    throw ConfigError("expected an ASR checkpoint, got '" + kind + "'");
  }
  const TrainConfig cfg = config_from_checkpoint(ckpt);
  AsrModel m = build_asr_model(cfg.model, cfg.seed);
  load_parameters(m.store, ckpt);
  return m;
}

StageResult pretrain_extractor(const std::vector<Conversation>& corpus,
                               const TrainConfig& config, const RunOptions& options) {
  config.validate();
  ExtractorModel model = build_extractor(config.model, config.seed);
  const auto refs = flatten(corpus);
  const auto stubs_before = snapshot(model.stubs.tensors());
  const std::size_t total = config.extractor_steps;
  StageResult r = run_loop(
      "extractor", config, "extractor", total, model.store, refs.size(), options, 11,
      [&](std::size_t idx, std::size_t step, Rng& rng) {
        const Utterance& u = corpus[refs[idx].conversation].utterances[refs[idx].k];
        ExtractorStep s = extractor_train_step(u, model.stubs, model.cme,
                                               extractor_weight_schedule(step, total), rng);
        return SampleResult{s.loss,
                            {{"ctc", s.ctc}, {"speech_l1", s.speech_l1},
                             {"text_l1", s.text_l1}}};
      });
  assert_unchanged(stubs_before, model.stubs.tensors(), "stub encoders");
  return r;
}

StageResult train_stage1(const std::vector<Conversation>& corpus,
                         const TrainConfig& config, const RunOptions& options) {
  TrainConfig cfg = config;
  cfg.model.context_mode = ContextMode::kNone;
  cfg.validate();
  AsrModel model = build_asr_model(cfg.model, cfg.seed);
  const auto refs = flatten(corpus);
  const auto stubs_before = snapshot(model.stubs.tensors());
  ContextCache cache(model, corpus);
  StageResult r = run_loop(
      "stage1", cfg, "stage1", cfg.stage1_steps, model.store, refs.size(), options, 21,
      [&](std::size_t idx, std::size_t, Rng& rng) {
        const auto& ref = refs[idx];
        const UtteranceLoss l = utterance_loss(model, corpus[ref.conversation].utterances[ref.k],
                                               cache.get(ref.conversation, ref.k), 0.0, rng);
        return SampleResult{l.loss, {{"ce", l.ce}}};
      });
  assert_unchanged(stubs_before, model.stubs.tensors(), "stub encoders");
  return r;
}

StageResult train_stage2(const std::vector<Conversation>& corpus,
                         const Checkpoint& stage1, const Checkpoint* extractor,
                         const TrainConfig& config, const RunOptions& options) {
  config.validate();
  check_kind(stage1, "stage1");
  check_architecture(config_from_checkpoint(stage1).model, config.model);
  AsrModel model = build_asr_model(config.model, config.seed);

  for (const auto& [name, t] : stage1.tensors) {
    if (name.rfind("optim.", 0) == 0) continue;
    if (!model.store.contains(name)) {
      throw FormatError("stage-1 parameter '" + name + "' has no place in this model");
    }
  }
  load_parameters(model.store, stage1, {"stub.", "encoder.", "decoder."}, false);
  if (model.config.needs_cme()) {
    if (extractor == nullptr) {
      throw ConfigError("context mode " + to_string(config.model.context_mode) +
                        " needs an extractor checkpoint");
    }
    check_kind(*extractor, "extractor");
    for (const auto& p : model.store.items()) {
      if (p.name.rfind("stub.", 0) != 0) continue;
      if (!bit_identical(snapshot({p.tensor}), snapshot({extractor->get(p.name)}))) {
        throw ConfigError("extractor and stage-1 checkpoints use different stub encoders");
      }
    }
    load_parameters(model.store, *extractor, {"cme."});
  }
  freeze_prefix(model.store, "cme.");

  const auto refs = flatten(corpus);
  const auto stubs_before = snapshot(model.stubs.tensors());
  const auto cme_before = snapshot(tensors_with_prefix(model.store, "cme."));
  ContextCache cache(model, corpus);
  const std::size_t total = config.stage2_steps;
  StageResult r = run_loop(
      "stage2", config, "stage2", total, model.store, refs.size(), options, 31,
      [&](std::size_t idx, std::size_t step, Rng& rng) {
        const auto& ref = refs[idx];
        const double kl_w =
            config.kl_weight_max * kl_anneal_weight(step, total, config.kl_warmup_fraction);
        const UtteranceLoss l = utterance_loss(model, corpus[ref.conversation].utterances[ref.k],
                                               cache.get(ref.conversation, ref.k), kl_w, rng);
        SampleResult s{l.loss, {{"ce", l.ce}}};
        if (l.has_kl_role) s.parts.emplace_back("kl_role", l.kl_role);
        if (l.has_kl_topical) s.parts.emplace_back("kl_topical", l.kl_topical);
        return s;
      });
  assert_unchanged(stubs_before, model.stubs.tensors(), "stub encoders");
  assert_unchanged(cme_before, tensors_with_prefix(model.store, "cme."),
                   "cross-modal extractor");
  return r;
}

ExtractorProbe probe_extractor(const ExtractorModel& model,
                               const std::vector<Conversation>& corpus,
                               std::uint64_t seed, std::size_t count) {
  NoGradGuard guard;
  Rng rng(seed);
  ExtractorProbe p;
  std::size_t n = 0;
  LossWeights unit;
  for (const auto& conv : corpus) {
    for (const auto& u : conv.utterances) {
      if (n == count) break;
      const ExtractorStep s = extractor_train_step(u, model.stubs, model.cme, unit, rng);
      p.loss += s.loss.item();
      p.ctc += s.ctc;
      p.speech_l1 += s.speech_l1;
      p.text_l1 += s.text_l1;
      ++n;
    }
  }
  if (n == 0) throw EmptyInputError("probe_extractor: empty corpus");
  const double inv = 1.0 / static_cast<double>(n);
  p.loss *= inv;
  p.ctc *= inv;
  p.speech_l1 *= inv;
  p.text_l1 *= inv;
  return p;
}

std::string EvalReport::to_text() const {
  auto ids = [](const std::vector<TokenId>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
    return s;
  };
  auto window = [](const ContextWindow& w) {
    std::string s = "[";
    for (std::size_t i = 0; i < w.indices.size(); ++i)
      s += (i ? "," : "") + std::to_string(w.indices[i]);
    return s + "]";
  };
  std::ostringstream os;
  os << "mode " << mode << '\n';
  for (const auto& u : utterances) {
    os << "utt " << u.conversation_id << ' ' << u.k << " edits " << u.edits
       << " ref_len " << u.ref.size() << " crm " << window(u.crm_window) << " role "
       << window(u.role_window) << " topical " << window(u.topical_window) << " ref "
       << ids(u.ref) << " | hyp " << ids(u.hyp) << '\n';
  }
  os << "edits " << edits << " ref_tokens " << ref_tokens << '\n';
  os << "CER " << std::setprecision(10) << cer << '\n';
  return os.str();
}

EvalReport evaluate(const std::vector<Conversation>& corpus, const AsrModel& model) {
  NoGradGuard guard;
  EvalReport report;
  report.mode = to_string(model.config.context_mode);
  ContextCache cache(model, corpus);
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    const Conversation& conv = corpus[c];
    for (std::size_t k = 0; k < conv.utterances.size(); ++k) {
      const Utterance& u = conv.utterances[k];
      const UtteranceContext ctx = cache.get(c, k);
      const Tensor z = encode(model, u.frames);
      const Tensor v = decode_v_context(model, ctx);
      UtteranceResult r;
      r.conversation_id = conv.id;
      r.k = k;
      r.ref = u.text;
      r.hyp = greedy_decode(model, z, v, model.config.max_decode_len);
      r.edits = edit_distance(r.ref, r.hyp);
      r.crm_window = ctx.crm_window;
      r.role_window = ctx.role_window;
      r.topical_window = ctx.topical_window;
      report.edits += r.edits;
      report.ref_tokens += r.ref.size();
      report.utterances.push_back(std::move(r));
    }
  }
  if (report.ref_tokens == 0) throw EmptyInputError("evaluate: no reference tokens");
  report.cer = static_cast<double>(report.edits) / static_cast<double>(report.ref_tokens);
  return report;
}

EvalReport evaluate(const std::vector<Conversation>& corpus, const Checkpoint& asr) {
  const AsrModel model = model_from_checkpoint(asr);
  return evaluate(corpus, model);
}

TrainConfig sweep_config(const TrainConfig& base, SweepVariant variant, std::size_t m) {
  TrainConfig c = base;
  switch (variant) {
    case SweepVariant::kCrm:
      c.model.context_mode = ContextMode::kCrm;
      c.model.crm_history = m;
      break;
    case SweepVariant::kCvae:
      c.model.context_mode = ContextMode::kCvae;
      c.model.role_n = m;
      c.model.topical_n = m;
      break;
    case SweepVariant::kHybrid:
      c.model.context_mode = ContextMode::kCvaeCrm;
      c.model.role_n = m;
      c.model.topical_n = m;
      c.model.crm_history = std::min<std::size_t>(m, 1);
      break;
  }
  return c;
}

std::vector<SweepRow> sweep_history_length(const CorpusSplits& corpus,
                                           const TrainConfig& config,
                                           const Checkpoint& stage1,
                                           const Checkpoint& extractor,
                                           const std::vector<std::size_t>& ms,
                                           std::ostream* log) {
  std::vector<SweepRow> rows;
  const auto& held_out = corpus.test.empty() ? corpus.dev : corpus.test;
  for (std::size_t m : ms) {
    SweepRow row;
    row.m = m;
    for (SweepVariant v : {SweepVariant::kCrm, SweepVariant::kCvae, SweepVariant::kHybrid}) {
      const TrainConfig c = sweep_config(config, v, m);
      const StageResult r = train_stage2(corpus.train, stage1, &extractor, c);
      const double value = evaluate(held_out, r.checkpoint).cer;
      if (v == SweepVariant::kCrm) row.crm = value;
      else if (v == SweepVariant::kCvae) row.cvae = value;
      else row.hybrid = value;
      if (log) *log << "sweep m " << m << ' ' << to_string(c.model.context_mode) << " CER "
                    << value << std::endl;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "m CRM CVAE Hybrid\n" << std::setprecision(6);
  for (const auto& r : rows) {
    os << r.m << ' ' << r.crm << ' ' << r.cvae << ' ' << r.hybrid << '\n';
  }
  return os.str();
}

}  // namespace casr

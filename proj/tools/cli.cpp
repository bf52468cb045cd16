#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "casr/checkpoint.hpp"
#include "casr/config.hpp"
#include "casr/conversation.hpp"
#include "casr/errors.hpp"
#include "casr/gradsuite.hpp"
#include "casr/training.hpp"

namespace casr::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

struct ModelFlags {
  std::optional<std::string> mode;
  std::optional<std::string> fusion;
  std::optional<std::string> context;
  std::optional<std::size_t> history;
};

struct StageFlags {
  std::optional<std::size_t> steps;
  std::string resume;
  std::optional<std::size_t> stop_after;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "key: value config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "seed for every random stream");
  sub->add_option("--out", c.out_dir, "output directory");
}

void add_model_flags(CLI::App* sub, ModelFlags& m) {
  sub->add_option("--mode", m.mode, "context mode")
      ->check(CLI::IsMember({"none", "crm", "cvae", "cvae_crm"}));
  sub->add_option("--fusion", m.fusion, "fusion strategy")
      ->check(CLI::IsMember({"attention", "linear"}));
  sub->add_option("--context", m.context, "conversational latents")
      ->check(CLI::IsMember({"role", "topical", "both"}));
  sub->add_option("--history", m.history, "sentences of context history");
}

void add_stage_flags(CLI::App* sub, StageFlags& s) {
  sub->add_option("--steps", s.steps, "override the configured step budget");
  sub->add_option("--resume", s.resume, "continue from a partial checkpoint")
      ->check(CLI::ExistingFile);
  sub->add_option("--stop-after", s.stop_after, "run at most this many steps");
}

TrainConfig base_config(const Common& c) {
  TrainConfig cfg = c.config_path.empty() ? TrainConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void apply_model_flags(TrainConfig& cfg, const ModelFlags& m) {
  AsrConfig& a = cfg.model;
  if (m.mode) a.context_mode = context_mode_from_string(*m.mode);
  if (m.fusion) a.fusion = fusion_from_string(*m.fusion);
  if (m.context) {
    a.use_role = *m.context != "topical";
    a.use_topical = *m.context != "role";
  }
  if (m.history) {
    // CRM history for crm mode, LVM window size for the CVAE modes.
    if (a.context_mode == ContextMode::kCrm) {
      a.crm_history = *m.history;
    } else {
      a.role_n = *m.history;
      a.topical_n = *m.history;
    }
  }
  cfg.validate();
}

RunOptions run_options(const StageFlags& s, const Checkpoint* resume, std::ostream& log) {
  RunOptions o;
  o.log = &log;
  o.resume = resume;
  if (s.stop_after) o.stop_after = *s.stop_after;
  return o;
}

fs::path prepare_out(const Common& c) {
  fs::create_directories(c.out_dir);
  return c.out_dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void finish_stage(const StageResult& r, const fs::path& path, std::ostream& out) {
  save_checkpoint(path, r.checkpoint);
  out << "step " << r.step << (r.finished ? " finished" : " paused") << '\n';
  out << "checkpoint " << path.string() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conversational speech recognition with cross-modal context", "casr"};
  app.require_subcommand(1);

  Common common;
  ModelFlags model_flags;
  StageFlags stage_flags;

  auto* gen = app.add_subcommand("gen-corpus", "write the synthetic train/dev/test corpus");
  add_common(gen, common);

  auto* pre = app.add_subcommand("pretrain-extractor", "pretrain the cross-modal extractor");
  add_common(pre, common);
  add_stage_flags(pre, stage_flags);

  int stage = 1;
  std::string stage1_path, extractor_path;
  auto* train = app.add_subcommand("train", "stage-1 or stage-2 ASR training");
  add_common(train, common);
  add_model_flags(train, model_flags);
  add_stage_flags(train, stage_flags);
  train->add_option("--stage", stage, "1: sentence level, 2: conversational")
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--stage1", stage1_path, "stage-1 checkpoint (default OUT/stage1.ckpt)");
  train->add_option("--extractor", extractor_path,
                    "extractor checkpoint (default OUT/extractor.ckpt)");

  std::string checkpoint_path, split = "test";
  auto* eval = app.add_subcommand("eval", "decode a split and report CER");
  eval->add_option("--checkpoint", checkpoint_path, "ASR checkpoint")->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  eval->add_option("--out", common.out_dir, "directory for report.txt");
  bool eval_details = false;
  eval->add_flag("--details", eval_details, "one line per utterance");

  std::size_t max_history = 5;
  auto* sweep = app.add_subcommand("sweep", "CER against history length for CRM, CVAE and Hybrid");
  add_common(sweep, common);
  sweep->add_option("--fusion", model_flags.fusion)->check(CLI::IsMember({"attention", "linear"}));
  sweep->add_option("--max-history", max_history, "largest m (rows are 0..m)");
  sweep->add_option("--stage1", stage1_path);
  sweep->add_option("--extractor", extractor_path);

  std::size_t instances = 50;
  std::vector<std::string> cases;
  std::uint64_t grad_seed = 1;
  bool list_cases = false;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad->add_option("--seed", grad_seed);
  grad->add_option("--instances", instances)->check(CLI::PositiveNumber);
  grad->add_option("--case", cases, "restrict to these cases");
  grad->add_flag("--list", list_cases, "print case names");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      const TrainConfig cfg = base_config(common);
      const fs::path dir = prepare_out(common);
      const CorpusSplits s = generate_splits(cfg.corpus, cfg.seed);
      save_corpus(dir / "train", s.train);
      save_corpus(dir / "dev", s.dev);
      save_corpus(dir / "test", s.test);
      out << "conversations train " << s.train.size() << " dev " << s.dev.size() << " test "
          << s.test.size() << '\n';
      return kOk;
    }
    if (*pre) {
      TrainConfig cfg = base_config(common);
      if (stage_flags.steps) cfg.extractor_steps = *stage_flags.steps;
      cfg.validate();
      const fs::path dir = prepare_out(common);
      std::optional<Checkpoint> resume;
      if (!stage_flags.resume.empty()) resume = load_checkpoint(stage_flags.resume);
      const CorpusSplits corpus = load_or_generate(cfg);
      const StageResult r = pretrain_extractor(
          corpus.train, cfg, run_options(stage_flags, resume ? &*resume : nullptr, err));
      finish_stage(r, dir / "extractor.ckpt", out);
      return kOk;
    }
    if (*train) {
      TrainConfig cfg = base_config(common);
      if (stage == 1 && model_flags.mode && *model_flags.mode != "none") {
        err << "stage 1 trains the sentence-level model; --mode applies to stage 2\n";
        return kUsage;
      }
      apply_model_flags(cfg, model_flags);
      if (stage_flags.steps) (stage == 1 ? cfg.stage1_steps : cfg.stage2_steps) = *stage_flags.steps;
      const fs::path dir = prepare_out(common);
      std::optional<Checkpoint> resume;
      if (!stage_flags.resume.empty()) resume = load_checkpoint(stage_flags.resume);
      const RunOptions opts = run_options(stage_flags, resume ? &*resume : nullptr, err);
      const CorpusSplits corpus = load_or_generate(cfg);
      if (stage == 1) {
        finish_stage(train_stage1(corpus.train, cfg, opts), dir / "stage1.ckpt", out);
        return kOk;
      }
      const Checkpoint stage1 =
          load_checkpoint(stage1_path.empty() ? dir / "stage1.ckpt" : fs::path(stage1_path));
      std::optional<Checkpoint> extractor;
      if (cfg.model.needs_cme()) {
        extractor = load_checkpoint(extractor_path.empty() ? dir / "extractor.ckpt"
                                                           : fs::path(extractor_path));
      }
      finish_stage(train_stage2(corpus.train, stage1, extractor ? &*extractor : nullptr, cfg, opts),
                   dir / "stage2.ckpt", out);
      return kOk;
    }
    if (*eval) {
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      const CorpusSplits corpus = load_or_generate(config_from_checkpoint(ckpt));
      const auto& data = split == "train" ? corpus.train : split == "dev" ? corpus.dev : corpus.test;
      if (data.empty()) throw ConfigError("split '" + split + "' has no conversations");
      EvalReport report = evaluate(data, ckpt);
      if (!eval_details) report.utterances.clear();
      const std::string text = report.to_text();
      if (eval->count("--out") > 0) write_text(prepare_out(common) / "report.txt", text);
      out << text;
      return kOk;
    }
    if (*sweep) {
      TrainConfig cfg = base_config(common);
      if (model_flags.fusion) cfg.model.fusion = fusion_from_string(*model_flags.fusion);
      cfg.validate();
      const fs::path dir = prepare_out(common);
      const Checkpoint stage1 =
          load_checkpoint(stage1_path.empty() ? dir / "stage1.ckpt" : fs::path(stage1_path));
      const Checkpoint extractor = load_checkpoint(
          extractor_path.empty() ? dir / "extractor.ckpt" : fs::path(extractor_path));
      std::vector<std::size_t> ms(max_history + 1);
      for (std::size_t m = 0; m <= max_history; ++m) ms[m] = m;
      const auto rows = sweep_history_length(load_or_generate(cfg), cfg, stage1, extractor, ms, &err);
      const std::string table = format_sweep(rows);
      write_text(dir / "sweep.txt", table);
      out << table;
      return kOk;
    }
    if (*grad) {
      if (list_cases) {
        for (const auto& name : gradient_suite_cases()) out << name << '\n';
        return kOk;
      }
      const auto known = gradient_suite_cases();
      for (const auto& c : cases) {
        if (std::find(known.begin(), known.end(), c) == known.end()) {
          err << "unknown gradcheck case '" << c << "' (see --list)\n";
          return kUsage;
        }
      }
      const GradSuiteReport report = run_gradient_suite(grad_seed, instances, 1e-4, cases, &out);
      out << "gradcheck suite " << (report.passed() ? "PASS" : "FAIL") << '\n';
      return report.passed() ? kOk : kRuntime;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace casr::cli

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "casr/checkpoint.hpp"
#include "casr/config.hpp"
#include "casr/errors.hpp"
#include "casr/optimizer.hpp"

using namespace casr;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config_text = "seed: 3\nmodel.d: 16\n";
  c.tensors.emplace_back("a", Tensor::matrix({{1.5, -2.25}, {1e-300, 3.0}}));
  c.tensors.emplace_back("b.bias", Tensor::vector({0.1, 0.2, 0.30000000000000004}));
  return c;
}

}  // namespace

TEST(Config, FormatParseRoundTrip) {
  TrainConfig cfg;
  cfg.seed = 42;
  cfg.learning_rate = 3.3e-4;
  cfg.corpus.topic_cue_prob = 0.123456789;
  cfg.model.context_mode = ContextMode::kCvaeCrm;
  cfg.model.fusion = FusionStrategy::kAttention;
  cfg.model.use_role = false;
  cfg.model.crm_history = 4;
  cfg.train_corpus = "data/train";
  const TrainConfig back = parse_config(format_config(cfg));
  EXPECT_EQ(format_config(back), format_config(cfg));
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.learning_rate, 3.3e-4);
  EXPECT_EQ(back.corpus.topic_cue_prob, 0.123456789);
  EXPECT_EQ(back.model.context_mode, ContextMode::kCvaeCrm);
  EXPECT_FALSE(back.model.use_role);
  EXPECT_EQ(back.train_corpus, "data/train");
}

TEST(Config, OverridesCommentsAndErrors) {
  const TrainConfig cfg = parse_config("# comment\nseed: 9\n\nmodel.fusion: attention\n");
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.model.fusion, FusionStrategy::kAttention);
  EXPECT_EQ(cfg.model.d, TrainConfig{}.model.d);
  EXPECT_THROW(parse_config("model.widht: 3\n"), ConfigError);
  EXPECT_THROW(parse_config("seed: many\n"), ConfigError);
  EXPECT_THROW(parse_config("seed 3\n"), ConfigError);
  EXPECT_THROW(parse_config("model.use_role: maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("model.context_mode: everything\n"), ConfigError);
}

TEST(Config, EnumStrings) {
  for (auto m : {ContextMode::kNone, ContextMode::kCrm, ContextMode::kCvae, ContextMode::kCvaeCrm})
    EXPECT_EQ(context_mode_from_string(to_string(m)), m);
  for (auto f : {FusionStrategy::kAttention, FusionStrategy::kLinear})
    EXPECT_EQ(fusion_from_string(to_string(f)), f);
  EXPECT_EQ(to_string(ContextMode::kCvaeCrm), "cvae_crm");
  EXPECT_THROW(fusion_from_string("concat"), ConfigError);
}

TEST(Config, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.model.vocab = 30;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.model.d = 30;  // not divisible by 4 heads
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Checkpoint, SerializeRoundTripIsBitExact) {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 4), "CASR");
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.config_text, c.config_text);
  ASSERT_EQ(back.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape(), c.tensors[i].second.shape());
    const auto x = back.tensors[i].second.data(), y = c.tensors[i].second.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.config_value("model.d"), "16");
  EXPECT_EQ(back.config_value("model.heads", "x"), "x");
  EXPECT_THROW(back.get("missing"), FormatError);
}

TEST(Checkpoint, FileSaveLoadSaveIsIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "casr_unit_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "one", sample_checkpoint());
  save_checkpoint(dir / "two", load_checkpoint(dir / "one"));
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  EXPECT_EQ(slurp(dir / "one"), slurp(dir / "two"));
  EXPECT_THROW(load_checkpoint(dir / "absent"), IoError);
}

TEST(Checkpoint, DamagedBytesAreRejected) {
  std::string bytes = serialize_checkpoint(sample_checkpoint());
  std::string wrong = bytes;
  wrong[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(wrong), FormatError);
  std::string version = bytes;
  version[4] = 99;
  EXPECT_THROW(deserialize_checkpoint(version), FormatError);
  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, cut)), CorruptionError) << cut;
  }
  EXPECT_THROW(deserialize_checkpoint(bytes + "junk"), CorruptionError);
}

TEST(Checkpoint, ParameterLoadingChecksNamesAndShapes) {
  Rng rng(1);
  ParameterStore src;
  src.normal("layer.w", {2, 3}, 1.0, rng);
  src.zeros("layer.b", {3});
  Checkpoint c;
  append_parameters(c, src);

  ParameterStore dst;
  dst.zeros("layer.w", {2, 3});
  dst.zeros("layer.b", {3});
  EXPECT_EQ(load_parameters(dst, c), 2u);
  EXPECT_EQ(dst.get("layer.w").at(1, 2), src.get("layer.w").at(1, 2));

  ParameterStore extra;
  extra.zeros("layer.w", {2, 3});
  extra.zeros("other.w", {1});
  EXPECT_THROW(load_parameters(extra, c), FormatError);
  EXPECT_EQ(load_parameters(extra, c, {"layer."}), 1u);
  EXPECT_EQ(load_parameters(extra, c, {}, false), 1u);

  ParameterStore wrong;
  wrong.zeros("layer.w", {3, 2});
  EXPECT_THROW(load_parameters(wrong, c, {"layer.w"}), FormatError);
}

TEST(Adam, ScheduleWarmsUpThenDecays) {
  AdamOptions o;
  EXPECT_NEAR(scheduled_learning_rate(o, 1), 1e-3 / 200, 1e-18);
  EXPECT_NEAR(scheduled_learning_rate(o, 100), 0.5e-3, 1e-15);
  EXPECT_NEAR(scheduled_learning_rate(o, 200), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_learning_rate(o, 800), 0.5e-3, 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradient) {
  ParameterStore store;
  store.add("x", Tensor::vector({1.0, -1.0}, true));
  AdamOptions o;
  o.warmup_steps = 1;
  Adam adam(store.items(), o);
  Tensor x = store.get("x");
  x.mutable_grad()[0] = 4.0;
  x.mutable_grad()[1] = -0.5;
  adam.step();
  EXPECT_NEAR(x.at(0), 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(x.at(1), -1.0 + 1e-3, 1e-9);
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Adam, StateRoundTripContinuesIdentically) {
  auto make = [] {
    ParameterStore s;
    s.add("w", Tensor::vector({0.5, 2.0, -1.0}, true));
    return s;
  };
  auto push = [](ParameterStore& s, double k) {
    Tensor w = s.get("w");
    for (std::size_t i = 0; i < 3; ++i) w.mutable_grad()[i] = std::sin(k + static_cast<double>(i));
  };
  ParameterStore a = make();
  Adam opt_a(a.items(), AdamOptions{});
  for (int k = 0; k < 3; ++k) {
    push(a, k);
    opt_a.step();
  }
  Checkpoint c;
  append_parameters(c, a);
  opt_a.export_state(c);

  ParameterStore b = make();
  load_parameters(b, c, {"w"});
  Adam opt_b(b.items(), AdamOptions{});
  opt_b.import_state(c, opt_a.steps());
  for (int k = 3; k < 6; ++k) {
    push(a, k);
    opt_a.step();
    push(b, k);
    opt_b.step();
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.get("w").at(i), b.get("w").at(i));
}

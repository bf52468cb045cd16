#include "casr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "casr/errors.hpp"

namespace casr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field number_field(std::string key, T TrainConfig::*member) {
  return {key,
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member, key](TrainConfig& c, const std::string& v) {
            c.*member = parse_number<T>(key, v);
          }};
}

template <typename S, typename T>
Field nested_number(std::string key, S TrainConfig::*outer, T S::*member) {
  return {key,
          [outer, member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*outer.*member);
            else return std::to_string(c.*outer.*member);
          },
          [outer, member, key](TrainConfig& c, const std::string& v) {
            c.*outer.*member = parse_number<T>(key, v);
          }};
}

Field string_field(std::string key, std::string TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return c.*member; },
          [member](TrainConfig& c, const std::string& v) { c.*member = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = TrainConfig;
    std::vector<Field> f;
    f.push_back(number_field("seed", &C::seed));
    f.push_back(number_field("train.learning_rate", &C::learning_rate));
    f.push_back(number_field("train.adam_beta1", &C::adam_beta1));
    f.push_back(number_field("train.adam_beta2", &C::adam_beta2));
    f.push_back(number_field("train.adam_eps", &C::adam_eps));
    f.push_back(number_field("train.warmup_steps", &C::warmup_steps));
    f.push_back(number_field("train.extractor_steps", &C::extractor_steps));
    f.push_back(number_field("train.stage1_steps", &C::stage1_steps));
    f.push_back(number_field("train.stage2_steps", &C::stage2_steps));
    f.push_back(number_field("train.batch_size", &C::batch_size));
    f.push_back(number_field("train.kl_warmup_fraction", &C::kl_warmup_fraction));
    f.push_back(number_field("train.kl_weight_max", &C::kl_weight_max));
    f.push_back(number_field("train.log_every", &C::log_every));
    f.push_back(string_field("data.train", &C::train_corpus));
    f.push_back(string_field("data.dev", &C::dev_corpus));
    f.push_back(string_field("data.test", &C::test_corpus));

    using S = CorpusSpec;
    f.push_back(nested_number("corpus.vocab_size", &C::corpus, &S::vocab_size));
    f.push_back(nested_number("corpus.topics", &C::corpus, &S::topics));
    f.push_back(nested_number("corpus.roles", &C::corpus, &S::roles));
    f.push_back(nested_number("corpus.conversations", &C::corpus, &S::conversations));
    f.push_back(nested_number("corpus.dev_conversations", &C::corpus, &S::dev_conversations));
    f.push_back(nested_number("corpus.test_conversations", &C::corpus, &S::test_conversations));
    f.push_back(nested_number("corpus.utterances_per_conversation", &C::corpus,
                              &S::utterances_per_conversation));
    f.push_back(nested_number("corpus.topic_groups", &C::corpus, &S::topic_groups));
    f.push_back(nested_number("corpus.topic_cues_per_topic", &C::corpus,
                              &S::topic_cues_per_topic));
    f.push_back(nested_number("corpus.role_groups", &C::corpus, &S::role_groups));
    f.push_back(nested_number("corpus.adjacency_cues", &C::corpus, &S::adjacency_cues));
    f.push_back(nested_number("corpus.adjacency_groups", &C::corpus, &S::adjacency_groups));
    f.push_back(nested_number("corpus.topic_cue_prob", &C::corpus, &S::topic_cue_prob));
    f.push_back(nested_number("corpus.role_cue_prob", &C::corpus, &S::role_cue_prob));
    f.push_back(nested_number("corpus.adjacency_prob", &C::corpus, &S::adjacency_prob));
    f.push_back(nested_number("corpus.topic_leak_prob", &C::corpus, &S::topic_leak_prob));
    f.push_back(nested_number("corpus.min_shared", &C::corpus, &S::min_shared));
    f.push_back(nested_number("corpus.max_shared", &C::corpus, &S::max_shared));
    f.push_back(nested_number("corpus.d_raw", &C::corpus, &S::d_raw));
    f.push_back(nested_number("corpus.noise_sigma", &C::corpus, &S::noise_sigma));
    f.push_back(nested_number("corpus.confusable_distance", &C::corpus,
                              &S::confusable_distance));
    f.push_back(nested_number("corpus.min_duration", &C::corpus, &S::min_duration));
    f.push_back(nested_number("corpus.max_duration", &C::corpus, &S::max_duration));

    using M = AsrConfig;
    f.push_back(nested_number("model.vocab", &C::model, &M::vocab));
    f.push_back(nested_number("model.d", &C::model, &M::d));
    f.push_back(nested_number("model.heads", &C::model, &M::heads));
    f.push_back(nested_number("model.ffn_hidden", &C::model, &M::ffn_hidden));
    f.push_back(nested_number("model.conv_kernel", &C::model, &M::conv_kernel));
    f.push_back(nested_number("model.rel_clip", &C::model, &M::rel_clip));
    f.push_back(nested_number("model.encoder_blocks", &C::model, &M::encoder_blocks));
    f.push_back(nested_number("model.decoder_blocks", &C::model, &M::decoder_blocks));
    f.push_back(nested_number("model.cme_blocks", &C::model, &M::cme_blocks));
    f.push_back(nested_number("model.lvm_blocks", &C::model, &M::lvm_blocks));
    f.push_back(nested_number("model.d_raw", &C::model, &M::d_raw));
    f.push_back(nested_number("model.d_z", &C::model, &M::d_z));
    f.push_back({"model.fusion", [](const C& c) { return to_string(c.model.fusion); },
                 [](C& c, const std::string& v) { c.model.fusion = fusion_from_string(v); }});
    f.push_back({"model.context_mode",
                 [](const C& c) { return to_string(c.model.context_mode); },
                 [](C& c, const std::string& v) {
                   c.model.context_mode = context_mode_from_string(v);
                 }});
    f.push_back({"model.use_role",
                 [](const C& c) { return std::string(c.model.use_role ? "true" : "false"); },
                 [](C& c, const std::string& v) {
                   c.model.use_role = parse_bool("model.use_role", v);
                 }});
    f.push_back({"model.use_topical",
                 [](const C& c) { return std::string(c.model.use_topical ? "true" : "false"); },
                 [](C& c, const std::string& v) {
                   c.model.use_topical = parse_bool("model.use_topical", v);
                 }});
    f.push_back({"model.lvm_input", [](const C& c) { return to_string(c.model.lvm_input); },
                 [](C& c, const std::string& v) {
                   c.model.lvm_input = lvm_input_from_string(v);
                 }});
    f.push_back(nested_number("model.crm_history", &C::model, &M::crm_history));
    f.push_back(nested_number("model.topical_n", &C::model, &M::topical_n));
    f.push_back(nested_number("model.role_n", &C::model, &M::role_n));
    f.push_back(nested_number("model.max_decode_len", &C::model, &M::max_decode_len));
    return f;
  }();
  return table;
}

}  // namespace

FusionStrategy fusion_from_string(std::string_view s) {
  if (s == "attention") return FusionStrategy::kAttention;
  if (s == "linear") return FusionStrategy::kLinear;
  throw ConfigError("unknown fusion strategy '" + std::string(s) + "'");
}

ContextMode context_mode_from_string(std::string_view s) {
  if (s == "none") return ContextMode::kNone;
  if (s == "crm") return ContextMode::kCrm;
  if (s == "cvae") return ContextMode::kCvae;
  if (s == "cvae_crm") return ContextMode::kCvaeCrm;
  throw ConfigError("unknown context mode '" + std::string(s) + "'");
}

LvmInput lvm_input_from_string(std::string_view s) {
  if (s == "cross_modal") return LvmInput::kCrossModal;
  if (s == "text") return LvmInput::kText;
  throw ConfigError("unknown LVM input '" + std::string(s) + "'");
}

std::string to_string(FusionStrategy f) {
  return f == FusionStrategy::kAttention ? "attention" : "linear";
}

std::string to_string(ContextMode m) {
  switch (m) {
    case ContextMode::kNone: return "none";
    case ContextMode::kCrm: return "crm";
    case ContextMode::kCvae: return "cvae";
    case ContextMode::kCvaeCrm: return "cvae_crm";
  }
  return "none";
}

std::string to_string(LvmInput l) {
  return l == LvmInput::kCrossModal ? "cross_modal" : "text";
}

BlockDims AsrConfig::dims() const {
  BlockDims b;
  b.d = d;
  b.heads = heads;
  b.ffn_hidden = ffn_hidden;
  b.conv_kernel = conv_kernel;
  b.rel_clip = rel_clip;
  return b;
}

bool AsrConfig::uses_crm() const {
  return context_mode == ContextMode::kCrm || context_mode == ContextMode::kCvaeCrm;
}

bool AsrConfig::uses_cvae() const {
  return context_mode == ContextMode::kCvae || context_mode == ContextMode::kCvaeCrm;
}

bool AsrConfig::needs_cme() const {
  return uses_crm() || (uses_cvae() && lvm_input == LvmInput::kCrossModal);
}

void AsrConfig::validate() const {
  dims().validate();
  if (vocab <= 4) throw ConfigError("vocabulary must exceed the reserved ids");
  if (d_raw == 0 || d_z == 0) throw ConfigError("feature widths must be positive");
  if (encoder_blocks == 0 || decoder_blocks == 0) {
    throw ConfigError("encoder and decoder need at least one block");
  }
  if (uses_cvae() && !use_role && !use_topical) {
    throw ConfigError("cvae modes need the role or the topical component");
  }
  if (max_decode_len == 0) throw ConfigError("max_decode_len must be positive");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (kl_warmup_fraction < 0 || kl_warmup_fraction > 1) {
    throw ConfigError("kl warmup fraction must lie in [0, 1]");
  }
  if (kl_weight_max < 0 || kl_weight_max > 1) {
    throw ConfigError("kl weight ceiling must lie in [0, 1]");
  }
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  corpus.validate();
  model.validate();
  if (model.vocab != corpus.vocab_size || model.d_raw != corpus.d_raw) {
    throw ConfigError("model vocabulary/feature width must match the corpus");
  }
}

std::string format_config(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + ": " + f.get(config) + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": missing ':'");
    }
    out.emplace_back(trim(std::string_view(line).substr(0, colon)),
                     trim(std::string_view(line).substr(colon + 1)));
  }
  return out;
}

TrainConfig parse_config(std::string_view text, const TrainConfig& base) {
  TrainConfig c = base;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key.rfind("state.", 0) == 0) continue;
    bool found = false;
    for (const auto& f : fields()) {
      if (f.key == key) {
        f.set(c, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace casr

#include "casr/conversation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "casr/binary_io.hpp"
#include "casr/errors.hpp"

namespace casr {

namespace {

constexpr char kFramesMagic[4] = {'C', 'F', 'R', 'M'};
constexpr std::uint32_t kFramesVersion = 1;

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::string join_ids(const std::vector<TokenId>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) os << ' ';
    os << ids[i];
  }
  return os.str();
}

std::vector<TokenId> split_ids(const std::string& text) {
  std::istringstream is(text);
  std::vector<TokenId> ids;
  long long v;
  while (is >> v) ids.push_back(static_cast<TokenId>(v));
  if (!is.eof()) throw FormatError("malformed token text: \"" + text + "\"");
  return ids;
}

}  // namespace

std::string speaker_name(Speaker s) { return s == Speaker::kA ? "A" : "B"; }

ContextWindow build_topical_context(std::size_t k, std::size_t n) {
  ContextWindow w{ContextKind::kTopical, {}};
  for (std::size_t i = k > n ? k - n : 0; i < k; ++i) w.indices.push_back(i);
  return w;
}

ContextWindow build_role_context(std::size_t k, std::size_t n) {
  ContextWindow w{ContextKind::kRole, {}};
  for (std::size_t j = n; j >= 1; --j) {
    if (2 * j <= k) w.indices.push_back(k - 2 * j);
  }
  return w;
}

ContextWindow build_crm_context(std::size_t k, std::size_t history) {
  ContextWindow w{ContextKind::kCrm, {}};
  for (std::size_t i = k > history ? k - history : 0; i <= k; ++i) {
    w.indices.push_back(i);
  }
  return w;
}

void CorpusSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("corpus: " + msg); };
  if (vocab_size < 20) fail("vocab_size must be at least 20");
  if (topics < 3) fail("topics must be at least 3");
  if (roles < 2) fail("roles must be at least 2");
  if (conversations < 1) fail("conversations must be at least 1");
  if (utterances_per_conversation < 2) fail("need at least 2 utterances");
  if (topic_groups < 1) fail("need at least one confusable topic group");
  if (adjacency_cues > 0 && adjacency_groups < 1) {
    fail("adjacency cues need at least one response group");
  }
  if (min_shared > max_shared) fail("min_shared exceeds max_shared");
  if (d_raw < 1) fail("d_raw must be positive");
  if (noise_sigma < 0 || confusable_distance < 0) fail("negative noise level");
  if (min_duration < 1 || min_duration > max_duration) fail("bad duration range");
  for (double p : {topic_cue_prob, role_cue_prob, adjacency_prob, topic_leak_prob}) {
    if (p < 0 || p > 1) fail("probabilities must lie in [0, 1]");
  }
  const std::size_t used = topic_groups * topics + topic_cues_per_topic * topics +
                           role_groups * roles + roles + adjacency_cues +
                           adjacency_groups * adjacency_cues;
  const std::size_t available = vocab_size - SpecialTokens::kFirstRegular;
  if (used >= available) {
    fail("lexicon layout needs " + std::to_string(used + 1) +
         " regular tokens but vocabulary only has " + std::to_string(available));
  }
}

TokenLayout TokenLayout::from_spec(const CorpusSpec& spec) {
  spec.validate();
  TokenLayout l;
  TokenId next = SpecialTokens::kFirstRegular;
  l.topic_groups.assign(spec.topic_groups, {});
  for (auto& g : l.topic_groups)
    for (std::size_t t = 0; t < spec.topics; ++t) g.push_back(next++);
  l.topic_cues.assign(spec.topics, {});
  for (auto& c : l.topic_cues)
    for (std::size_t j = 0; j < spec.topic_cues_per_topic; ++j) c.push_back(next++);
  l.role_groups.assign(spec.role_groups, {});
  for (auto& g : l.role_groups)
    for (std::size_t r = 0; r < spec.roles; ++r) g.push_back(next++);
  for (std::size_t r = 0; r < spec.roles; ++r) l.role_cues.push_back(next++);
  for (std::size_t c = 0; c < spec.adjacency_cues; ++c) l.adjacency_cues.push_back(next++);
  l.adjacency_groups.assign(spec.adjacency_groups, {});
  for (auto& g : l.adjacency_groups)
    for (std::size_t c = 0; c < spec.adjacency_cues; ++c) g.push_back(next++);
  while (static_cast<std::size_t>(next) < spec.vocab_size) l.shared.push_back(next++);
  return l;
}

std::vector<std::vector<TokenId>> TokenLayout::confusable_sets() const {
  std::vector<std::vector<TokenId>> sets;
  for (const auto& g : topic_groups) sets.push_back(g);
  for (const auto& g : role_groups) sets.push_back(g);
  for (const auto& g : adjacency_groups) sets.push_back(g);
  return sets;
}

std::vector<TokenId> TokenLayout::topic_lexicon(int topic) const {
  std::vector<TokenId> out;
  for (const auto& g : topic_groups) out.push_back(g.at(topic));
  for (TokenId c : topic_cues.at(topic)) out.push_back(c);
  return out;
}

FrameSynthesizer::FrameSynthesizer(const CorpusSpec& spec, std::uint64_t seed)
    : spec_(spec), layout_(TokenLayout::from_spec(spec)) {
  const std::size_t v = spec.vocab_size, d = spec.d_raw;
  Rng rng(derive_seed(seed, "codebook"));
  std::vector<int> set_of(v, -1);
  const auto sets = layout_.confusable_sets();
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (TokenId t : sets[s]) set_of[t] = static_cast<int>(s);

  // One base vector per acoustic class: each confusable set and each
  // remaining regular token. Resample until classes are well separated.
  const std::size_t classes = sets.size() + [&] {
    std::size_t n = 0;
    for (std::size_t t = SpecialTokens::kFirstRegular; t < v; ++t) n += set_of[t] < 0;
    return n;
  }();
  const double min_gap = 6.0 * spec.noise_sigma + spec.confusable_distance;
  std::vector<std::vector<double>> bases;
  while (bases.size() < classes) {
    std::vector<double> cand(d);
    for (double& x : cand) x = sample_normal(rng);
    bool ok = true;
    for (const auto& b : bases) ok = ok && distance(b, cand) > min_gap;
    if (ok) bases.push_back(std::move(cand));
  }

  std::vector<double> book(v * d, 0.0);
  std::size_t next_single = sets.size();
  const double radius = spec.confusable_distance / 2.0;
  for (std::size_t t = SpecialTokens::kFirstRegular; t < v; ++t) {
    const auto& base = set_of[t] >= 0 ? bases[set_of[t]] : bases[next_single++];
    std::vector<double> offset(d, 0.0);
    if (set_of[t] >= 0 && radius > 0) {
      double norm = 0.0;
      for (double& x : offset) {
        x = sample_normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : offset) x *= radius / norm;
    }
    for (std::size_t c = 0; c < d; ++c) book[t * d + c] = base[c] + offset[c];
  }
  codebook_ = Tensor({v, d}, std::move(book));
}

SynthesizedFrames FrameSynthesizer::synthesize(std::span<const TokenId> text,
                                               Rng& rng,
                                               const SynthesisOptions& options) const {
  if (text.empty()) throw EmptyInputError("synthesize_frames: empty text");
  const std::size_t d = spec_.d_raw;
  const double sigma = options.noise_sigma < 0 ? spec_.noise_sigma : options.noise_sigma;
  const auto book = codebook_.data();
  SynthesizedFrames out;
  std::vector<double> frames;
  for (TokenId tok : text) {
    if (tok < SpecialTokens::kFirstRegular ||
        static_cast<std::size_t>(tok) >= spec_.vocab_size) {
      throw VocabularyError("synthesize_frames: token " + std::to_string(tok) +
                            " has no acoustic realization");
    }
    int dur = options.fixed_duration;
    if (dur <= 0) {
      dur = spec_.min_duration +
            static_cast<int>(sample_index(
                rng, static_cast<std::size_t>(spec_.max_duration - spec_.min_duration + 1)));
    }
    out.durations.push_back(dur);
    for (int f = 0; f < dur; ++f) {
      for (std::size_t c = 0; c < d; ++c) {
        double x = book[tok * d + c];
        if (sigma > 0) x += sample_normal(rng, 0.0, sigma);
        frames.push_back(x);
      }
    }
  }
  const std::size_t t = frames.size() / d;
  out.frames = Tensor({t, d}, std::move(frames));
  return out;
}

SynthesizedFrames FrameSynthesizer::synthesize(std::span<const TokenId> text,
                                               std::uint64_t seed,
                                               const SynthesisOptions& options) const {
  Rng rng(seed);
  return synthesize(text, rng, options);
}

namespace {

Conversation generate_conversation(const CorpusSpec& spec, const TokenLayout& lay,
                                   const FrameSynthesizer& synth, Rng& rng,
                                   const std::string& id) {
  Conversation conv;
  conv.id = id;
  conv.topic = static_cast<int>(sample_index(rng, spec.topics));
  conv.roles[0] = static_cast<int>(sample_index(rng, spec.roles));
  conv.roles[1] = static_cast<int>(sample_index(rng, spec.roles - 1));
  if (conv.roles[1] >= conv.roles[0]) ++conv.roles[1];

  auto topic_draw = [&] {
    if (sample_uniform(rng) < spec.topic_leak_prob) {
      return static_cast<int>(sample_index(rng, spec.topics));
    }
    return conv.topic;
  };

  int pending_cue = -1;
  for (std::size_t k = 0; k < spec.utterances_per_conversation; ++k) {
    Utterance u;
    u.index = k;
    u.speaker = k % 2 == 0 ? Speaker::kA : Speaker::kB;
    const int role = conv.roles[k % 2];
    auto& text = u.text;

    if (pending_cue >= 0) {
      for (const auto& g : lay.adjacency_groups) text.push_back(g[pending_cue]);
      pending_cue = -1;
    } else if (!lay.adjacency_cues.empty() &&
               sample_uniform(rng) < spec.adjacency_prob) {
      pending_cue = static_cast<int>(sample_index(rng, lay.adjacency_cues.size()));
      text.push_back(lay.adjacency_cues[pending_cue]);
    }

    const auto& tg = lay.topic_groups[sample_index(rng, lay.topic_groups.size())];
    text.push_back(tg[topic_draw()]);
    if (!lay.topic_cues.front().empty() && sample_uniform(rng) < spec.topic_cue_prob) {
      const auto& cues = lay.topic_cues[topic_draw()];
      text.push_back(cues[sample_index(rng, cues.size())]);
    }
    if (!lay.role_groups.empty()) {
      text.push_back(lay.role_groups[sample_index(rng, lay.role_groups.size())][role]);
    }
    if (sample_uniform(rng) < spec.role_cue_prob) text.push_back(lay.role_cues[role]);

    const std::size_t fillers =
        spec.min_shared + sample_index(rng, spec.max_shared - spec.min_shared + 1);
    for (std::size_t i = 0; i < fillers; ++i) {
      text.push_back(lay.shared[sample_index(rng, lay.shared.size())]);
    }
    std::shuffle(text.begin(), text.end(), rng);

    auto synth_out = synth.synthesize(text, rng);
    u.frames = std::move(synth_out.frames);
    u.durations = std::move(synth_out.durations);
    conv.utterances.push_back(std::move(u));
  }
  return conv;
}

}  // namespace

std::vector<Conversation> generate_corpus(const CorpusSpec& spec,
                                          std::uint64_t seed,
                                          const std::string& split) {
  spec.validate();
  const FrameSynthesizer synth(spec, seed);
  std::size_t count = spec.conversations;
  if (split == "dev") count = spec.dev_conversations;
  else if (split == "test") count = spec.test_conversations;
  else if (split != "train") throw ConfigError("unknown corpus split \"" + split + "\"");

  std::vector<Conversation> corpus;
  corpus.reserve(count);
  const std::uint64_t split_seed = derive_seed(seed, "split:" + split);
  for (std::size_t c = 0; c < count; ++c) {
    Rng rng(derive_seed(split_seed, static_cast<std::uint64_t>(c)));
    corpus.push_back(generate_conversation(spec, synth.layout(), synth, rng,
                                           split + "-" + std::to_string(c)));
  }
  return corpus;
}

CorpusSplits generate_splits(const CorpusSpec& spec, std::uint64_t seed) {
  return {generate_corpus(spec, seed, "train"), generate_corpus(spec, seed, "dev"),
          generate_corpus(spec, seed, "test")};
}

void save_corpus(const std::filesystem::path& prefix,
                 const std::vector<Conversation>& corpus) {
  auto jsonl_path = prefix;
  jsonl_path += ".jsonl";
  auto frames_path = prefix;
  frames_path += ".cfrm";
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  std::ofstream text(jsonl_path);
  std::ofstream frames(frames_path, std::ios::binary);
  if (!text || !frames) throw IoError("cannot write corpus at " + prefix.string());

  frames.write(kFramesMagic, 4);
  binary::write_le<std::uint32_t>(frames, kFramesVersion);
  std::uint64_t ref = 0;
  for (const auto& conv : corpus) {
    nlohmann::json j;
    j["id"] = conv.id;
    j["topic"] = conv.topic;
    j["roles"] = {conv.roles[0], conv.roles[1]};
    auto& utts = j["utterances"] = nlohmann::json::array();
    for (const auto& u : conv.utterances) {
      utts.push_back({{"speaker", speaker_name(u.speaker)},
                      {"text", join_ids(u.text)},
                      {"durations", u.durations},
                      {"frames_ref", ref++}});
      binary::write_le<std::uint32_t>(frames, static_cast<std::uint32_t>(u.frames.dim(0)));
      binary::write_le<std::uint32_t>(frames, static_cast<std::uint32_t>(u.frames.dim(1)));
      for (double x : u.frames.data()) binary::write_le<double>(frames, x);
    }
    text << j.dump() << '\n';
  }
  if (!text || !frames) throw IoError("failed writing corpus at " + prefix.string());
}

std::vector<Conversation> load_corpus(const std::filesystem::path& prefix) {
  auto jsonl_path = prefix;
  jsonl_path += ".jsonl";
  auto frames_path = prefix;
  frames_path += ".cfrm";
  std::ifstream text(jsonl_path);
  std::ifstream frames(frames_path, std::ios::binary);
  if (!text || !frames) throw IoError("cannot open corpus at " + prefix.string());

  if (binary::read_bytes(frames, 4) != std::string(kFramesMagic, 4)) {
    throw FormatError("frames file has wrong magic");
  }
  const auto version = binary::read_le<std::uint32_t>(frames);
  if (version != kFramesVersion) {
    throw FormatError("unsupported frames version " + std::to_string(version));
  }
  std::vector<Tensor> all_frames;
  while (frames.peek() != std::char_traits<char>::eof()) {
    const auto t = binary::read_le<std::uint32_t>(frames);
    const auto d = binary::read_le<std::uint32_t>(frames);
    std::vector<double> data(static_cast<std::size_t>(t) * d);
    for (double& x : data) x = binary::read_le<double>(frames);
    all_frames.emplace_back(Shape{t, d}, std::move(data));
  }

  std::vector<Conversation> corpus;
  std::string line;
  while (std::getline(text, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Conversation conv;
      conv.id = j.at("id").get<std::string>();
      conv.topic = j.at("topic").get<int>();
      if (j.contains("roles")) {
        conv.roles = {j["roles"].at(0).get<int>(), j["roles"].at(1).get<int>()};
      }
      std::size_t k = 0;
      for (const auto& ju : j.at("utterances")) {
        Utterance u;
        u.index = k++;
        const auto sp = ju.at("speaker").get<std::string>();
        if (sp != "A" && sp != "B") throw FormatError("unknown speaker " + sp);
        u.speaker = sp == "A" ? Speaker::kA : Speaker::kB;
        u.text = split_ids(ju.at("text").get<std::string>());
        u.durations = ju.at("durations").get<std::vector<int>>();
        const auto ref = ju.at("frames_ref").get<std::size_t>();
        if (ref >= all_frames.size()) {
          throw FormatError("frames_ref " + std::to_string(ref) + " out of range");
        }
        u.frames = all_frames[ref];
        conv.utterances.push_back(std::move(u));
      }
      corpus.push_back(std::move(conv));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed corpus line: ") + e.what());
    }
  }
  return corpus;
}

}  // namespace casr

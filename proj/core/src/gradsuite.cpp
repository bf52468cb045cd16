#include "casr/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

#include "casr/asr_model.hpp"
#include "casr/blocks.hpp"
#include "casr/conversation.hpp"
#include "casr/cvae.hpp"
#include "casr/errors.hpp"
#include "casr/extractor.hpp"
#include "casr/gradcheck.hpp"
#include "casr/objectives.hpp"
#include "casr/ops.hpp"
#include "casr/parameters.hpp"

namespace casr {

namespace {

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sample_normal(rng, 0.0, scale);
  return Tensor(std::move(shape), std::move(v));
}

// Values bounded away from zero, for ops with a kink or pole there.
Tensor away_from_zero(Shape shape, Rng& rng, double lo = 0.2, double hi = 1.5) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sample_uniform(rng, lo, hi) * (sample_uniform(rng) < 0.5 ? -1 : 1);
  return Tensor(std::move(shape), std::move(v));
}

Tensor positive(Shape shape, Rng& rng, double lo = 0.3, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sample_uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Random linear functional of y, so no output component cancels out.
Tensor probe(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

std::size_t dim_between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + sample_index(rng, hi - lo + 1);
}

void randomize(ParameterStore& store, Rng& rng) {
  for (const auto& p : store.items()) {
    if (!p.tensor.requires_grad()) continue;
    Tensor t = p.tensor;
    const bool is_gamma = p.name.size() >= 6 && p.name.ends_with(".gamma");
    for (double& x : t.mutable_data()) {
      x = is_gamma ? sample_uniform(rng, 0.5, 1.5) : sample_normal(rng, 0.0, 0.4);
    }
  }
}

BlockDims small_dims() {
  BlockDims d;
  d.d = 8;
  d.heads = 2;
  d.ffn_hidden = 12;
  d.conv_kernel = 3;
  d.rel_clip = 3;
  return d;
}

using Case = std::function<double(Rng&)>;

double check(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
             std::size_t max_coords = 0) {
  GradCheckOptions o;
  o.max_coords_per_tensor = max_coords;
  return grad_check(f, std::move(wrt), o);
}

// Single-output elementwise or shape op on one random input.
Case unary_case(std::function<Tensor(const Tensor&)> op,
                std::function<Tensor(Shape, Rng&)> input) {
  return [op, input](Rng& rng) {
    const Shape s{dim_between(rng, 1, 4), dim_between(rng, 1, 5)};
    Tensor x = input(s, rng);
    const Tensor y0 = op(x);
    const Tensor w = randn(y0.shape(), rng);
    return check([&] { return probe(op(x), w); }, {x});
  };
}

Case binary_case(std::function<Tensor(const Tensor&, const Tensor&)> op,
                 std::function<Tensor(Shape, Rng&)> second) {
  return [op, second](Rng& rng) {
    const Shape s{dim_between(rng, 1, 4), dim_between(rng, 1, 5)};
    Tensor a = randn(s, rng);
    Tensor b = second(s, rng);
    const Tensor w = randn(s, rng);
    return check([&] { return probe(op(a, b), w); }, {a, b});
  };
}

Tensor plain(Shape s, Rng& rng) { return randn(std::move(s), rng); }

CorpusSpec tiny_corpus_spec() {
  CorpusSpec s;
  s.vocab_size = 20;
  s.topics = 3;
  s.roles = 2;
  s.conversations = 1;
  s.dev_conversations = 1;
  s.test_conversations = 1;
  s.utterances_per_conversation = 5;
  s.topic_groups = 1;
  s.topic_cues_per_topic = 1;
  s.role_groups = 1;
  s.adjacency_cues = 2;
  s.adjacency_groups = 1;
  s.min_shared = 1;
  s.max_shared = 2;
  s.d_raw = 5;
  s.min_duration = 1;
  s.max_duration = 2;
  return s;
}

AsrConfig tiny_asr_config() {
  AsrConfig c;
  c.vocab = 20;
  c.d = 8;
  c.heads = 2;
  c.ffn_hidden = 12;
  c.conv_kernel = 3;
  c.rel_clip = 3;
  c.encoder_blocks = 1;
  c.decoder_blocks = 1;
  c.cme_blocks = 1;
  c.lvm_blocks = 1;
  c.d_raw = 5;
  c.d_z = 4;
  return c;
}

std::vector<std::pair<std::string, Case>> make_cases() {
  std::vector<std::pair<std::string, Case>> cases;
  auto add_case = [&](std::string name, Case c) { cases.emplace_back(std::move(name), std::move(c)); };

  add_case("matmul", [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4), k = dim_between(rng, 1, 4),
                      n = dim_between(rng, 1, 4);
    Tensor a = randn({m, k}, rng), b = randn({k, n}, rng);
    const Tensor w = randn({m, n}, rng);
    return check([&] { return probe(matmul(a, b), w); }, {a, b});
  });
  add_case("matmul_transposed", [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4), k = dim_between(rng, 1, 4),
                      n = dim_between(rng, 1, 4);
    Tensor a = randn({m, k}, rng), b = randn({n, k}, rng);
    const Tensor w = randn({m, n}, rng);
    return check([&] { return probe(matmul_transposed(a, b), w); }, {a, b});
  });
  add_case("transpose", unary_case([](const Tensor& x) { return transpose(x); }, plain));
  add_case("add", binary_case([](const Tensor& a, const Tensor& b) { return add(a, b); }, plain));
  add_case("sub", binary_case([](const Tensor& a, const Tensor& b) { return sub(a, b); }, plain));
  add_case("mul", binary_case([](const Tensor& a, const Tensor& b) { return mul(a, b); }, plain));
  add_case("div", binary_case([](const Tensor& a, const Tensor& b) { return div(a, b); },
                              [](Shape s, Rng& r) { return away_from_zero(std::move(s), r, 0.5); }));
  add_case("add_row", [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4), n = dim_between(rng, 1, 5);
    Tensor x = randn({m, n}, rng), row = randn({n}, rng);
    const Tensor w = randn({m, n}, rng);
    return check([&] { return probe(add_row(x, row), w); }, {x, row});
  });
  add_case("scale", unary_case([](const Tensor& x) { return scale(x, -1.7); }, plain));
  add_case("add_scalar", unary_case([](const Tensor& x) { return add_scalar(x, 0.3); }, plain));
  add_case("neg", unary_case([](const Tensor& x) { return neg(x); }, plain));
  add_case("sum", unary_case([](const Tensor& x) { return sum(x); }, plain));
  add_case("mean", unary_case([](const Tensor& x) { return mean(x); }, plain));
  add_case("exp", unary_case([](const Tensor& x) { return exp(x); }, plain));
  add_case("log", unary_case([](const Tensor& x) { return log(x); },
                             [](Shape s, Rng& r) { return positive(std::move(s), r); }));
  add_case("square", unary_case([](const Tensor& x) { return square(x); }, plain));
  add_case("abs", unary_case([](const Tensor& x) { return abs(x); },
                             [](Shape s, Rng& r) { return away_from_zero(std::move(s), r); }));
  for (Activation a : {Activation::kSwish, Activation::kSigmoid, Activation::kTanh,
                       Activation::kSoftplus, Activation::kRelu}) {
    auto input = a == Activation::kRelu
                     ? std::function<Tensor(Shape, Rng&)>(
                           [](Shape s, Rng& r) { return away_from_zero(std::move(s), r); })
                     : std::function<Tensor(Shape, Rng&)>(plain);
    add_case(std::string(activation_name(a)),
             unary_case([a](const Tensor& x) { return activation(a, x); }, input));
  }
  add_case("softmax_last", unary_case([](const Tensor& x) { return softmax(x, -1); }, plain));
  add_case("softmax_first", unary_case([](const Tensor& x) { return softmax(x, 0); }, plain));
  add_case("log_softmax", unary_case([](const Tensor& x) { return log_softmax(x); }, plain));
  add_case("layer_norm", [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4), n = dim_between(rng, 2, 6);
    Tensor x = randn({m, n}, rng), g = randn({n}, rng), b = randn({n}, rng);
    const Tensor w = randn({m, n}, rng);
    return check([&] { return probe(layer_norm(x, g, b), w); }, {x, g, b});
  });
  add_case("conv1d_depthwise", [](Rng& rng) {
    const std::size_t t = dim_between(rng, 1, 6), d = dim_between(rng, 1, 4);
    const std::size_t k = 2 * dim_between(rng, 0, 2) + 1;
    Tensor x = randn({t, d}, rng), kernel = randn({k, d}, rng);
    const Tensor w = randn({t, d}, rng);
    return check([&] { return probe(conv1d_depthwise(x, kernel), w); }, {x, kernel});
  });
  add_case("mean_pool", unary_case([](const Tensor& x) { return mean_pool(x); }, plain));
  add_case("concat_rows", [](Rng& rng) {
    const std::size_t n = dim_between(rng, 1, 4);
    Tensor a = randn({dim_between(rng, 1, 3), n}, rng), b = randn({dim_between(rng, 1, 3), n}, rng);
    const Tensor w = randn({a.rows() + b.rows(), n}, rng);
    return check([&] { return probe(concat_rows({a, b}), w); }, {a, b});
  });
  add_case("concat_cols", [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4);
    Tensor a = randn({m, dim_between(rng, 1, 3)}, rng), b = randn({m, dim_between(rng, 1, 3)}, rng);
    const Tensor w = randn({m, a.cols() + b.cols()}, rng);
    return check([&] { return probe(concat_cols({a, b}), w); }, {a, b});
  });
  add_case("slice_rows", unary_case([](const Tensor& x) {
    return slice_rows(x, x.rows() / 2, x.rows()); }, plain));
  add_case("slice_cols", unary_case([](const Tensor& x) {
    return slice_cols(x, x.cols() / 2, x.cols()); }, plain));
  add_case("gather_rows", [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 4), n = dim_between(rng, 1, 4);
    Tensor x = randn({m, n}, rng);
    std::vector<std::size_t> idx(dim_between(rng, 1, 6));
    for (auto& i : idx) i = sample_index(rng, m);
    const Tensor w = randn({idx.size(), n}, rng);
    return check([&] { return probe(gather_rows(x, idx), w); }, {x});
  });
  add_case("where_rows", [](Rng& rng) {
    const std::size_t m = dim_between(rng, 1, 5), n = dim_between(rng, 1, 4);
    Tensor x = randn({m, n}, rng), fill = randn({n}, rng);
    std::vector<bool> mask(m);
    for (std::size_t i = 0; i < m; ++i) mask[i] = sample_uniform(rng) < 0.5;
    const Tensor w = randn({m, n}, rng);
    return check([&] { return probe(where_rows(x, mask, fill), w); }, {x, fill});
  });
  add_case("reshape", unary_case([](const Tensor& x) { return reshape(x, {x.numel()}); }, plain));
  add_case("relative_bias", [](Rng& rng) {
    const std::size_t heads = 2, clip = dim_between(rng, 1, 3);
    Tensor table = randn({heads, 2 * clip + 1}, rng);
    const std::size_t tq = dim_between(rng, 1, 5), tk = dim_between(rng, 1, 5);
    const std::size_t h = sample_index(rng, heads);
    const Tensor w = randn({tq, tk}, rng);
    return check([&] { return probe(relative_bias(table, h, tq, tk, clip), w); }, {table});
  });
  add_case("masked_fill", [](Rng& rng) {
    const std::size_t t = dim_between(rng, 1, 5);
    Tensor x = randn({t, t}, rng);
    const AttentionMask mask = AttentionMask::causal(t);
    const Tensor w = randn({t, t}, rng);
    return check([&] { return probe(softmax(masked_fill(x, mask), -1), w); }, {x});
  });

  add_case("linear", [](Rng& rng) {
    ParameterStore store;
    const std::size_t in = dim_between(rng, 1, 5), out = dim_between(rng, 1, 5);
    const Linear l = make_linear(store, "l", in, out, rng);
    randomize(store, rng);
    Tensor x = randn({dim_between(rng, 1, 4), in}, rng);
    const Tensor w = randn({x.rows(), out}, rng);
    auto wrt = store.trainable();
    wrt.push_back(x);
    return check([&] { return probe(l(x), w); }, wrt);
  });
  add_case("feed_forward", [](Rng& rng) {
    ParameterStore store;
    const FeedForwardParams p = make_feed_forward(store, "f", 6, 10, rng);
    randomize(store, rng);
    Tensor x = randn({dim_between(rng, 1, 4), 6}, rng);
    const Tensor w = randn(x.shape(), rng);
    auto wrt = store.trainable();
    wrt.push_back(x);
    return check([&] { return probe(ffn_forward(x, p), w); }, wrt);
  });
  add_case("mhsa", [](Rng& rng) {
    ParameterStore store;
    const AttentionParams p = make_attention(store, "a", small_dims(), rng, true);
    randomize(store, rng);
    const std::size_t t = dim_between(rng, 1, 6);
    Tensor x = randn({t, 8}, rng);
    const bool causal = sample_uniform(rng) < 0.5;
    const AttentionMask mask = AttentionMask::causal(t);
    const Tensor w = randn({t, 8}, rng);
    auto wrt = store.trainable();
    wrt.push_back(x);
    return check([&] { return probe(mhsa_forward(x, p, causal ? &mask : nullptr), w); }, wrt);
  });
  add_case("mha", [](Rng& rng) {
    ParameterStore store;
    const AttentionParams p = make_attention(store, "a", small_dims(), rng, false);
    randomize(store, rng);
    Tensor q = randn({dim_between(rng, 1, 5), 8}, rng);
    Tensor mem = randn({dim_between(rng, 1, 6), 8}, rng);
    const Tensor w = randn(q.shape(), rng);
    auto wrt = store.trainable();
    wrt.push_back(q);
    wrt.push_back(mem);
    return check([&] { return probe(mha_forward(q, mem, p), w); }, wrt);
  });
  add_case("conv_module", [](Rng& rng) {
    ParameterStore store;
    const ConvModuleParams p = make_conv_module(store, "c", small_dims(), rng);
    randomize(store, rng);
    Tensor x = randn({dim_between(rng, 1, 6), 8}, rng);
    const Tensor w = randn(x.shape(), rng);
    auto wrt = store.trainable();
    wrt.push_back(x);
    return check([&] { return probe(conv_module_forward(x, p), w); }, wrt);
  });
  add_case("conformer_block", [](Rng& rng) {
    ParameterStore store;
    const ConformerBlockParams p = make_conformer_block(store, "b", small_dims(), rng);
    randomize(store, rng);
    Tensor x = randn({dim_between(rng, 1, 6), 8}, rng);
    const Tensor w = randn(x.shape(), rng);
    auto wrt = store.trainable();
    wrt.push_back(x);
    return check([&] { return probe(conformer_block_forward(x, p), w); }, wrt, 24);
  });
  add_case("transformer_block", [](Rng& rng) {
    ParameterStore store;
    const TransformerBlockParams p = make_transformer_block(store, "b", small_dims(), rng);
    randomize(store, rng);
    Tensor x = randn({dim_between(rng, 1, 6), 8}, rng);
    const Tensor w = randn(x.shape(), rng);
    auto wrt = store.trainable();
    wrt.push_back(x);
    return check([&] { return probe(transformer_block_forward(x, p), w); }, wrt, 24);
  });
  for (bool with_context : {false, true}) {
    add_case(with_context ? "decoder_block_attention" : "decoder_block",
             [with_context](Rng& rng) {
      ParameterStore store;
      const DecoderBlockParams p =
          make_decoder_block(store, "d", small_dims(), rng, with_context);
      randomize(store, rng);
      Tensor q = randn({dim_between(rng, 1, 5), 8}, rng);
      Tensor z = randn({dim_between(rng, 1, 6), 8}, rng);
      Tensor v = randn({dim_between(rng, 1, 4), 8}, rng);
      const Tensor w = randn(q.shape(), rng);
      auto wrt = store.trainable();
      wrt.insert(wrt.end(), {q, z});
      if (with_context) wrt.push_back(v);
      const DecoderMode mode =
          with_context ? DecoderMode::kAttentionCondition : DecoderMode::kBaseline;
      return check([&] { return probe(decoder_block_forward(q, z, &v, p, mode), w); },
                   wrt, 24);
    });
  }

  add_case("cross_entropy", [](Rng& rng) {
    const std::size_t u = dim_between(rng, 1, 5), v = dim_between(rng, 2, 6);
    Tensor logits = randn({u, v}, rng);
    std::vector<TokenId> targets(u);
    for (auto& t : targets) t = static_cast<TokenId>(sample_index(rng, v));
    targets[0] = static_cast<TokenId>(1 + sample_index(rng, v - 1));
    const TokenId pad = 0;
    return check([&] { return cross_entropy_loss(logits, targets, pad); }, {logits});
  });
  add_case("ctc", [](Rng& rng) {
    const std::size_t v = dim_between(rng, 2, 5);
    std::vector<TokenId> label(dim_between(rng, 0, 3));
    for (auto& l : label) l = static_cast<TokenId>(1 + sample_index(rng, v - 1));
    const std::size_t t = std::max<std::size_t>(ctc_min_frames(label), 1) + dim_between(rng, 0, 3);
    Tensor x = randn({t, v}, rng);
    return check([&] { return ctc_loss(log_softmax(x), label, 0); }, {x});
  });
  add_case("masked_l1", [](Rng& rng) {
    const std::size_t t = dim_between(rng, 1, 5), d = dim_between(rng, 1, 4);
    Tensor target = randn({t, d}, rng);
    Tensor pred = add(target, away_from_zero({t, d}, rng, 0.05, 1.0));
    pred = pred.detach();
    std::vector<bool> mask(t);
    for (std::size_t i = 0; i < t; ++i) mask[i] = sample_uniform(rng) < 0.6;
    mask[sample_index(rng, t)] = true;
    return check([&] { return masked_l1_loss(pred, target, mask); }, {pred, target});
  });
  add_case("gaussian_kl", [](Rng& rng) {
    const std::size_t n = dim_between(rng, 1, 6);
    Tensor mq = randn({n}, rng), sq = positive({n}, rng), mp = randn({n}, rng),
           sp = positive({n}, rng);
    return check([&] { return gaussian_kl({mq, sq}, {mp, sp}); }, {mq, sq, mp, sp});
  });
  add_case("extractor_loss", [](Rng& rng) {
    Tensor a = randn({1}, rng), b = randn({1}, rng), c = randn({1}, rng);
    LossWeights w;
    w.alpha = sample_uniform(rng, 0.5, 3.0);
    return check([&] { return extractor_loss(a, b, c, w); }, {a, b, c});
  });
  add_case("final_loss", [](Rng& rng) {
    Tensor ce = randn({1}, rng), kr = randn({1}, rng), kt = randn({1}, rng);
    LossWeights w;
    w.kl_weight = sample_uniform(rng);
    return check([&] { return final_loss(ce, kr, kt, w); }, {ce, kr, kt});
  });

  add_case("lvm_text_encode", [](Rng& rng) {
    ParameterStore store;
    const LvmParams p = make_lvm(store, small_dims(), 1, 10, 4, rng);
    randomize(store, rng);
    std::vector<TokenId> text(dim_between(rng, 1, 5));
    for (auto& t : text) t = static_cast<TokenId>(sample_index(rng, 10));
    const Tensor w = randn({text.size(), 8}, rng);
    return check([&] { return probe(lvm_text_encode(p, text), w); }, store.trainable(), 16);
  });
  for (bool posterior : {false, true}) {
    add_case(posterior ? "postnet" : "prenet", [posterior](Rng& rng) {
      ParameterStore store;
      const LvmParams p = make_lvm(store, small_dims(), 0, 10, 4, rng);
      randomize(store, rng);
      Tensor ctx = randn({dim_between(rng, 1, 4), 8}, rng);
      Tensor y = randn({dim_between(rng, 1, 4), 8}, rng);
      const Tensor wm = randn({4}, rng), ws = randn({4}, rng);
      const LvmKind kind = sample_uniform(rng) < 0.5 ? LvmKind::kRole : LvmKind::kTopical;
      std::vector<Tensor> wrt = store.trainable();
      wrt.push_back(ctx);
      if (posterior) wrt.push_back(y);
      return check([&] {
        const LatentGaussian g = posterior ? postnet_forward(p, kind, ctx, y)
                                           : prenet_forward(p, kind, ctx);
        return add(probe(g.mu, wm), probe(g.sigma, ws));
      }, wrt);
    });
  }
  add_case("reparameterize", [](Rng& rng) {
    const std::size_t n = dim_between(rng, 1, 6);
    Tensor mu = randn({n}, rng), sigma = positive({n}, rng);
    const Tensor eps = randn({n}, rng), w = randn({n}, rng);
    return check([&] { return probe(reparameterize({mu, sigma}, eps), w); }, {mu, sigma});
  });

  add_case("cme_forward", [](Rng& rng) {
    ParameterStore store;
    const CmeParams p = make_cme(store, small_dims(), 1, 10, rng);
    randomize(store, rng);
    const std::size_t t = dim_between(rng, 1, 4);
    CrossModalBatch b;
    b.speech = randn({t, 8}, rng);
    b.text = randn({t, 8}, rng);
    b.order = sample_uniform(rng) < 0.5 ? ModalOrder::kSpeechFirst : ModalOrder::kTextFirst;
    const Tensor w = randn({2 * t, 8}, rng);
    auto wrt = store.trainable();
    wrt.insert(wrt.end(), {b.speech, b.text});
    return check([&] { return probe(cme_forward(b, p), w); }, wrt, 16);
  });
  add_case("extractor_step", [](Rng& rng) {
    const CorpusSpec spec = tiny_corpus_spec();
    const auto corpus = generate_corpus(spec, rng());
    ParameterStore store;
    const StubEncoders stubs = make_stub_encoders(store, spec.d_raw, 8, spec.vocab_size, rng());
    const CmeParams p = make_cme(store, small_dims(), 1, spec.vocab_size, rng);
    randomize(store, rng);
    const Utterance& u = corpus[0].utterances[sample_index(rng, spec.utterances_per_conversation)];
    const std::uint64_t mask_seed = rng();
    const LossWeights w = extractor_weight_schedule(0, 3);
    return check([&] {
      Rng local(mask_seed);
      return extractor_train_step(u, stubs, p, w, local).loss;
    }, store.trainable(), 8);
  });

  auto model_case = [](ContextMode mode, FusionStrategy fusion, bool full_loss) {
    return [mode, fusion, full_loss](Rng& rng) {
      const CorpusSpec spec = tiny_corpus_spec();
      const auto corpus = generate_corpus(spec, rng());
      AsrConfig cfg = tiny_asr_config();
      cfg.context_mode = mode;
      cfg.fusion = fusion;
      AsrModel model = build_asr_model(cfg, rng());
      randomize(model.store, rng);
      ContextCache cache(model, corpus);
      const std::size_t k = sample_index(rng, spec.utterances_per_conversation);
      const Utterance& u = corpus[0].utterances[k];
      const std::uint64_t eps_seed = rng();
      if (full_loss) {
        const double kl_w = sample_uniform(rng, 0.1, 1.0);
        return check([&] {
          Rng local(eps_seed);
          return utterance_loss(model, u, cache.get(0, k), kl_w, local).loss;
        }, model.store.trainable(), 3);
      }
      if (mode == ContextMode::kNone) {
        Tensor frames = u.frames.detach();
        const Tensor w = randn({frames.rows(), cfg.d}, rng);
        auto wrt = model.store.trainable();
        wrt.push_back(frames);
        return check([&] { return probe(encode(model, frames), w); }, wrt, 6);
      }
      std::vector<TokenId> inputs{SpecialTokens::kBos};
      inputs.insert(inputs.end(), u.text.begin(), u.text.end());
      Tensor z = randn({dim_between(rng, 1, 6), cfg.d}, rng);
      Tensor v = randn({dim_between(rng, 1, 4), cfg.d}, rng);
      const Tensor w = randn({inputs.size(), cfg.vocab}, rng);
      auto wrt = model.store.trainable();
      wrt.insert(wrt.end(), {z, v});
      return check([&] { return probe(decode_forward(model, z, v, inputs), w); }, wrt, 6);
    };
  };
  add_case("encode", model_case(ContextMode::kNone, FusionStrategy::kLinear, false));
  add_case("decode_forward_linear", model_case(ContextMode::kCrm, FusionStrategy::kLinear, false));
  add_case("decode_forward_attention",
           model_case(ContextMode::kCrm, FusionStrategy::kAttention, false));
  add_case("stage2_loss_linear", model_case(ContextMode::kCvaeCrm, FusionStrategy::kLinear, true));
  add_case("stage2_loss_attention",
           model_case(ContextMode::kCvaeCrm, FusionStrategy::kAttention, true));
  return cases;
}

}  // namespace

bool GradSuiteReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::string GradSuiteReport::to_text() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << "gradcheck " << std::left << std::setw(26) << e.name << " instances "
       << e.instances << " max_rel_err " << std::scientific << std::setprecision(3)
       << e.max_error << std::defaultfloat << ' ' << (e.passed ? "PASS" : "FAIL") << '\n';
  }
  os << "gradcheck suite " << (passed() ? "PASS" : "FAIL") << '\n';
  return os.str();
}

std::vector<std::string> gradient_suite_cases() {
  std::vector<std::string> names;
  for (const auto& [name, c] : make_cases()) names.push_back(name);
  return names;
}

GradSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t instances,
                                   double tolerance, const std::vector<std::string>& only,
                                   std::ostream* progress) {
  GradSuiteReport report;
  report.tolerance = tolerance;
  for (const auto& [name, run] : make_cases()) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    GradSuiteEntry e;
    e.name = name;
    Rng rng(derive_seed(seed, name));
    for (std::size_t i = 0; i < instances; ++i) {
      e.max_error = std::max(e.max_error, run(rng));
      ++e.instances;
    }
    e.passed = e.max_error <= tolerance;
    if (progress) {
      GradSuiteReport one;
      one.entries.push_back(e);
      const std::string line = one.to_text();
      *progress << line.substr(0, line.find('\n') + 1) << std::flush;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace casr

// The finite-difference gradient suite shared by the unit tests (few seeds)
// and the acceptance run (50 seeds).
#pragma once

#include <map>
#include <string>

#include "qacts/qacts.hpp"
#include "support/oracles.hpp"

namespace oracle {

// Max relative error per op family for one seed, random tensors <= 4x4x4.
inline std::map<std::string, double> gradient_suite(uint64_t seed) {
  std::map<std::string, double> errs;
  Rng rng(qacts::derive_seed(seed, "grad-suite"));
  auto dims = [&](size_t lo, size_t hi) { return lo + rng.below(hi - lo + 1); };

  {
    size_t m = dims(1, 4), k = dims(1, 4), n = dims(1, 4);
    auto a = rand_tensor({m, k}, rng);
    auto b = rand_tensor({k, n}, rng);
    auto w = rand_tensor({m, n}, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.matmul(in[0], in[1]), w);
    };
    errs["matmul"] = check_gradients(fn, {a, b}).max_rel_err;
  }
  {
    size_t bsz = dims(2, 3), m = dims(1, 4), k = dims(1, 4), n = dims(1, 4);
    auto a = rand_tensor({bsz, m, k}, rng);
    auto b = rand_tensor({bsz, k, n}, rng);
    auto w = rand_tensor({bsz, m, n}, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.matmul(in[0], in[1]), w);
    };
    errs["matmul_batched"] = check_gradients(fn, {a, b}).max_rel_err;
  }
  {
    size_t m = dims(2, 4), n = dims(2, 4);
    auto a = rand_tensor({m, n}, rng);
    auto b = rand_tensor({m, n}, rng);
    auto w = rand_tensor({m, n}, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.add(in[0], in[1]), w);
    };
    errs["add"] = check_gradients(fn, {a, b}).max_rel_err;
  }
  {
    size_t m = dims(2, 4), n = dims(2, 4);
    auto a = rand_tensor({m, n}, rng);
    auto bias = rand_tensor({n}, rng);
    auto w = rand_tensor({m, n}, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.add(in[0], in[1]), w);
    };
    errs["add_broadcast"] = check_gradients(fn, {a, bias}).max_rel_err;
  }
  {
    size_t m = dims(2, 4), n = dims(2, 4);
    auto a = rand_tensor({m, n}, rng);
    auto b = rand_tensor({m, n}, rng);
    auto w = rand_tensor({m, n}, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.mul(in[0], in[1]), w);
    };
    errs["mul"] = check_gradients(fn, {a, b}).max_rel_err;
  }
  {
    auto a = rand_tensor({dims(2, 4), dims(2, 4)}, rng, -2, 2);
    auto w = rand_tensor(a->shape, rng, -1, 1, false);
    double c = rng.uniform(-2, 2);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.scale(in[0], c), w);
    };
    errs["scale"] = check_gradients(fn, {a}).max_rel_err;
  }
  {
    auto a = rand_tensor({dims(2, 4), dims(2, 4)}, rng, -3, 3);
    auto w = rand_tensor(a->shape, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.gelu(in[0]), w);
    };
    errs["gelu"] = check_gradients(fn, {a}).max_rel_err;
  }
  {
    auto a = rand_tensor({dims(2, 4)}, rng, 0.2, 2.0);
    auto w = rand_tensor(a->shape, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.neg_log(in[0]), w);
    };
    errs["neg_log"] = check_gradients(fn, {a}).max_rel_err;
  }
  {
    auto a = rand_tensor({dims(2, 4), dims(2, 4)}, rng);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) { return t.sum(in[0]); };
    errs["sum"] = check_gradients(fn, {a}).max_rel_err;
  }
  {
    size_t r0 = dims(2, 4), r1 = dims(2, 4), r2 = dims(2, 4);
    auto a = rand_tensor({r0, r1, r2}, rng, -2, 2);
    auto w = rand_tensor(a->shape, rng, -1, 1, false);
    size_t axis = rng.below(3);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.softmax(in[0], axis), w);
    };
    errs["softmax"] = check_gradients(fn, {a}).max_rel_err;
  }
  {
    size_t rows = dims(2, 4), d = dims(2, 4);
    auto x = rand_tensor({rows, d}, rng);
    auto gain = rand_tensor({d}, rng, 0.5, 1.5);
    auto bias = rand_tensor({d}, rng);
    auto w = rand_tensor({rows, d}, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.layer_norm(in[0], in[1], in[2], 1e-12), w);
    };
    errs["layer_norm"] = check_gradients(fn, {x, gain, bias}).max_rel_err;
  }
  {
    auto a = rand_tensor({dims(2, 4), dims(2, 4), dims(2, 4)}, rng);
    std::vector<size_t> axes = {0, 1, 2};
    qacts::shuffle(axes, rng);
    qacts::Shape out_shape(3);
    for (size_t i = 0; i < 3; ++i) out_shape[i] = a->shape[axes[i]];
    auto w = rand_tensor(out_shape, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.permute(in[0], axes), w);
    };
    errs["permute"] = check_gradients(fn, {a}).max_rel_err;
  }
  {
    size_t m = dims(2, 4), n = dims(2, 4);
    auto a = rand_tensor({m, n}, rng);
    auto w = rand_tensor({m * n}, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.reshape(in[0], {m * n}), w);
    };
    errs["reshape"] = check_gradients(fn, {a}).max_rel_err;
  }
  {
    size_t rows = dims(2, 4);
    auto a = rand_tensor({rows, dims(1, 3)}, rng);
    auto b = rand_tensor({rows, dims(1, 3)}, rng);
    auto c = rand_tensor({rows, dims(1, 3)}, rng);
    qacts::Shape out_shape = {rows, a->shape[1] + b->shape[1] + c->shape[1]};
    auto w = rand_tensor(out_shape, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.concat({in[0], in[1], in[2]}, 1), w);
    };
    errs["concat"] = check_gradients(fn, {a, b, c}).max_rel_err;
  }
  {
    size_t vocab = dims(5, 8), d = dims(2, 4), n = dims(2, 4);
    auto table = rand_tensor({vocab, d}, rng);
    std::vector<int> ids;
    for (size_t i = 0; i < n; ++i) ids.push_back(static_cast<int>(rng.below(vocab)));
    ids.push_back(ids[0]);  // duplicate to exercise accumulation
    auto w = rand_tensor({ids.size(), d}, rng, -1, 1, false);
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      return weighted_sum(t, t.embedding_lookup(in[0], ids), w);
    };
    errs["embedding_lookup"] = check_gradients(fn, {table}).max_rel_err;
  }
  {
    auto a = rand_tensor({dims(2, 4), dims(2, 4)}, rng);
    auto w = rand_tensor(a->shape, rng, -1, 1, false);
    uint64_t mask_seed = rng.next_u64();
    GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>& in) {
      Rng mask_rng(mask_seed);  // same mask on every rebuild
      return weighted_sum(t, t.dropout(in[0], 0.3, mask_rng, true), w);
    };
    errs["dropout"] = check_gradients(fn, {a}).max_rel_err;
  }
  return errs;
}

// Full-model gradient check on a tiny configuration: 1 layer, d=8, short
// input, every parameter against central differences.
inline double end_to_end_gradcheck(uint64_t seed) {
  Rng rng(qacts::derive_seed(seed, "e2e"));
  qacts::EncoderConfig ecfg;
  ecfg.num_layers = 1;
  ecfg.hidden_dim = 8;
  ecfg.num_heads = 2;
  ecfg.ffn_dim = 16;
  ecfg.max_len = 16;
  ecfg.dropout_rate = 0.0;
  qacts::ModelConfig mcfg;
  mcfg.entity_channel = true;
  mcfg.entity_proj_dim = 4;
  mcfg.head_hidden = 16;

  std::u32string query = qacts::utf8_decode("大小");
  std::u32string para = qacts::utf8_decode("癌灶3×2cm残端");
  qacts::Vocabulary vocab = qacts::Vocabulary::build({query, para});
  ecfg.vocab_size = vocab.size();

  qacts::TagScheme scheme = qacts::TagScheme::reference();
  qacts::SpanModel model;
  model.ecfg = ecfg;
  model.mcfg = mcfg;
  model.init(seed, scheme.one_hot_dim());

  qacts::TokenizedInput layout = qacts::build_input(query, para, vocab, ecfg.max_len);
  auto tagger = qacts::make_reference_tagger();
  auto entity = qacts::merge_channels(qacts::tag_to_bieos(query, *tagger, scheme),
                                      qacts::tag_to_bieos(para, *tagger, scheme), layout, scheme);
  size_t ans_start = 2 + rng.below(3);  // somewhere inside the paragraph
  size_t ans_end = ans_start + rng.below(2);
  qacts::GoldSpan gold = qacts::gold_span_for(layout, ans_start, ans_end);

  GraphFn fn = [&](Tape& t, const std::vector<TensorPtr>&) {
    qacts::SpanScores scores = model.forward(t, layout, entity, false, nullptr);
    return qacts::span_loss(t, scores, gold);
  };
  std::vector<TensorPtr> params;
  for (const auto& p : model.params()) params.push_back(p.tensor);
  return check_gradients(fn, params).max_rel_err;
}

}  // namespace oracle

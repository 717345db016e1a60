#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "qacts/adam.hpp"
#include "qacts/rng.hpp"
#include "qacts/tape.hpp"
#include "qacts/vocab.hpp"

namespace qacts {

struct EncoderConfig {
  size_t num_layers = 2;
  size_t hidden_dim = 64;
  size_t num_heads = 4;
  size_t ffn_dim = 256;
  size_t max_len = 256;
  double dropout_rate = 0.1;
  size_t vocab_size = 0;
  double layer_norm_eps = 1e-12;

  void validate() const {
    if (hidden_dim == 0 || num_heads == 0 || num_layers == 0 || ffn_dim == 0) {
      throw ValidationError("encoder config: zero-sized dimension");
    }
    if (hidden_dim % num_heads != 0) {
      throw ValidationError("encoder config: hidden_dim " + std::to_string(hidden_dim) +
                            " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (vocab_size <= Vocabulary::kNumReserved) {
      throw ValidationError("encoder config: vocab_size not set");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ValidationError("encoder config: dropout_rate out of [0,1)");
    }
  }
};

// Joint query+paragraph input: [CLS] Q [SEP] X [SEP], then padding.
struct TokenizedInput {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;     // 0 for [CLS]+query+first [SEP], 1 for paragraph side
  std::vector<int> positions;       // 0..len-1
  std::vector<int> attention_mask;  // 1 on non-padding
  std::vector<int> char_offsets;    // paragraph positions -> char index in X, else -1
  size_t seq_len = 0;               // non-padding length l_s
  size_t query_begin = 0, query_len = 0;
  size_t paragraph_begin = 0, paragraph_len = 0;

  size_t size() const { return token_ids.size(); }

  bool is_paragraph(size_t pos) const {
    return pos >= paragraph_begin && pos < paragraph_begin + paragraph_len;
  }
};

// Lays out [CLS] Q [SEP] X [SEP] with optional trailing padding up to
// pad_to. Over-length inputs are rejected rather than truncated: silently
// clipping would corrupt gold span offsets.
inline TokenizedInput build_input(const std::u32string& query, const std::u32string& paragraph,
                                  const Vocabulary& vocab, size_t max_len, size_t pad_to = 0) {
  if (paragraph.empty()) throw ValidationError("build_input: empty paragraph");
  if (query.empty()) throw ValidationError("build_input: empty query");
  size_t need = query.size() + paragraph.size() + 3;
  if (need > max_len) {
    throw ValidationError("build_input: query (" + std::to_string(query.size()) +
                          " chars) + paragraph (" + std::to_string(paragraph.size()) +
                          " chars) + 3 specials = " + std::to_string(need) + " exceeds max_len " +
                          std::to_string(max_len));
  }
  size_t total = std::max(need, pad_to);
  if (total > max_len) {
    throw ValidationError("build_input: pad_to " + std::to_string(pad_to) + " exceeds max_len " +
                          std::to_string(max_len));
  }
  TokenizedInput in;
  in.token_ids.reserve(total);
  in.token_ids.push_back(Vocabulary::kCls);
  for (char32_t c : query) in.token_ids.push_back(vocab.id_of(c));
  in.token_ids.push_back(Vocabulary::kSep);
  for (char32_t c : paragraph) in.token_ids.push_back(vocab.id_of(c));
  in.token_ids.push_back(Vocabulary::kSep);
  in.seq_len = need;
  in.query_begin = 1;
  in.query_len = query.size();
  in.paragraph_begin = query.size() + 2;
  in.paragraph_len = paragraph.size();
  in.token_ids.resize(total, Vocabulary::kPad);

  in.segment_ids.assign(total, 0);
  for (size_t p = in.paragraph_begin; p < need; ++p) in.segment_ids[p] = 1;
  in.positions.resize(total);
  for (size_t p = 0; p < total; ++p) in.positions[p] = static_cast<int>(p);
  in.attention_mask.assign(total, 0);
  for (size_t p = 0; p < need; ++p) in.attention_mask[p] = 1;
  in.char_offsets.assign(total, -1);
  for (size_t k = 0; k < paragraph.size(); ++k) {
    in.char_offsets[in.paragraph_begin + k] = static_cast<int>(k);
  }
  return in;
}

// BERT-style encoder: token+position+segment embeddings with layer norm,
// then post-LN blocks (attention -> add&norm -> FFN -> add&norm). Padding is
// excluded by adding -1e9 to attention logits at padded keys, so hidden
// states at non-pad positions do not depend on how much padding follows.
struct Encoder {
  struct Layer {
    TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
    TensorPtr ln1_gain, ln1_bias;
    TensorPtr ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    TensorPtr ln2_gain, ln2_bias;
  };

  EncoderConfig cfg;
  TensorPtr tok_emb, pos_emb, seg_emb, emb_ln_gain, emb_ln_bias;
  std::vector<Layer> layers;

  void init(uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
    auto make = [&](Shape s) {
      auto t = tensor(std::move(s), 0.0, true);
      for (auto& v : t->data) v = rng.uniform(-bound, bound);
      return t;
    };
    size_t d = cfg.hidden_dim;
    tok_emb = make({cfg.vocab_size, d});
    pos_emb = make({cfg.max_len, d});
    seg_emb = make({2, d});
    emb_ln_gain = make({d});
    emb_ln_bias = make({d});
    layers.clear();
    layers.resize(cfg.num_layers);
    for (auto& l : layers) {
      l.wq = make({d, d});
      l.bq = make({d});
      l.wk = make({d, d});
      l.bk = make({d});
      l.wv = make({d, d});
      l.bv = make({d});
      l.wo = make({d, d});
      l.bo = make({d});
      l.ln1_gain = make({d});
      l.ln1_bias = make({d});
      l.ffn_w1 = make({d, cfg.ffn_dim});
      l.ffn_b1 = make({cfg.ffn_dim});
      l.ffn_w2 = make({cfg.ffn_dim, d});
      l.ffn_b2 = make({d});
      l.ln2_gain = make({d});
      l.ln2_bias = make({d});
    }
  }

  ParamList params() const {
    ParamList out;
    auto put = [&](const std::string& name, const TensorPtr& t) { out.push_back({name, t}); };
    put("encoder.embed.token", tok_emb);
    put("encoder.embed.position", pos_emb);
    put("encoder.embed.segment", seg_emb);
    put("encoder.embed.ln.gain", emb_ln_gain);
    put("encoder.embed.ln.bias", emb_ln_bias);
    for (size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      std::string p = "encoder.layer" + std::to_string(i) + ".";
      put(p + "attn.wq", l.wq);
      put(p + "attn.bq", l.bq);
      put(p + "attn.wk", l.wk);
      put(p + "attn.bk", l.bk);
      put(p + "attn.wv", l.wv);
      put(p + "attn.bv", l.bv);
      put(p + "attn.wo", l.wo);
      put(p + "attn.bo", l.bo);
      put(p + "ln1.gain", l.ln1_gain);
      put(p + "ln1.bias", l.ln1_bias);
      put(p + "ffn.w1", l.ffn_w1);
      put(p + "ffn.b1", l.ffn_b1);
      put(p + "ffn.w2", l.ffn_w2);
      put(p + "ffn.b2", l.ffn_b2);
      put(p + "ln2.gain", l.ln2_gain);
      put(p + "ln2.bias", l.ln2_bias);
    }
    return out;
  }

  // V_s, shape (len, hidden_dim), len including padding.
  TensorPtr encode(Tape& tape, const TokenizedInput& in, bool training = false,
                   Rng* dropout_rng = nullptr) const {
    if (in.size() > cfg.max_len) {
      throw ShapeError("encode: input length " + std::to_string(in.size()) + " exceeds max_len " +
                       std::to_string(cfg.max_len));
    }
    if (training && cfg.dropout_rate > 0.0 && dropout_rng == nullptr) {
      throw ValidationError("encode: training with dropout requires an RNG");
    }
    size_t len = in.size();
    size_t d = cfg.hidden_dim;
    size_t heads = cfg.num_heads;
    size_t hd = d / heads;

    auto drop = [&](const TensorPtr& t) {
      if (!training || cfg.dropout_rate == 0.0) return t;
      return tape.dropout(t, cfg.dropout_rate, *dropout_rng, true);
    };

    // -1e9 at padded keys, broadcast over query rows and heads.
    auto key_mask = tensor({len}, 0.0, false);
    for (size_t p = 0; p < len; ++p) {
      if (!in.attention_mask[p]) key_mask->data[p] = -1e9;
    }

    auto x = tape.add(tape.add(tape.embedding_lookup(tok_emb, in.token_ids),
                               tape.embedding_lookup(pos_emb, in.positions)),
                      tape.embedding_lookup(seg_emb, in.segment_ids));
    x = tape.layer_norm(x, emb_ln_gain, emb_ln_bias, cfg.layer_norm_eps);
    x = drop(x);

    double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (const auto& l : layers) {
      auto split_heads = [&](const TensorPtr& t) {
        // (len, d) -> (heads, len, hd)
        return tape.permute(tape.reshape(t, {len, heads, hd}), {1, 0, 2});
      };
      auto q = split_heads(tape.add(tape.matmul(x, l.wq), l.bq));
      auto k = split_heads(tape.add(tape.matmul(x, l.wk), l.bk));
      auto v = split_heads(tape.add(tape.matmul(x, l.wv), l.bv));
      auto scores = tape.scale(tape.matmul(q, tape.permute(k, {0, 2, 1})), scale);
      scores = tape.add(scores, key_mask);
      auto attn = tape.softmax(scores, 2);
      attn = drop(attn);
      auto ctx = tape.reshape(tape.permute(tape.matmul(attn, v), {1, 0, 2}), {len, d});
      auto attn_out = drop(tape.add(tape.matmul(ctx, l.wo), l.bo));
      x = tape.layer_norm(tape.add(x, attn_out), l.ln1_gain, l.ln1_bias, cfg.layer_norm_eps);
      auto h = tape.gelu(tape.add(tape.matmul(x, l.ffn_w1), l.ffn_b1));
      auto ffn_out = drop(tape.add(tape.matmul(h, l.ffn_w2), l.ffn_b2));
      x = tape.layer_norm(tape.add(x, ffn_out), l.ln2_gain, l.ln2_bias, cfg.layer_norm_eps);
    }
    return x;
  }
};

}  // namespace qacts

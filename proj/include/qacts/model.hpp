#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qacts/encoder.hpp"
#include "qacts/entity.hpp"

namespace qacts {

struct ModelConfig {
  bool entity_channel = false;  // stage-1 models run without the channel
  size_t entity_proj_dim = 16;  // width p of the projected entity features
  bool raw_onehot = false;      // skip the projection, concatenate I_n as-is
  size_t head_hidden = 128;
  size_t max_span_len = 50;

  void validate() const {
    if (head_hidden == 0) throw ValidationError("model config: head_hidden must be positive");
    if (max_span_len == 0) throw ValidationError("model config: max_span_len must be positive");
    if (entity_channel && !raw_onehot && entity_proj_dim == 0) {
      throw ValidationError("model config: entity_proj_dim must be positive");
    }
  }
};

// Start/end scores H_f with the derived distributions. o_start/o_end are
// probabilities over all layout positions; non-paragraph and padding
// positions are pushed to zero by a -1e9 logit offset before softmax.
struct SpanScores {
  TensorPtr hf;           // (len, 2)
  TensorPtr probs;        // (2, len): row 0 start, row 1 end
  std::vector<double> o_start, o_end;
  std::vector<char> valid;  // 1 where a span endpoint may live

  size_t len() const { return o_start.size(); }
};

struct GoldSpan {
  size_t start_pos = 0;  // layout positions inside the paragraph segment
  size_t end_pos = 0;
};

inline GoldSpan gold_span_for(const TokenizedInput& layout, size_t answer_start_char,
                              size_t answer_end_char) {
  if (answer_end_char < answer_start_char || answer_end_char >= layout.paragraph_len) {
    throw ValidationError("gold span [" + std::to_string(answer_start_char) + "," +
                          std::to_string(answer_end_char) + "] outside paragraph of length " +
                          std::to_string(layout.paragraph_len));
  }
  return {layout.paragraph_begin + answer_start_char, layout.paragraph_begin + answer_end_char};
}

struct SpanPrediction {
  size_t start_pos = 0;
  size_t end_pos = 0;
  double score = 0.0;        // o_start[start] * o_end[end]
  std::string answer_text;   // recovered substring of X
  size_t answer_start_char = 0;
  size_t answer_end_char = 0;
};

// Query+paragraph span predictor: encoder output V_s, optionally fused with
// the projected entity channel, scored per position by a two-layer FFN down
// to (len, 2).
struct SpanModel {
  EncoderConfig ecfg;
  ModelConfig mcfg;
  Encoder encoder;
  TensorPtr entity_proj;               // (one_hot_dim, p), present when projecting
  TensorPtr head_w1, head_b1, head_w2, head_b2;
  size_t entity_dim = 0;               // one_hot_dim of the tag scheme

  size_t fused_dim() const {
    if (!mcfg.entity_channel) return ecfg.hidden_dim;
    return ecfg.hidden_dim + (mcfg.raw_onehot ? entity_dim : mcfg.entity_proj_dim);
  }

  void init(uint64_t seed, size_t one_hot_dim) {
    ecfg.validate();
    mcfg.validate();
    entity_dim = one_hot_dim;
    encoder.cfg = ecfg;
    encoder.init(derive_seed(seed, "encoder"));
    Rng rng(derive_seed(seed, "head"));
    double bound = 1.0 / std::sqrt(static_cast<double>(ecfg.hidden_dim));
    auto make = [&](Shape s) {
      auto t = tensor(std::move(s), 0.0, true);
      for (auto& v : t->data) v = rng.uniform(-bound, bound);
      return t;
    };
    if (mcfg.entity_channel && !mcfg.raw_onehot) {
      entity_proj = make({entity_dim, mcfg.entity_proj_dim});
    } else {
      entity_proj = nullptr;
    }
    head_w1 = make({fused_dim(), mcfg.head_hidden});
    head_b1 = make({mcfg.head_hidden});
    head_w2 = make({mcfg.head_hidden, 2});
    head_b2 = make({2});
  }

  ParamList params() const {
    ParamList out = encoder.params();
    if (entity_proj) out.push_back({"entity.proj", entity_proj});
    out.push_back({"head.w1", head_w1});
    out.push_back({"head.b1", head_b1});
    out.push_back({"head.w2", head_w2});
    out.push_back({"head.b2", head_b2});
    return out;
  }

  // H_i = concat(V_s, W_e * I_n) row-wise; identity when the channel is off.
  TensorPtr integrate(Tape& tape, const TensorPtr& vs, const TensorPtr& entity_onehot) const {
    if (!mcfg.entity_channel) return vs;
    if (!entity_onehot) throw ValidationError("integrate: entity channel tensor missing");
    if (entity_onehot->rank() != 2 || entity_onehot->shape[0] != vs->shape[0]) {
      throw ShapeError("integrate: row mismatch V_s " + shape_str(vs->shape) + " vs I_n " +
                       shape_str(entity_onehot->shape));
    }
    if (mcfg.raw_onehot) return tape.concat({vs, entity_onehot}, 1);
    return tape.concat({vs, tape.matmul(entity_onehot, entity_proj)}, 1);
  }

  // Two-layer position-wise FFN to (len, 2), then permute+softmax over
  // positions with invalid positions offset by -1e9.
  SpanScores ffn_scores(Tape& tape, const TensorPtr& hi, const TokenizedInput& layout) const {
    auto h = tape.gelu(tape.add(tape.matmul(hi, head_w1), head_b1));
    auto hf = tape.add(tape.matmul(h, head_w2), head_b2);
    size_t len = layout.size();
    auto span_mask = tensor({len}, 0.0, false);
    SpanScores s;
    s.valid.assign(len, 0);
    for (size_t p = 0; p < len; ++p) {
      bool ok = layout.is_paragraph(p) && layout.attention_mask[p];
      s.valid[p] = ok ? 1 : 0;
      if (!ok) span_mask->data[p] = -1e9;
    }
    auto logits = tape.add(tape.permute(hf, {1, 0}), span_mask);
    auto probs = tape.softmax(logits, 1);
    s.hf = hf;
    s.probs = probs;
    s.o_start.assign(probs->data.begin(), probs->data.begin() + static_cast<long>(len));
    s.o_end.assign(probs->data.begin() + static_cast<long>(len), probs->data.end());
    return s;
  }

  SpanScores forward(Tape& tape, const TokenizedInput& layout, const TensorPtr& entity_onehot,
                     bool training = false, Rng* dropout_rng = nullptr) const {
    auto vs = encoder.encode(tape, layout, training, dropout_rng);
    auto hi = integrate(tape, vs, entity_onehot);
    return ffn_scores(tape, hi, layout);
  }
};

// L = -log O_s[start] - log O_e[end], the one-hot cross entropy over the
// start/end distributions. Picks the gold entries with a one-hot dot so
// log is never evaluated on masked-out zeros.
inline TensorPtr span_loss(Tape& tape, const SpanScores& scores, const GoldSpan& gold) {
  size_t len = scores.len();
  if (gold.start_pos >= len || gold.end_pos >= len || !scores.valid[gold.start_pos] ||
      !scores.valid[gold.end_pos] || gold.start_pos > gold.end_pos) {
    throw ValidationError("span_loss: gold span [" + std::to_string(gold.start_pos) + "," +
                          std::to_string(gold.end_pos) + "] hits a masked position");
  }
  auto pick_start = tensor({2, len}, 0.0, false);
  pick_start->data[gold.start_pos] = 1.0;
  auto pick_end = tensor({2, len}, 0.0, false);
  pick_end->data[len + gold.end_pos] = 1.0;
  auto ls = tape.neg_log(tape.sum(tape.mul(scores.probs, pick_start)));
  auto le = tape.neg_log(tape.sum(tape.mul(scores.probs, pick_end)));
  return tape.add(ls, le);
}

// Constrained argmax of o_start[i]*o_end[j] over valid pairs with i <= j and
// j - i < max_span_len. Ties break to the smaller start, then shorter span.
inline SpanPrediction decode_span(const SpanScores& scores, const TokenizedInput& layout,
                                  const std::u32string& paragraph, size_t max_span_len) {
  size_t len = scores.len();
  bool found = false;
  size_t bi = 0, bj = 0;
  double best = -1.0;
  for (size_t i = 0; i < len; ++i) {
    if (!scores.valid[i]) continue;
    size_t j_end = std::min(len, i + max_span_len);
    for (size_t j = i; j < j_end; ++j) {
      if (!scores.valid[j]) continue;
      double sc = scores.o_start[i] * scores.o_end[j];
      if (!found || sc > best) {
        found = true;
        best = sc;
        bi = i;
        bj = j;
      }
    }
  }
  if (!found) throw ValidationError("decode_span: no valid (start,end) pair");
  SpanPrediction pred;
  pred.start_pos = bi;
  pred.end_pos = bj;
  pred.score = best;
  pred.answer_start_char = static_cast<size_t>(layout.char_offsets[bi]);
  pred.answer_end_char = static_cast<size_t>(layout.char_offsets[bj]);
  pred.answer_text = utf8_encode(
      paragraph.substr(pred.answer_start_char, pred.answer_end_char - pred.answer_start_char + 1));
  return pred;
}

}  // namespace qacts

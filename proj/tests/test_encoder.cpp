#include <catch2/catch_amalgamated.hpp>

#include "qacts/encoder.hpp"
#include "support/oracles.hpp"

using namespace qacts;

namespace {

Vocabulary test_vocab() {
  return Vocabulary::build({utf8_decode("肿瘤大小约5.3×cm切缘距离近远端未见abcdefghij")});
}

EncoderConfig small_cfg(size_t vocab_size) {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_dim = 16;
  cfg.num_heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_len = 64;
  cfg.dropout_rate = 0.1;
  cfg.vocab_size = vocab_size;
  return cfg;
}

}  // namespace

TEST_CASE("build_input lays out [CLS] Q [SEP] X [SEP]") {
  Vocabulary vocab = test_vocab();
  std::u32string q = utf8_decode("肿瘤大小");
  std::u32string x = utf8_decode("约切缘距离近远端未见abcdefghij");
  REQUIRE(q.size() == 4);
  REQUIRE(x.size() == 20);
  TokenizedInput in = build_input(q, x, vocab, 64);
  REQUIRE(in.seq_len == 27);
  REQUIRE(in.size() == 27);
  REQUIRE(in.token_ids[0] == Vocabulary::kCls);
  REQUIRE(in.token_ids[5] == Vocabulary::kSep);
  REQUIRE(in.token_ids[26] == Vocabulary::kSep);
  size_t zeros = 0, ones = 0;
  for (size_t p = 0; p < in.seq_len; ++p) {
    (in.segment_ids[p] == 0 ? zeros : ones)++;
  }
  REQUIRE(zeros == 6);
  REQUIRE(ones == 21);
  for (int m : in.attention_mask) REQUIRE(m == 1);
}

TEST_CASE("build_input rejects degenerate and oversized inputs") {
  Vocabulary vocab = test_vocab();
  REQUIRE_THROWS_AS(build_input(utf8_decode("肿瘤大小"), U"", vocab, 64), ValidationError);
  std::u32string longx(100, U'a');
  try {
    build_input(utf8_decode("肿瘤大小"), longx, vocab, 64);
    FAIL("expected length error");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("4") != std::string::npos);
    REQUIRE(msg.find("100") != std::string::npos);
    REQUIRE(msg.find("64") != std::string::npos);
  }
}

TEST_CASE("char_offsets map paragraph positions back to characters") {
  Vocabulary vocab = test_vocab();
  std::u32string q = utf8_decode("大小");
  std::u32string x = utf8_decode("约5.3×cm");
  TokenizedInput in = build_input(q, x, vocab, 64, 20);
  REQUIRE(in.size() == 20);
  REQUIRE(in.seq_len == q.size() + x.size() + 3);
  for (size_t k = 0; k < x.size(); ++k) {
    REQUIRE(in.char_offsets[in.paragraph_begin + k] == static_cast<int>(k));
  }
  for (size_t p = 0; p < in.paragraph_begin; ++p) REQUIRE(in.char_offsets[p] == -1);
  for (size_t p = in.paragraph_begin + x.size(); p < in.size(); ++p) {
    REQUIRE(in.char_offsets[p] == -1);
  }
  // padding is masked out and tagged segment 0
  for (size_t p = in.seq_len; p < in.size(); ++p) {
    REQUIRE(in.attention_mask[p] == 0);
    REQUIRE(in.token_ids[p] == Vocabulary::kPad);
  }
}

TEST_CASE("unknown characters map to [UNK]") {
  Vocabulary vocab = test_vocab();
  TokenizedInput in = build_input(utf8_decode("大小"), utf8_decode("Z约"), vocab, 64);
  REQUIRE(in.token_ids[in.paragraph_begin] == Vocabulary::kUnk);
  REQUIRE(in.token_ids[in.paragraph_begin + 1] != Vocabulary::kUnk);
}

TEST_CASE("init is deterministic, seed-sensitive, and bounded by 1/sqrt(d)") {
  Vocabulary vocab = test_vocab();
  EncoderConfig cfg = small_cfg(vocab.size());
  Encoder e1, e2, e3;
  e1.cfg = cfg;
  e2.cfg = cfg;
  e3.cfg = cfg;
  e1.init(42);
  e2.init(42);
  e3.init(43);
  auto p1 = e1.params(), p2 = e2.params(), p3 = e3.params();
  REQUIRE(p1.size() == p2.size());
  bool any_diff = false;
  double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
  for (size_t i = 0; i < p1.size(); ++i) {
    REQUIRE(p1[i].tensor->data == p2[i].tensor->data);
    if (p1[i].tensor->data != p3[i].tensor->data) any_diff = true;
    for (double v : p1[i].tensor->data) REQUIRE(std::fabs(v) <= bound);
  }
  REQUIRE(any_diff);
}

TEST_CASE("encode is position-sensitive and pure in eval mode") {
  Vocabulary vocab = test_vocab();
  EncoderConfig cfg = small_cfg(vocab.size());
  Encoder enc;
  enc.cfg = cfg;
  enc.init(7);
  std::u32string q = utf8_decode("大小");
  std::u32string x1 = utf8_decode("约5.3×cm切缘");
  std::u32string x2 = utf8_decode("5约.3×cm切缘");  // two tokens swapped
  Tape tape(false);
  auto v1 = enc.encode(tape, build_input(q, x1, vocab, 64));
  auto v1_again = enc.encode(tape, build_input(q, x1, vocab, 64));
  auto v2 = enc.encode(tape, build_input(q, x2, vocab, 64));
  REQUIRE(v1->data == v1_again->data);
  REQUIRE(v1->data != v2->data);
}

TEST_CASE("padding does not change hidden states at non-pad positions") {
  Vocabulary vocab = test_vocab();
  EncoderConfig cfg = small_cfg(vocab.size());
  Encoder enc;
  enc.cfg = cfg;
  enc.init(19);
  std::u32string q = utf8_decode("大小");
  std::u32string x = utf8_decode("约5.3×cm切缘距离");
  Tape tape(false);
  TokenizedInput plain = build_input(q, x, vocab, 64);
  TokenizedInput padded = build_input(q, x, vocab, 64, plain.seq_len + 9);
  auto v_plain = enc.encode(tape, plain);
  auto v_padded = enc.encode(tape, padded);
  size_t d = cfg.hidden_dim;
  for (size_t p = 0; p < plain.seq_len; ++p) {
    for (size_t j = 0; j < d; ++j) {
      REQUIRE(std::fabs(v_plain->data[p * d + j] - v_padded->data[p * d + j]) <= 1e-9);
    }
  }
}

TEST_CASE("segment embeddings are live") {
  Vocabulary vocab = test_vocab();
  EncoderConfig cfg = small_cfg(vocab.size());
  Encoder enc;
  enc.cfg = cfg;
  enc.init(23);
  TokenizedInput in = build_input(utf8_decode("大小"), utf8_decode("约5.3"), vocab, 64);
  TokenizedInput flipped = in;
  for (auto& s : flipped.segment_ids) s = 1 - s;
  Tape tape(false);
  auto a = enc.encode(tape, in);
  auto b = enc.encode(tape, flipped);
  REQUIRE(a->data != b->data);
}

TEST_CASE("encode stays finite over random inputs, 100 seeds") {
  Vocabulary vocab = test_vocab();
  EncoderConfig cfg = small_cfg(vocab.size());
  std::u32string alphabet = utf8_decode("肿瘤大小约5.3×cm切缘距离近远端未见");
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Encoder enc;
    enc.cfg = cfg;
    enc.init(rng.next_u64());
    std::u32string q, x;
    size_t qn = 1 + rng.below(4), xn = 1 + rng.below(12);
    for (size_t i = 0; i < qn; ++i) q.push_back(alphabet[rng.below(alphabet.size())]);
    for (size_t i = 0; i < xn; ++i) x.push_back(alphabet[rng.below(alphabet.size())]);
    Tape tape(false);
    auto v = enc.encode(tape, build_input(q, x, vocab, 64));
    for (double val : v->data) REQUIRE(std::isfinite(val));
  }
}

TEST_CASE("training mode with dropout requires an RNG") {
  Vocabulary vocab = test_vocab();
  EncoderConfig cfg = small_cfg(vocab.size());
  Encoder enc;
  enc.cfg = cfg;
  enc.init(3);
  Tape tape;
  TokenizedInput in = build_input(utf8_decode("大小"), utf8_decode("约5"), vocab, 64);
  REQUIRE_THROWS_AS(enc.encode(tape, in, true, nullptr), ValidationError);
}

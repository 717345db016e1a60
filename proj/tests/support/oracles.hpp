// Test-side oracles, independent of the library's implementation paths:
// central finite differences, exhaustive span decoding, and brute-force
// string metrics.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "qacts/corpus.hpp"
#include "qacts/model.hpp"
#include "qacts/tape.hpp"

namespace oracle {

using qacts::Rng;
using qacts::Tape;
using qacts::TensorPtr;

inline TensorPtr rand_tensor(qacts::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = true) {
  auto t = qacts::tensor(std::move(shape), 0.0, requires_grad);
  for (auto& v : t->data) v = rng.uniform(lo, hi);
  return t;
}

// Fixed random weights turn any op output into a scalar that is sensitive
// to every output element (a plain sum would hide permutation mistakes).
inline TensorPtr weighted_sum(Tape& tape, const TensorPtr& out, const TensorPtr& weights) {
  return tape.sum(tape.mul(out, weights));
}

using GraphFn = std::function<TensorPtr(Tape&, const std::vector<TensorPtr>&)>;

inline double eval_graph(const GraphFn& fn, const std::vector<TensorPtr>& inputs) {
  Tape tape(false);
  return fn(tape, inputs)->data[0];
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  size_t checked = 0;
};

// Central differences at f64, default step 1e-5; relative error against the
// reverse-mode gradient with an absolute floor of 1.
inline GradCheckResult check_gradients(const GraphFn& fn, std::vector<TensorPtr> inputs,
                                       double h = 1e-5) {
  Tape tape(true);
  TensorPtr loss = fn(tape, inputs);
  tape.backward(loss);
  GradCheckResult res;
  for (auto& in : inputs) {
    if (!in->requires_grad) continue;
    for (size_t i = 0; i < in->data.size(); ++i) {
      double orig = in->data[i];
      in->data[i] = orig + h;
      double up = eval_graph(fn, inputs);
      in->data[i] = orig - h;
      double down = eval_graph(fn, inputs);
      in->data[i] = orig;
      double fd = (up - down) / (2.0 * h);
      double ad = in->grad.empty() ? 0.0 : in->grad[i];
      double denom = std::max({1.0, std::fabs(fd), std::fabs(ad)});
      res.max_rel_err = std::max(res.max_rel_err, std::fabs(fd - ad) / denom);
      res.checked++;
    }
  }
  return res;
}

// Exhaustive enumeration of valid (start, end) pairs; deliberately written
// as a flat collect-then-select pass rather than the library's running
// argmax.
struct BrutePair {
  size_t start = 0, end = 0;
  double score = 0.0;
  bool found = false;
};

inline BrutePair brute_force_decode(const std::vector<double>& o_start,
                                    const std::vector<double>& o_end,
                                    const std::vector<char>& valid, size_t max_span_len) {
  struct Entry {
    size_t i, j;
    double score;
  };
  std::vector<Entry> entries;
  for (size_t j = 0; j < o_end.size(); ++j) {
    if (!valid[j]) continue;
    for (size_t i = 0; i <= j; ++i) {
      if (!valid[i]) continue;
      if (j - i >= max_span_len) continue;
      entries.push_back({i, j, o_start[i] * o_end[j]});
    }
  }
  BrutePair best;
  for (const auto& e : entries) {
    bool better = false;
    if (!best.found) {
      better = true;
    } else if (e.score > best.score) {
      better = true;
    } else if (e.score == best.score) {
      if (e.i < best.start) better = true;
      else if (e.i == best.start && (e.j - e.i) < (best.end - best.start)) better = true;
    }
    if (better) {
      best = {e.i, e.j, e.score, true};
    }
  }
  return best;
}

// Brute-force metrics written over sorted character vectors instead of the
// library's hash-map multiset.
inline std::u32string brute_trim(const std::u32string& s) {
  auto is_ws = [](char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v' ||
           c == U'　';
  };
  size_t b = 0, e = s.size();
  while (b < e && is_ws(s[b])) ++b;
  while (e > b && is_ws(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline int brute_exact_match(const std::string& pred, const std::string& gold) {
  return brute_trim(qacts::utf8_decode(pred)) == brute_trim(qacts::utf8_decode(gold)) ? 1 : 0;
}

inline double brute_span_f1(const std::string& pred, const std::string& gold) {
  std::u32string p = brute_trim(qacts::utf8_decode(pred));
  std::u32string g = brute_trim(qacts::utf8_decode(gold));
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::vector<char32_t> pv(p.begin(), p.end()), gv(g.begin(), g.end());
  std::sort(pv.begin(), pv.end());
  std::sort(gv.begin(), gv.end());
  std::vector<char32_t> common;
  std::set_intersection(pv.begin(), pv.end(), gv.begin(), gv.end(), std::back_inserter(common));
  if (common.empty()) return 0.0;
  double precision = static_cast<double>(common.size()) / static_cast<double>(pv.size());
  double recall = static_cast<double>(common.size()) / static_cast<double>(gv.size());
  return 2.0 * precision * recall / (precision + recall);
}

// Random printable strings over a small mixed alphabet.
inline std::string random_string(Rng& rng, size_t max_len) {
  static const std::u32string alphabet = qacts::utf8_decode("5.2×cm 大小约距离未见癌");
  size_t n = rng.below(max_len + 1);
  std::u32string s;
  for (size_t i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
  return qacts::utf8_encode(s);
}

}  // namespace oracle

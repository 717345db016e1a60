#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "qacts/corpus.hpp"
#include "qacts/util.hpp"

namespace qacts {

// Exact string match after trimming surrounding whitespace. Interior
// whitespace and punctuation stay significant: measurement strings are
// sensitive to both.
inline int exact_match(const std::string& pred, const std::string& gold) {
  return trim_u32(utf8_decode(pred)) == trim_u32(utf8_decode(gold)) ? 1 : 0;
}

// Character-level bag overlap (multiset intersection). Chinese text has no
// word boundaries, so tokens are single characters.
inline double span_f1(const std::string& pred, const std::string& gold) {
  std::u32string p = trim_u32(utf8_decode(pred));
  std::u32string g = trim_u32(utf8_decode(gold));
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::unordered_map<char32_t, int> bag;
  for (char32_t c : g) bag[c]++;
  size_t common = 0;
  for (char32_t c : p) {
    auto it = bag.find(c);
    if (it != bag.end() && it->second > 0) {
      it->second--;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  double precision = static_cast<double>(common) / static_cast<double>(p.size());
  double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

struct TypeResult {
  double em = 0.0;
  double f1 = 0.0;
  size_t count = 0;
};

struct EvalResult {
  std::map<std::string, TypeResult> per_type;  // keyed by query type name
  double overall_em = 0.0;
  double macro_f1 = 0.0;  // unweighted mean of per-type F1 over types present
  size_t count = 0;
  size_t decode_failures = 0;
};

// Scores a predictor over a dataset. A failed prediction counts as EM 0 /
// F1 0 and is tallied in decode_failures.
inline EvalResult evaluate(
    const std::function<std::optional<std::string>(const Instance&)>& predict,
    const Dataset& dataset) {
  struct Acc {
    double em = 0.0, f1 = 0.0;
    size_t n = 0;
  };
  std::map<std::string, Acc> by_type;
  double em_total = 0.0;
  size_t failures = 0;
  for (const auto& inst : dataset.instances) {
    std::optional<std::string> pred = predict(inst);
    double em = 0.0, f1 = 0.0;
    if (pred.has_value()) {
      em = exact_match(*pred, inst.answer_text);
      f1 = span_f1(*pred, inst.answer_text);
    } else {
      ++failures;
    }
    Acc& a = by_type[query_type_name(inst.query_type)];
    a.em += em;
    a.f1 += f1;
    a.n += 1;
    em_total += em;
  }
  EvalResult r;
  r.count = dataset.size();
  r.decode_failures = failures;
  double f1_sum = 0.0;
  for (const auto& [name, acc] : by_type) {
    TypeResult tr;
    tr.count = acc.n;
    tr.em = acc.em / static_cast<double>(acc.n);
    tr.f1 = acc.f1 / static_cast<double>(acc.n);
    r.per_type[name] = tr;
    f1_sum += tr.f1;
  }
  if (!by_type.empty()) r.macro_f1 = f1_sum / static_cast<double>(by_type.size());
  if (r.count > 0) r.overall_em = em_total / static_cast<double>(r.count);
  return r;
}

inline nlohmann::ordered_json eval_to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json types;
  for (QueryType t : all_query_types()) {
    auto it = r.per_type.find(query_type_name(t));
    if (it == r.per_type.end()) continue;
    nlohmann::ordered_json e;
    e["em"] = it->second.em;
    e["f1"] = it->second.f1;
    e["count"] = it->second.count;
    e["em_pct"] = format_pct(it->second.em);
    e["f1_pct"] = format_pct(it->second.f1);
    types[it->first] = std::move(e);
  }
  j["per_type"] = std::move(types);
  j["overall_em"] = r.overall_em;
  j["macro_f1"] = r.macro_f1;
  j["overall_em_pct"] = format_pct(r.overall_em);
  j["macro_f1_pct"] = format_pct(r.macro_f1);
  j["count"] = r.count;
  j["decode_failures"] = r.decode_failures;
  return j;
}

// Aligned plain-text table, percentages with two decimals.
inline std::string render_eval_table(const EvalResult& r) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-28s %10s %10s %8s\n", "Type", "EM-score", "F1-score",
                "Count");
  out += line;
  out += std::string(58, '-') + "\n";
  for (QueryType t : all_query_types()) {
    auto it = r.per_type.find(query_type_name(t));
    if (it == r.per_type.end()) continue;
    std::snprintf(line, sizeof(line), "%-28s %10s %10s %8zu\n", query_type_display(t).c_str(),
                  format_pct(it->second.em).c_str(), format_pct(it->second.f1).c_str(),
                  it->second.count);
    out += line;
  }
  out += std::string(58, '-') + "\n";
  std::snprintf(line, sizeof(line), "%-28s %10s %10s %8zu\n", "Overall (EM / macro-F1)",
                format_pct(r.overall_em).c_str(), format_pct(r.macro_f1).c_str(), r.count);
  out += line;
  return out;
}

}  // namespace qacts

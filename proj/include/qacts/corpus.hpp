#pragma once

#include <array>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qacts/entity.hpp"
#include "qacts/rng.hpp"
#include "qacts/util.hpp"

namespace qacts {

enum class QueryType { kTumorSize, kProximalMargin, kDistalMargin };

inline const std::array<QueryType, 3>& all_query_types() {
  static const std::array<QueryType, 3> types = {
      QueryType::kTumorSize, QueryType::kProximalMargin, QueryType::kDistalMargin};
  return types;
}

inline std::string query_type_name(QueryType t) {
  switch (t) {
    case QueryType::kTumorSize: return "tumor_size";
    case QueryType::kProximalMargin: return "proximal_margin";
    case QueryType::kDistalMargin: return "distal_margin";
  }
  throw Error("unreachable query type");
}

inline QueryType query_type_from_name(const std::string& s) {
  for (QueryType t : all_query_types()) {
    if (query_type_name(t) == s) return t;
  }
  throw ValidationError("unknown query type: " + s);
}

inline std::string query_type_display(QueryType t) {
  switch (t) {
    case QueryType::kTumorSize: return "Tumor Size";
    case QueryType::kProximalMargin: return "Proximal Resection Margin";
    case QueryType::kDistalMargin: return "Distal Resection Margin";
  }
  throw Error("unreachable query type");
}

// One fixed question phrasing per query type.
inline std::string query_text_for(QueryType t) {
  switch (t) {
    case QueryType::kTumorSize: return "肿瘤大小";
    case QueryType::kProximalMargin: return "近端切缘距离";
    case QueryType::kDistalMargin: return "远端切缘距离";
  }
  throw Error("unreachable query type");
}

constexpr size_t kDefaultMaxLen = 256;

// One QA unit: a paragraph X, a query Q, and the gold answer substring with
// inclusive character offsets into X.
struct Instance {
  std::string id;
  std::string paragraph;
  std::string query;
  QueryType query_type = QueryType::kTumorSize;
  std::string answer_text;
  size_t answer_start_char = 0;
  size_t answer_end_char = 0;

  void validate() const {
    if (id.empty()) throw ValidationError("instance id is empty");
    std::u32string para = utf8_decode(paragraph);
    std::u32string ans = utf8_decode(answer_text);
    std::u32string q = utf8_decode(query);
    if (para.empty()) throw ValidationError("instance " + id + ": empty paragraph");
    if (q.empty()) throw ValidationError("instance " + id + ": empty query");
    if (ans.empty()) throw ValidationError("instance " + id + ": empty answer");
    if (answer_end_char < answer_start_char || answer_end_char >= para.size()) {
      throw ValidationError("instance " + id + ": answer span [" +
                            std::to_string(answer_start_char) + "," +
                            std::to_string(answer_end_char) + "] out of range");
    }
    if (para.substr(answer_start_char, answer_end_char - answer_start_char + 1) != ans) {
      throw ValidationError("instance " + id + ": answer_text does not match paragraph span");
    }
    if (q.size() + para.size() + 3 > kDefaultMaxLen) {
      throw ValidationError("instance " + id + ": input length " +
                            std::to_string(q.size() + para.size() + 3) + " exceeds " +
                            std::to_string(kDefaultMaxLen));
    }
  }
};

struct Dataset {
  std::vector<Instance> instances;
  std::string split;       // train / test / other
  std::string provenance;  // generator seed or file path

  size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }
};

// -----------------------------------------------------------------------
// JSONL persistence. Loading validates every invariant and rejects the
// whole file on any violation, reporting line numbers.

inline nlohmann::ordered_json instance_to_json(const Instance& inst) {
  nlohmann::ordered_json j;
  j["id"] = inst.id;
  j["paragraph"] = inst.paragraph;
  j["query"] = inst.query;
  j["query_type"] = query_type_name(inst.query_type);
  j["answer_text"] = inst.answer_text;
  j["answer_start_char"] = inst.answer_start_char;
  j["answer_end_char"] = inst.answer_end_char;
  return j;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::string out;
  for (const auto& inst : ds.instances) {
    out += instance_to_json(inst).dump();
    out += '\n';
  }
  write_file(path, out);
}

inline Dataset load_dataset(const std::string& path, const std::string& split = "") {
  std::string contents = read_file(path);
  Dataset ds;
  ds.split = split;
  ds.provenance = path;
  if (contents.empty()) {
    std::cerr << "warning: dataset file " << path << " is empty\n";
    return ds;
  }
  std::vector<std::string> errors;
  std::map<std::string, size_t> seen_ids;
  size_t pos = 0, line_no = 0;
  while (pos < contents.size()) {
    size_t nl = contents.find('\n', pos);
    std::string line =
        contents.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? contents.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Instance inst;
      inst.id = j.at("id").get<std::string>();
      inst.paragraph = j.at("paragraph").get<std::string>();
      inst.query = j.at("query").get<std::string>();
      inst.query_type = query_type_from_name(j.at("query_type").get<std::string>());
      inst.answer_text = j.at("answer_text").get<std::string>();
      inst.answer_start_char = j.at("answer_start_char").get<size_t>();
      inst.answer_end_char = j.at("answer_end_char").get<size_t>();
      inst.validate();
      auto [it, fresh] = seen_ids.emplace(inst.id, line_no);
      if (!fresh) {
        throw ValidationError("duplicate id " + inst.id + " (first seen on line " +
                              std::to_string(it->second) + ")");
      }
      ds.instances.push_back(std::move(inst));
    } catch (const std::exception& e) {
      errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "dataset " + path + " failed validation:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return ds;
}

inline Dataset split_by_type(const Dataset& ds, const std::vector<QueryType>& types) {
  if (types.empty()) throw ValidationError("split_by_type: no types given");
  Dataset out;
  out.split = ds.split;
  out.provenance = ds.provenance;
  for (const auto& inst : ds.instances) {
    for (QueryType t : types) {
      if (inst.query_type == t) {
        out.instances.push_back(inst);
        break;
      }
    }
  }
  return out;
}

// Deterministic train/dev carve-out for early stopping.
inline std::pair<Dataset, Dataset> split_train_dev(const Dataset& ds, double dev_fraction,
                                                   uint64_t seed) {
  std::vector<size_t> order(ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "train-dev-split"));
  shuffle(order, rng);
  size_t dev_n = static_cast<size_t>(static_cast<double>(ds.size()) * dev_fraction);
  if (ds.size() > 1 && dev_n == 0) dev_n = 1;
  Dataset train, dev;
  train.split = "train";
  dev.split = "dev";
  train.provenance = ds.provenance;
  dev.provenance = ds.provenance;
  for (size_t k = 0; k < order.size(); ++k) {
    (k < dev_n ? dev : train).instances.push_back(ds.instances[order[k]]);
  }
  return {std::move(train), std::move(dev)};
}

// -----------------------------------------------------------------------
// Reference lexicon and patterns. The generator builds its text from these
// terms, so the same table drives the reference entity tagger.

inline const std::vector<LexiconEntry>& reference_lexicon() {
  static const std::vector<LexiconEntry> lex = [] {
    std::vector<std::pair<const char*, const char*>> raw = {
        {"近端切缘", "margin-term"}, {"远端切缘", "margin-term"}, {"环周切缘", "margin-term"},
        {"切缘", "margin-term"},     {"肿瘤大小", "exam-item"},   {"肿块大小", "exam-item"},
        {"癌灶大小", "exam-item"},   {"肿物大小", "exam-item"},   {"直径", "exam-item"},
        {"大小", "size-term"},       {"×", "size-term"},          {"距离", "size-term"},
        {"管状腺癌", "disease"},     {"印戒细胞癌", "disease"},   {"黏液腺癌", "disease"},
        {"腺癌", "disease"},         {"癌转移", "disease"},       {"癌结节", "disease"},
        {"癌栓", "disease"},         {"肿瘤", "disease"},         {"肿块", "disease"},
        {"癌灶", "disease"},         {"肿物", "disease"},         {"癌", "disease"},
        {"溃疡", "symptom"},         {"糜烂", "symptom"},         {"出血", "symptom"},
        {"慢性炎", "symptom"},       {"根治术", "operation"},     {"送检", "operation"},
        {"切除", "operation"},       {"清扫", "operation"},       {"胃窦", "body-part"},
        {"胃体", "body-part"},       {"贲门", "body-part"},       {"胃角", "body-part"},
        {"幽门", "body-part"},       {"食管下段", "body-part"},   {"直肠", "body-part"},
        {"乙状结肠", "body-part"},   {"浆膜下层", "body-part"},   {"浆膜", "body-part"},
        {"肌层", "body-part"},       {"黏膜", "body-part"},       {"网膜", "body-part"},
        {"淋巴结", "body-part"},     {"淋巴管", "body-part"},     {"脉管", "body-part"},
        {"神经", "body-part"},       {"未见", "negative-word"},   {"未", "negative-word"},
        {"无", "negative-word"},     {"cm", "unit"},              {"mm", "unit"},
        {"枚", "unit"},              {"组", "unit"},
    };
    std::vector<LexiconEntry> out;
    out.reserve(raw.size());
    for (const auto& [term, type] : raw) out.push_back({utf8_decode(term), type});
    return out;
  }();
  return lex;
}

inline const std::vector<PatternEntry>& reference_patterns() {
  static const std::vector<PatternEntry> pats = {{"number", "[0-9]+(\\.[0-9]+)?"}};
  return pats;
}

inline std::string serialize_patterns(const std::vector<PatternEntry>& pats) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& p : pats) {
    nlohmann::ordered_json e;
    e["type"] = p.entity_type;
    e["regex"] = p.regex;
    j.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

inline std::vector<PatternEntry> parse_patterns(const std::string& contents) {
  std::vector<PatternEntry> out;
  auto j = nlohmann::json::parse(contents);
  for (const auto& e : j) {
    out.push_back({e.at("type").get<std::string>(), e.at("regex").get<std::string>()});
  }
  return out;
}

inline std::shared_ptr<DictRegexTagger> make_reference_tagger() {
  return std::make_shared<DictRegexTagger>(reference_lexicon(), reference_patterns());
}

// -----------------------------------------------------------------------
// Synthetic pathology-report generator. Every paragraph carries one
// measurement per query type plus distractor measurements and negation
// phrases, so answers depend on the query and are never just the first
// number in the text.

namespace gen {

inline std::u32string u32(const char* s) { return utf8_decode(s); }

inline const std::vector<std::u32string>& sites() {
  static const auto v = std::vector<std::u32string>{
      u32("胃窦"), u32("胃体"), u32("贲门"),     u32("胃角"),
      u32("幽门"), u32("直肠"), u32("食管下段"), u32("乙状结肠")};
  return v;
}

inline const std::vector<std::u32string>& site_mods() {
  static const auto v = std::vector<std::u32string>{u32("小弯侧"), u32("大弯侧"), u32("前壁"),
                                                    u32("后壁"), u32("")};
  return v;
}

inline const std::vector<std::u32string>& gross_types() {
  static const auto v =
      std::vector<std::u32string>{u32("溃疡型"), u32("隆起型"), u32("浸润型"), u32("")};
  return v;
}

inline const std::vector<std::u32string>& grades() {
  static const auto v =
      std::vector<std::u32string>{u32("高分化"), u32("中分化"), u32("低分化"), u32("")};
  return v;
}

inline const std::vector<std::u32string>& diseases() {
  static const auto v = std::vector<std::u32string>{u32("腺癌"), u32("管状腺癌"),
                                                    u32("印戒细胞癌"), u32("黏液腺癌")};
  return v;
}

// The gold clause opens with the query phrase itself (as the fixed query
// terms do in real reports); the tail after the keyword still varies.
inline const std::vector<std::u32string>& size_keywords() {
  static const auto v = std::vector<std::u32string>{u32("肿瘤大小"), u32("肿瘤大小约"),
                                                    u32("肿瘤大小为")};
  return v;
}

inline const std::vector<std::u32string>& proximal_patterns() {
  static const auto v =
      std::vector<std::u32string>{u32("近端切缘距离肿瘤"), u32("近端切缘距离癌灶"),
                                  u32("近端切缘距离为"), u32("近端切缘距离")};
  return v;
}

inline const std::vector<std::u32string>& distal_patterns() {
  static const auto v =
      std::vector<std::u32string>{u32("远端切缘距离肿瘤"), u32("远端切缘距离癌灶"),
                                  u32("远端切缘距离为"), u32("远端切缘距离")};
  return v;
}

inline const std::vector<std::u32string>& negation_clauses() {
  static const auto v = std::vector<std::u32string>{
      u32("未见明确脉管内癌栓"), u32("未见神经侵犯"), u32("环周切缘未见癌累及"),
      u32("网膜未见癌结节"), u32("未见淋巴管侵犯")};
  return v;
}

inline const std::vector<std::u32string>& micro_clauses() {
  static const auto v = std::vector<std::u32string>{
      u32("镜下见肿瘤浸润至浆膜下层"), u32("肿瘤浸润至肌层"), u32("局部表面糜烂出血"),
      u32("周围黏膜呈慢性炎改变")};
  return v;
}

// One measurement value, e.g. "5.5" or "7".
inline std::u32string draw_value(Rng& rng) {
  if (rng.below(4) == 0) {
    return utf8_decode(std::to_string(1 + rng.below(11)));
  }
  uint64_t tenths = 3 + rng.below(118);  // 0.3 .. 12.0
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%llu.%llu", static_cast<unsigned long long>(tenths / 10),
                static_cast<unsigned long long>(tenths % 10));
  return utf8_decode(buf);
}

inline std::u32string draw_unit(Rng& rng) {
  return rng.below(10) == 0 ? u32("mm") : u32("cm");
}

// "A×B×Ccm" (or two dims)
inline std::u32string draw_size_value(Rng& rng) {
  size_t dims = rng.below(10) < 3 ? 2 : 3;
  std::u32string out;
  for (size_t i = 0; i < dims; ++i) {
    if (i) out += u32("×");
    out += draw_value(rng);
  }
  out += draw_unit(rng);
  return out;
}

}  // namespace gen

inline Dataset generate(size_t n, uint64_t seed) {
  if (n < 3) throw ValidationError("generate: n must be at least 3");
  using gen::u32;
  Rng rng(derive_seed(seed, "corpus"));

  // Type counts follow the reference corpus ratios 643 : 681 : 575
  // (proximal : distal : tumor) by largest remainder, so proportions hold
  // to within one instance.
  const double total = 1899.0;
  const std::array<std::pair<QueryType, double>, 3> ratios = {{
      {QueryType::kProximalMargin, 643.0 / total},
      {QueryType::kDistalMargin, 681.0 / total},
      {QueryType::kTumorSize, 575.0 / total},
  }};
  std::array<size_t, 3> counts{};
  std::array<double, 3> frac{};
  size_t assigned = 0;
  for (size_t i = 0; i < 3; ++i) {
    double exact = ratios[i].second * static_cast<double>(n);
    counts[i] = static_cast<size_t>(exact);
    frac[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n) {
    size_t best = 0;
    for (size_t i = 1; i < 3; ++i) {
      if (frac[i] > frac[best]) best = i;
    }
    counts[best]++;
    frac[best] = -1.0;
    ++assigned;
  }
  std::vector<QueryType> types;
  types.reserve(n);
  for (size_t i = 0; i < 3; ++i) {
    types.insert(types.end(), counts[i], ratios[i].first);
  }
  shuffle(types, rng);

  Dataset ds;
  ds.split = "generated";
  ds.provenance = "generator seed " + std::to_string(seed);
  ds.instances.reserve(n);

  for (size_t idx = 0; idx < n; ++idx) {
    QueryType qt = types[idx];

    struct Clause {
      std::u32string text;
      size_t answer_off = 0;  // offset of the measurement inside text
      size_t answer_len = 0;
      int gold_for = -1;  // index into all_query_types(), -1 for none
    };
    std::vector<Clause> measurements;

    auto pick = [&](const std::vector<std::u32string>& v) { return v[rng.below(v.size())]; };

    {
      Clause c;
      c.text = pick(gen::size_keywords());
      c.answer_off = c.text.size();
      std::u32string val = gen::draw_size_value(rng);
      c.answer_len = val.size();
      c.text += val;
      c.gold_for = 0;  // tumor_size
      measurements.push_back(std::move(c));
    }
    {
      Clause c;
      c.text = pick(gen::proximal_patterns());
      c.answer_off = c.text.size();
      std::u32string val = gen::draw_value(rng) + gen::draw_unit(rng);
      c.answer_len = val.size();
      c.text += val;
      c.gold_for = 1;  // proximal_margin
      measurements.push_back(std::move(c));
    }
    {
      Clause c;
      c.text = pick(gen::distal_patterns());
      c.answer_off = c.text.size();
      std::u32string val = gen::draw_value(rng) + gen::draw_unit(rng);
      c.answer_len = val.size();
      c.text += val;
      c.gold_for = 2;  // distal_margin
      measurements.push_back(std::move(c));
    }
    shuffle(measurements, rng);

    // trailing distractors: lymph counts, a second size-like measurement,
    // negation phrases
    std::vector<std::u32string> extras;
    {
      uint64_t total_nodes = 3 + rng.below(28);
      std::u32string lymph = u32("送检淋巴结") + utf8_decode(std::to_string(total_nodes)) +
                             u32("枚");
      if (rng.below(2)) {
        uint64_t hit = 1 + rng.below(total_nodes);
        lymph += u32("，其中") + utf8_decode(std::to_string(hit)) + u32("枚见癌转移");
      }
      if (rng.below(4) == 0) {
        lymph += u32("，最大者直径") + gen::draw_value(rng) + gen::draw_unit(rng);
      }
      extras.push_back(std::move(lymph));
    }
    if (rng.below(10) < 3) {
      extras.push_back(u32("网膜组织大小") + gen::draw_size_value(rng));
    }
    if (rng.below(10) < 4) {
      extras.push_back(pick(gen::negation_clauses()));
    } else if (rng.below(10) < 4) {
      extras.push_back(pick(gen::micro_clauses()));
    }

    std::u32string para;
    para += u32("（") + pick(gen::sites()) + pick(gen::site_mods()) + u32("）");
    if (rng.below(2)) para += pick(gen::gross_types());
    if (rng.below(3) == 0) para += pick(gen::grades());
    para += pick(gen::diseases());
    size_t gold_start = 0, gold_len = 0;
    int want = qt == QueryType::kTumorSize ? 0 : (qt == QueryType::kProximalMargin ? 1 : 2);
    for (const auto& c : measurements) {
      para += u32("，");
      if (c.gold_for == want) {
        gold_start = para.size() + c.answer_off;
        gold_len = c.answer_len;
      }
      para += c.text;
    }
    for (const auto& e : extras) {
      para += u32("，");
      para += e;
    }
    para += u32("。");

    Instance inst;
    char idbuf[24];
    std::snprintf(idbuf, sizeof(idbuf), "inst-%06zu", idx + 1);
    inst.id = idbuf;
    inst.paragraph = utf8_encode(para);
    inst.query = query_text_for(qt);
    inst.query_type = qt;
    inst.answer_start_char = gold_start;
    inst.answer_end_char = gold_start + gold_len - 1;
    inst.answer_text = utf8_encode(para.substr(gold_start, gold_len));
    inst.validate();
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

}  // namespace qacts

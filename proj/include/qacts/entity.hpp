#pragma once

#include <algorithm>
#include <memory>
#include <regex>
#include <string>
#include <vector>

#include "qacts/encoder.hpp"
#include "qacts/tensor.hpp"
#include "qacts/util.hpp"

namespace qacts {

// BIEOS label space over an ordered entity-type inventory. Label ids:
// O = 0, then for type t: B = 1+4t, I = 2+4t, E = 3+4t, S = 4+4t.
struct TagScheme {
  std::vector<std::string> entity_types;

  static TagScheme reference() {
    return TagScheme{{"disease", "symptom", "operation", "exam-item", "body-part", "number",
                      "unit", "negative-word", "margin-term", "size-term"}};
  }

  size_t one_hot_dim() const { return 4 * entity_types.size() + 1; }

  int type_index(const std::string& type) const {
    for (size_t i = 0; i < entity_types.size(); ++i) {
      if (entity_types[i] == type) return static_cast<int>(i);
    }
    throw ValidationError("unknown entity type: " + type);
  }

  int outside_id() const { return 0; }
  int begin_id(int type) const { return 1 + 4 * type; }
  int inside_id(int type) const { return 2 + 4 * type; }
  int end_id(int type) const { return 3 + 4 * type; }
  int single_id(int type) const { return 4 + 4 * type; }

  std::string label_name(int id) const {
    if (id == 0) return "O";
    int t = (id - 1) / 4;
    int k = (id - 1) % 4;
    static const char* kind = "BIES";
    return std::string(1, kind[k]) + "-" + entity_types.at(static_cast<size_t>(t));
  }
};

struct EntityAnnotation {
  size_t start_char = 0;
  size_t end_char = 0;  // inclusive
  std::string entity_type;

  bool operator==(const EntityAnnotation&) const = default;
};

inline void validate_annotations(const std::vector<EntityAnnotation>& anns, size_t text_len) {
  auto sorted = anns;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.start_char < b.start_char; });
  size_t prev_end = 0;
  bool first = true;
  for (const auto& a : sorted) {
    if (a.end_char < a.start_char || a.end_char >= text_len) {
      throw ValidationError("annotation [" + std::to_string(a.start_char) + "," +
                            std::to_string(a.end_char) + "] out of range for text of length " +
                            std::to_string(text_len));
    }
    if (!first && a.start_char <= prev_end) {
      throw ValidationError("overlapping annotations at char " + std::to_string(a.start_char));
    }
    prev_end = a.end_char;
    first = false;
  }
}

// Per-character BIEOS labels plus their one-hot form.
struct TagSequence {
  std::vector<int> label_ids;

  size_t size() const { return label_ids.size(); }

  TensorPtr one_hot(const TagScheme& scheme) const {
    auto t = tensor({label_ids.size(), scheme.one_hot_dim()}, 0.0, false);
    for (size_t i = 0; i < label_ids.size(); ++i) {
      t->data[i * scheme.one_hot_dim() + static_cast<size_t>(label_ids[i])] = 1.0;
    }
    return t;
  }
};

// Well-formedness: B..E runs are contiguous, one type, length >= 2; S is
// isolated; no I/E without a matching B.
inline bool bieos_well_formed(const TagScheme& scheme, const std::vector<int>& ids) {
  size_t n = ids.size();
  size_t i = 0;
  auto kind_of = [](int id) { return (id - 1) % 4; };  // 0=B 1=I 2=E 3=S
  auto type_of = [](int id) { return (id - 1) / 4; };
  while (i < n) {
    int id = ids[i];
    if (id < 0 || static_cast<size_t>(id) >= scheme.one_hot_dim()) return false;
    if (id == 0 || kind_of(id) == 3) {
      ++i;
      continue;
    }
    if (kind_of(id) != 0) return false;  // I or E with no B
    int t = type_of(id);
    size_t j = i + 1;
    while (j < n && ids[j] == scheme.inside_id(t)) ++j;
    if (j >= n || ids[j] != scheme.end_id(t)) return false;
    i = j + 1;
  }
  return true;
}

inline TagSequence to_bieos(const std::vector<EntityAnnotation>& anns, size_t text_len,
                            const TagScheme& scheme) {
  validate_annotations(anns, text_len);
  TagSequence seq;
  seq.label_ids.assign(text_len, scheme.outside_id());
  for (const auto& a : anns) {
    int t = scheme.type_index(a.entity_type);
    if (a.start_char == a.end_char) {
      seq.label_ids[a.start_char] = scheme.single_id(t);
    } else {
      seq.label_ids[a.start_char] = scheme.begin_id(t);
      for (size_t i = a.start_char + 1; i < a.end_char; ++i) {
        seq.label_ids[i] = scheme.inside_id(t);
      }
      seq.label_ids[a.end_char] = scheme.end_id(t);
    }
  }
  return seq;
}

inline std::vector<EntityAnnotation> decode_bieos(const TagSequence& seq,
                                                  const TagScheme& scheme) {
  if (!bieos_well_formed(scheme, seq.label_ids)) {
    throw ValidationError("decode_bieos: malformed tag sequence");
  }
  std::vector<EntityAnnotation> out;
  size_t i = 0, n = seq.size();
  while (i < n) {
    int id = seq.label_ids[i];
    if (id == 0) {
      ++i;
      continue;
    }
    int t = (id - 1) / 4;
    const std::string& type = scheme.entity_types[static_cast<size_t>(t)];
    if (id == scheme.single_id(t)) {
      out.push_back({i, i, type});
      ++i;
      continue;
    }
    size_t j = i + 1;
    while (seq.label_ids[j] == scheme.inside_id(t)) ++j;
    out.push_back({i, j, type});
    i = j + 1;
  }
  return out;
}

// -----------------------------------------------------------------------
// Taggers

class EntityTagger {
 public:
  virtual ~EntityTagger() = default;
  virtual std::vector<EntityAnnotation> tag(const std::u32string& text) const = 0;
};

struct LexiconEntry {
  std::u32string term;
  std::string entity_type;
};

struct PatternEntry {
  std::string entity_type;
  std::string regex;
};

// Reference tagger: dictionary terms plus byte-level regex patterns (the
// patterns are ASCII-only, e.g. numerals, so byte matching is safe inside
// UTF-8). Candidates are resolved longest-match-first with leftmost
// tie-break, dictionary before patterns on exact ties.
class DictRegexTagger final : public EntityTagger {
 public:
  DictRegexTagger(std::vector<LexiconEntry> lexicon, std::vector<PatternEntry> patterns)
      : lexicon_(std::move(lexicon)) {
    for (const auto& p : patterns) {
      compiled_.emplace_back(p.entity_type, std::regex(p.regex));
    }
  }

  std::vector<EntityAnnotation> tag(const std::u32string& text) const override {
    struct Candidate {
      size_t start, len;
      size_t rank;  // collection order; dictionary first
      std::string type;
    };
    std::vector<Candidate> cands;
    size_t rank = 0;
    for (const auto& e : lexicon_) {
      if (e.term.empty()) continue;
      size_t pos = text.find(e.term, 0);
      while (pos != std::u32string::npos) {
        cands.push_back({pos, e.term.size(), rank, e.entity_type});
        pos = text.find(e.term, pos + 1);
      }
      ++rank;
    }
    if (!compiled_.empty()) {
      std::string bytes = utf8_encode(text);
      // byte offset -> index of the character containing that byte
      std::vector<size_t> char_at(bytes.size() + 1, 0);
      {
        size_t ci = 0;
        for (size_t b = 0; b < bytes.size(); ++b) {
          bool lead = (static_cast<unsigned char>(bytes[b]) & 0xC0) != 0x80;
          if (lead && b > 0) ++ci;
          char_at[b] = ci;
        }
        char_at[bytes.size()] = bytes.empty() ? 0 : ci + 1;
      }
      for (const auto& [type, re] : compiled_) {
        for (auto it = std::sregex_iterator(bytes.begin(), bytes.end(), re);
             it != std::sregex_iterator(); ++it) {
          size_t b0 = static_cast<size_t>(it->position());
          size_t b1 = b0 + static_cast<size_t>(it->length());
          if (it->length() == 0) continue;
          cands.push_back({char_at[b0], char_at[b1] - char_at[b0], rank, type});
        }
        ++rank;
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.len != b.len) return a.len > b.len;
      if (a.start != b.start) return a.start < b.start;
      return a.rank < b.rank;
    });
    std::vector<char> taken(text.size(), 0);
    std::vector<EntityAnnotation> out;
    for (const auto& c : cands) {
      bool free = true;
      for (size_t i = c.start; i < c.start + c.len; ++i) {
        if (taken[i]) {
          free = false;
          break;
        }
      }
      if (!free) continue;
      for (size_t i = c.start; i < c.start + c.len; ++i) taken[i] = 1;
      out.push_back({c.start, c.start + c.len - 1, c.type});
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.start_char < b.start_char; });
    return out;
  }

 private:
  std::vector<LexiconEntry> lexicon_;
  std::vector<std::pair<std::string, std::regex>> compiled_;
};

// Runs any tagger and validates its output against the annotation contract.
inline std::vector<EntityAnnotation> tag_text(const std::u32string& text,
                                              const EntityTagger& tagger) {
  auto anns = tagger.tag(text);
  validate_annotations(anns, text.size());
  return anns;
}

inline TagSequence tag_to_bieos(const std::u32string& text, const EntityTagger& tagger,
                                const TagScheme& scheme) {
  return to_bieos(tag_text(text, tagger), text.size(), scheme);
}

// -----------------------------------------------------------------------
// Lexicon / pattern file formats: UTF-8 lines "term<TAB>type" and a JSON
// array [{"type": ..., "regex": ...}].

inline std::vector<LexiconEntry> parse_lexicon(const std::string& contents) {
  std::vector<LexiconEntry> out;
  size_t line_no = 0, pos = 0;
  while (pos <= contents.size()) {
    size_t nl = contents.find('\n', pos);
    std::string line = contents.substr(pos, nl == std::string::npos ? nl : nl - pos);
    pos = nl == std::string::npos ? contents.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError("lexicon line " + std::to_string(line_no) + ": missing tab");
    }
    out.push_back({utf8_decode(line.substr(0, tab)), line.substr(tab + 1)});
  }
  return out;
}

inline std::string serialize_lexicon(const std::vector<LexiconEntry>& lex) {
  std::string out;
  for (const auto& e : lex) {
    out += utf8_encode(e.term);
    out += '\t';
    out += e.entity_type;
    out += '\n';
  }
  return out;
}

// -----------------------------------------------------------------------
// Channel merge: I_nq over the query, I_nt over the paragraph, aligned to
// the encoder layout. [CLS], [SEP] and padding rows carry the O one-hot.

inline TensorPtr merge_channels(const TagSequence& query_tags, const TagSequence& paragraph_tags,
                                const TokenizedInput& layout, const TagScheme& scheme) {
  if (query_tags.size() != layout.query_len) {
    throw ShapeError("merge_channels: query tag length " + std::to_string(query_tags.size()) +
                     " != layout query length " + std::to_string(layout.query_len));
  }
  if (paragraph_tags.size() != layout.paragraph_len) {
    throw ShapeError("merge_channels: paragraph tag length " +
                     std::to_string(paragraph_tags.size()) + " != layout paragraph length " +
                     std::to_string(layout.paragraph_len));
  }
  size_t dim = scheme.one_hot_dim();
  auto out = tensor({layout.size(), dim}, 0.0, false);
  for (size_t p = 0; p < layout.size(); ++p) {
    int label = scheme.outside_id();
    if (p >= layout.query_begin && p < layout.query_begin + layout.query_len) {
      label = query_tags.label_ids[p - layout.query_begin];
    } else if (layout.is_paragraph(p)) {
      label = paragraph_tags.label_ids[p - layout.paragraph_begin];
    }
    out->data[p * dim + static_cast<size_t>(label)] = 1.0;
  }
  return out;
}

}  // namespace qacts

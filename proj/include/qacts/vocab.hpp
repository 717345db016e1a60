#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "qacts/util.hpp"

namespace qacts {

// Character-level vocabulary. Chinese clinical text tokenizes one character
// per token, which keeps span offsets identical between text and layout.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kNumReserved = 4;

  Vocabulary() = default;

  // Characters are assigned ids in code-point order, so the mapping depends
  // only on the character set, not on text order.
  static Vocabulary build(const std::vector<std::u32string>& texts) {
    std::set<char32_t> chars;
    for (const auto& t : texts) chars.insert(t.begin(), t.end());
    Vocabulary v;
    v.chars_.assign(chars.begin(), chars.end());
    v.index_chars();
    return v;
  }

  static Vocabulary from_chars(std::vector<char32_t> chars) {
    Vocabulary v;
    v.chars_ = std::move(chars);
    std::sort(v.chars_.begin(), v.chars_.end());
    v.chars_.erase(std::unique(v.chars_.begin(), v.chars_.end()), v.chars_.end());
    v.index_chars();
    return v;
  }

  int id_of(char32_t c) const {
    auto it = to_id_.find(c);
    return it == to_id_.end() ? kUnk : it->second;
  }

  size_t size() const { return chars_.size() + kNumReserved; }

  const std::vector<char32_t>& chars() const { return chars_; }

 private:
  void index_chars() {
    to_id_.clear();
    for (size_t i = 0; i < chars_.size(); ++i) {
      to_id_[chars_[i]] = static_cast<int>(i) + kNumReserved;
    }
  }

  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> to_id_;
};

}  // namespace qacts

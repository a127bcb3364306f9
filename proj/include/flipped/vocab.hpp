#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flipped/text.hpp"

namespace flipped {

namespace detail {
// U+27E8 / U+27E9 mathematical angle brackets, reserved for control glyphs.
inline constexpr const char* kLAngle = "\xE2\x9F\xA8";
inline constexpr const char* kRAngle = "\xE2\x9F\xA9";
}  // namespace detail

/// Word-level token <-> id bijection with reserved control tokens.
///
/// Id layout: pad=0, eos=1, unk=2, then `num_sentinels` sentinel tokens,
/// then content tokens in lexicographic order. Sentinel and eos glyphs use
/// the reserved bracket characters and are never produced by tokenizing
/// plain text; plain text containing those characters is rejected.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kNumFixed = 3;

  Vocabulary() = default;

  /// Builds a vocabulary over the whitespace-split words of `corpus`.
  static Vocabulary build(const std::vector<std::string>& corpus,
                          int num_sentinels) {
    std::map<std::string, int> seen;
    for (const auto& line : corpus) {
      if (contains_reserved_glyph(line)) {
        throw std::runtime_error(
            "vocabulary corpus contains a reserved sentinel bracket: " + line);
      }
      for (auto& w : split_ws(line)) seen.emplace(std::move(w), 0);
    }
    Vocabulary v;
    v.num_sentinels_ = num_sentinels;
    v.content_.reserve(seen.size());
    for (const auto& [word, _] : seen) v.content_.push_back(word);
    v.rebuild_index();
    return v;
  }

  int size() const {
    return kNumFixed + num_sentinels_ + static_cast<int>(content_.size());
  }
  int num_sentinels() const { return num_sentinels_; }
  int sentinel_id(int k) const {
    if (k < 0 || k >= num_sentinels_)
      throw std::runtime_error("sentinel index out of range: " +
                               std::to_string(k));
    return kNumFixed + k;
  }
  bool is_sentinel(int id) const {
    return id >= kNumFixed && id < kNumFixed + num_sentinels_;
  }

  static std::string sentinel_glyph(int k) {
    return std::string(detail::kLAngle) + "s" + std::to_string(k) +
           detail::kRAngle;
  }
  static std::string eos_glyph() {
    return std::string(detail::kLAngle) + "eos" + detail::kRAngle;
  }
  static bool contains_reserved_glyph(std::string_view text) {
    return text.find(detail::kLAngle) != std::string_view::npos ||
           text.find(detail::kRAngle) != std::string_view::npos;
  }

  /// Tokenizes plain task text. Out-of-vocabulary words map to unk;
  /// reserved glyph characters are rejected.
  std::vector<int> encode_plain(std::string_view text) const {
    if (contains_reserved_glyph(text)) {
      throw std::runtime_error(
          "plain text contains a reserved sentinel bracket: " +
          std::string(text));
    }
    std::vector<int> ids;
    for (const auto& w : split_ws(text)) ids.push_back(content_id(w));
    return ids;
  }

  /// Tokenizes rendered text, mapping control glyphs to their reserved
  /// ids. Glyphs may adjoin words or each other without whitespace.
  std::vector<int> encode_rendered(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& chunk : split_ws(text)) {
      std::size_t i = 0;
      while (i < chunk.size()) {
        const std::size_t open = chunk.find(detail::kLAngle, i);
        if (open == std::string::npos) {
          ids.push_back(content_id(chunk.substr(i)));
          break;
        }
        if (open > i) ids.push_back(content_id(chunk.substr(i, open - i)));
        const std::size_t close = chunk.find(detail::kRAngle, open);
        if (close == std::string::npos) {
          throw std::runtime_error("unterminated control glyph in: " +
                                   std::string(chunk));
        }
        const std::size_t body = open + 3;
        ids.push_back(glyph_id(chunk.substr(body, close - body)));
        i = close + 3;
      }
    }
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    for (int id : ids) {
      if (id == kPad) continue;
      words.push_back(token(id));
    }
    return join(words);
  }

  std::string token(int id) const {
    if (id == kPad) return std::string(detail::kLAngle) + "pad" +
                           detail::kRAngle;
    if (id == kEos) return eos_glyph();
    if (id == kUnk) return std::string(detail::kLAngle) + "unk" +
                           detail::kRAngle;
    if (is_sentinel(id)) return sentinel_glyph(id - kNumFixed);
    const int c = id - kNumFixed - num_sentinels_;
    if (c < 0 || c >= static_cast<int>(content_.size()))
      throw std::runtime_error("token id out of range: " + std::to_string(id));
    return content_[c];
  }

  nlohmann::json to_json() const {
    return {{"num_sentinels", num_sentinels_}, {"tokens", content_}};
  }
  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.num_sentinels_ = j.at("num_sentinels").get<int>();
    v.content_ = j.at("tokens").get<std::vector<std::string>>();
    v.rebuild_index();
    return v;
  }

  bool operator==(const Vocabulary& other) const {
    return num_sentinels_ == other.num_sentinels_ &&
           content_ == other.content_;
  }

 private:
  int content_id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnk : it->second;
  }

  int glyph_id(std::string_view body) const {
    if (body == "eos") return kEos;
    if (body == "pad") return kPad;
    if (body == "unk") return kUnk;
    if (body.size() >= 2 && body[0] == 's') {
      int k = 0;
      for (std::size_t i = 1; i < body.size(); ++i) {
        if (body[i] < '0' || body[i] > '9')
          throw std::runtime_error("unknown control glyph: " +
                                   std::string(body));
        k = k * 10 + (body[i] - '0');
      }
      return sentinel_id(k);
    }
    throw std::runtime_error("unknown control glyph: " + std::string(body));
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < content_.size(); ++i) {
      index_[content_[i]] = kNumFixed + num_sentinels_ + static_cast<int>(i);
    }
  }

  int num_sentinels_ = 0;
  std::vector<std::string> content_;
  std::map<std::string, int> index_;
};

}  // namespace flipped

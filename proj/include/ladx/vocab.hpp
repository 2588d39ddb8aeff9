#pragma once

// Word-level vocabulary and fixed-length token sequences.
//
// Token ids are dense in [0, V). Ids 0..3 are the reserved specials
// [CLS]/[SEP]/[PAD]/[MASK]; everything else is a content word. A TokenSeq
// is always L_max long: [CLS], the caption words, one [SEP], then [PAD]s.

#include "ladx/common.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ladx {

class Vocabulary {
 public:
  static constexpr int kCls = 0;
  static constexpr int kSep = 1;
  static constexpr int kPad = 2;
  static constexpr int kMask = 3;
  static constexpr int kNumSpecials = 4;

  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kNumSpecials ||
        tokens_[0] != "[CLS]" || tokens_[1] != "[SEP]" ||
        tokens_[2] != "[PAD]" || tokens_[3] != "[MASK]")
      throw std::invalid_argument("Vocabulary: reserved tokens must be [CLS],[SEP],[PAD],[MASK] at ids 0..3");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!ids_.emplace(tokens_[i], int(i)).second)
        throw std::invalid_argument("Vocabulary: duplicate token " + tokens_[i]);
    }
  }

  // The caption vocabulary used throughout the project: 4 specials plus 32
  // content words (the scene grammar uses 21 of them; the rest are fillers
  // that keep V at the configured 36).
  static Vocabulary standard() {
    std::vector<std::string> toks = {
        "[CLS]", "[SEP]", "[PAD]", "[MASK]",
        // grammar words
        "there", "is", "a", "small", "large",
        "red", "blue", "green", "yellow",
        "circle", "square", "triangle", "star",
        "above", "below", "to", "the", "left", "right", "of", "and",
        // fillers up to 32 content words
        "tiny", "huge", "orange", "purple", "hexagon", "diamond",
        "near", "behind", "beside", "under", "over",
    };
    return Vocabulary(std::move(toks));
  }

  int size() const { return int(tokens_.size()); }

  int id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end())
      throw std::invalid_argument("Vocabulary: unknown word '" + std::string(token) + "'");
    return it->second;
  }

  bool contains(std::string_view token) const {
    return ids_.find(std::string(token)) != ids_.end();
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary: id out of range");
    return tokens_[std::size_t(id)];
  }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  // One token per line, line number = id.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("Vocabulary: cannot write " + path);
    for (const auto& t : tokens_) out << t << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("Vocabulary: cannot read " + path);
    std::vector<std::string> toks;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) toks.push_back(line);
    }
    return Vocabulary(std::move(toks));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct TokenSeq {
  std::vector<int> ids;  // length L_max

  int length() const { return int(ids.size()); }
  bool operator==(const TokenSeq&) const = default;
};

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

inline TokenSeq tokenize(const std::string& caption, const Vocabulary& vocab, int l_max) {
  const auto words = split_words(caption);
  if (int(words.size()) + 2 > l_max)
    throw std::invalid_argument("tokenize: caption too long for L_max");
  TokenSeq seq;
  seq.ids.assign(std::size_t(l_max), Vocabulary::kPad);
  seq.ids[0] = Vocabulary::kCls;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const int id = vocab.id(words[i]);
    if (Vocabulary::is_special(id))
      throw std::invalid_argument("tokenize: special token in caption text");
    seq.ids[i + 1] = id;
  }
  seq.ids[words.size() + 1] = Vocabulary::kSep;
  return seq;
}

// Removes [CLS]/[SEP]/[PAD]/[MASK] and joins the remaining words; this is
// what turns a fixed-length sequence into a variable-length caption.
inline std::string strip_specials(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (int id : seq.ids) {
    if (Vocabulary::is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

inline std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
  return strip_specials(seq, vocab);
}

inline std::vector<std::uint8_t> special_mask_of(const TokenSeq& seq) {
  std::vector<std::uint8_t> mask(seq.ids.size());
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    mask[i] = Vocabulary::is_special(seq.ids[i]) ? 1 : 0;
  return mask;
}

// Number of content (non-special) tokens; the "length" of a caption.
inline int content_length(const TokenSeq& seq) {
  int n = 0;
  for (int id : seq.ids)
    if (!Vocabulary::is_special(id)) ++n;
  return n;
}

}  // namespace ladx

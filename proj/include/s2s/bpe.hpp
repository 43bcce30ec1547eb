#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace s2s {

// Byte-pair-encoding subword segmentation.
//
// Words are split into UTF-8 code points followed by a separate end-of-word
// marker symbol "</w>".  Learning repeatedly merges the most frequent adjacent
// symbol pair (weighted by word frequency); application replays the learned
// merges on a word and renders the resulting units with the conventional
// trailing "@@" on every unit except the last.

inline constexpr const char* kEndOfWord = "</w>";
inline constexpr const char* kContinuation = "@@";

// Whitespace-token frequency table (ordered for reproducible iteration).
using WordCounts = std::map<std::string, std::int64_t>;

using SymbolPair = std::pair<std::string, std::string>;

// Splits a string into UTF-8 code points.  Bytes that do not form a valid
// sequence pass through as single-byte units; no input is rejected.
std::vector<std::string> utf8_chars(const std::string& s);

// Tokenizes lines on ASCII whitespace and accumulates word frequencies.
WordCounts count_words(const std::vector<std::string>& lines);

// Ordering used wherever equal-frequency pairs must be broken
// deterministically: plain byte order, except that the end-of-word marker
// sorts after every ordinary symbol (it is a sentinel, not an alphabet
// member, so ("a","a") beats ("a","</w>")).
bool symbol_less(const std::string& a, const std::string& b);
bool pair_less(const SymbolPair& a, const SymbolPair& b);

// Ordered list of merge pairs; position in the list is the priority with
// which the pair is applied (earlier = first).  Pairs are unique.
class MergeTable {
 public:
  MergeTable() = default;

  // Appends a pair; throws std::invalid_argument on duplicates.
  void add(const SymbolPair& pair);

  int size() const { return static_cast<int>(pairs_.size()); }
  bool empty() const { return pairs_.empty(); }
  const SymbolPair& at(int i) const { return pairs_.at(static_cast<size_t>(i)); }
  const std::vector<SymbolPair>& pairs() const { return pairs_; }

  // Priority of a pair (0 = highest), or -1 when the pair is not present.
  int priority(const std::string& left, const std::string& right) const;

  bool operator==(const MergeTable& other) const { return pairs_ == other.pairs_; }

 private:
  std::vector<SymbolPair> pairs_;
  std::map<SymbolPair, int> index_;
};

// Adjacent-pair frequencies over the initial segmentation (code points plus
// the end-of-word marker), weighted by word count.
std::map<SymbolPair, std::int64_t> count_symbol_pairs(const WordCounts& words);

// Learns up to `num_merges` merges.  Stops early once the best remaining
// pair occurs fewer than 2 times.  Throws std::invalid_argument when the
// corpus is empty or num_merges is negative.
MergeTable learn_bpe(const WordCounts& words, int num_merges);

// Segments one word into rendered subword units ("x@@" continuations, bare
// final unit).  Never fails; unknown characters pass through.
std::vector<std::string> apply_bpe(const std::string& word, const MergeTable& merges);

// Inverse of apply_bpe over a token stream: joins "x@@" continuations and
// returns the original whitespace tokens.
std::vector<std::string> debpe(const std::vector<std::string>& tokens);

// Convenience wrappers over whole lines of pre-tokenized text.
std::vector<std::string> bpe_encode_line(const std::string& line, const MergeTable& merges);
std::string bpe_decode_line(const std::vector<std::string>& tokens);

// Merge table file format: first line "#version: s2s-bpe-1", then one
// "left right" pair per line in priority order.
void save_merges(const MergeTable& merges, const std::string& path);
MergeTable load_merges(const std::string& path);

// Token <-> id bijection with the reserved ids at 0-3.  The learned
// vocabulary covers every unit apply_bpe can emit for the given corpus and
// merge table: both rendered forms of every single character and of every
// merged symbol.  Unseen tokens map to the unknown id when encoding.
class Vocabulary {
 public:
  // Reserved entries only.
  Vocabulary();

  // Vocabulary induced by a corpus and its learned merges.
  static Vocabulary build(const WordCounts& words, const MergeTable& merges);

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(const std::string& token) const;
  // Id of a token, or kUnk when absent.
  int id(const std::string& token) const;
  // Surface form of an id; throws std::out_of_range on invalid ids.
  const std::string& token(int id) const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  // File format: one "token<TAB>id" line per entry, ids dense from 0.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

}  // namespace s2s

#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "s2s/bpe.hpp"
#include "s2s/rng.hpp"
#include "s2s/tokens.hpp"

using s2s::apply_bpe;
using s2s::count_symbol_pairs;
using s2s::count_words;
using s2s::debpe;
using s2s::learn_bpe;
using s2s::load_merges;
using s2s::MergeTable;
using s2s::save_merges;
using s2s::SymbolPair;
using s2s::utf8_chars;
using s2s::Vocabulary;
using s2s::WordCounts;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("bpe_test_") + name;
}

MergeTable table_of(const std::vector<SymbolPair>& pairs) {
  MergeTable t;
  for (const SymbolPair& p : pairs) t.add(p);
  return t;
}

// Random lowercase/multibyte word of 1..12 code points.
std::string random_word(s2s::Rng& rng) {
  static const std::vector<std::string> alphabet = {
      "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m",
      "n", "o", "p", "q", "r", "s", "t", "u", "v", "w", "x", "y", "z",
      "é", "ü", "ß", "日", "本", "ж"};
  const int len = 1 + static_cast<int>(rng.below(12));
  std::string w;
  for (int i = 0; i < len; ++i) w += alphabet[rng.below(alphabet.size())];
  return w;
}

}  // namespace

TEST_CASE("utf8 code point splitting") {
  CHECK(utf8_chars("abc") == std::vector<std::string>{"a", "b", "c"});
  CHECK(utf8_chars("") == std::vector<std::string>{});
  CHECK(utf8_chars("aéz") == std::vector<std::string>{"a", "é", "z"});
  CHECK(utf8_chars("日本") == std::vector<std::string>{"日", "本"});
  CHECK(utf8_chars("a\xF0\x9F\x98\x80z") ==
        std::vector<std::string>{"a", "\xF0\x9F\x98\x80", "z"});
  // Malformed sequences degrade to single bytes instead of failing.
  CHECK(utf8_chars("\xC3").size() == 1);
  CHECK(utf8_chars("a\xC3q").size() == 3);
  CHECK(utf8_chars("\x80\x80") == std::vector<std::string>{"\x80", "\x80"});
}

TEST_CASE("pair counting over the initial segmentation") {
  const WordCounts words = {{"low", 5}, {"lowest", 2}};
  const auto counts = count_symbol_pairs(words);
  CHECK(counts.size() == 7);
  CHECK(counts.at(SymbolPair("l", "o")) == 7);
  CHECK(counts.at(SymbolPair("o", "w")) == 7);
  CHECK(counts.at(SymbolPair("w", s2s::kEndOfWord)) == 5);
  CHECK(counts.at(SymbolPair("w", "e")) == 2);
  CHECK(counts.at(SymbolPair("e", "s")) == 2);
  CHECK(counts.at(SymbolPair("s", "t")) == 2);
  CHECK(counts.at(SymbolPair("t", s2s::kEndOfWord)) == 2);
}

TEST_CASE("learning picks the most frequent pair, ties broken lexicographically") {
  // (l,o) and (o,w) tie at 7; (l,o) wins the lexicographic tie-break.
  const MergeTable t1 = learn_bpe({{"low", 5}, {"lowest", 2}}, 1);
  REQUIRE(t1.size() == 1);
  CHECK(t1.at(0) == SymbolPair("l", "o"));

  // (a,a) and (a,</w>) tie at 3; the end marker sorts after ordinary
  // symbols, so (a,a) is merged first.
  const MergeTable t2 = learn_bpe({{"aa", 3}}, 1);
  REQUIRE(t2.size() == 1);
  CHECK(t2.at(0) == SymbolPair("a", "a"));
}

TEST_CASE("learning stops early when no pair repeats") {
  // Every pair occurs once; threshold 2 stops learning immediately.
  CHECK(learn_bpe({{"ab", 1}}, 10).empty());
  CHECK(learn_bpe({{"abcdef", 1}}, 10).empty());
  // At frequency 2 the pairs are eligible again.
  CHECK(learn_bpe({{"ab", 2}}, 10).size() > 0);
}

TEST_CASE("learning errors and trivial inputs") {
  CHECK_THROWS_AS(learn_bpe({}, 5), std::invalid_argument);
  CHECK_THROWS_AS(learn_bpe({{"", 3}}, 5), std::invalid_argument);
  CHECK_THROWS_AS(learn_bpe({{"word", 0}}, 5), std::invalid_argument);
  CHECK_THROWS_AS(learn_bpe({{"ab", 4}}, -1), std::invalid_argument);
  CHECK(learn_bpe({{"low", 5}}, 0).empty());
}

TEST_CASE("zero merges encode to marked characters") {
  const MergeTable empty;
  CHECK(apply_bpe("ab", empty) == std::vector<std::string>{"a@@", "b"});
  CHECK(apply_bpe("x", empty) == std::vector<std::string>{"x"});
  CHECK(apply_bpe("", empty) == std::vector<std::string>{});
  CHECK(apply_bpe("日本", empty) == std::vector<std::string>{"日@@", "本"});
}

TEST_CASE("apply replays merges in table order") {
  const MergeTable merges = table_of({{"l", "o"}, {"lo", "w"}});
  CHECK(apply_bpe("low", merges) == std::vector<std::string>{"low"});
  CHECK(apply_bpe("slow", merges) == std::vector<std::string>{"s@@", "low"});
  CHECK(apply_bpe("lowest", merges) ==
        std::vector<std::string>{"low@@", "e@@", "s@@", "t"});
  // Unknown characters pass through as single-character units.
  CHECK(apply_bpe("l9w", merges) == std::vector<std::string>{"l@@", "9@@", "w"});
}

TEST_CASE("apply merges the end-of-word marker like any symbol") {
  const MergeTable merges = table_of({{"w", s2s::kEndOfWord}, {"o", "w</w>"}});
  CHECK(apply_bpe("low", merges) == std::vector<std::string>{"l@@", "ow"});
  CHECK(apply_bpe("w", merges) == std::vector<std::string>{"w"});
}

TEST_CASE("duplicate merge pairs are rejected") {
  MergeTable t;
  t.add({"a", "b"});
  CHECK_THROWS_AS(t.add({"a", "b"}), std::invalid_argument);
  CHECK(t.priority("a", "b") == 0);
  CHECK(t.priority("b", "a") == -1);
}

TEST_CASE("debpe inverts the continuation rendering") {
  CHECK(debpe({"s@@", "low"}) == std::vector<std::string>{"slow"});
  CHECK(debpe({"low"}) == std::vector<std::string>{"low"});
  CHECK(debpe({"a@@", "b@@", "c"}) == std::vector<std::string>{"abc"});
  CHECK(debpe({"ab", "cd"}) == std::vector<std::string>{"ab", "cd"});
  CHECK(debpe({}) == std::vector<std::string>{});
  // A dangling continuation still yields the word.
  CHECK(debpe({"x@@"}) == std::vector<std::string>{"x"});
}

TEST_CASE("round-trip identity over random corpora") {
  s2s::Rng rng(20260814);
  WordCounts corpus;
  for (int i = 0; i < 400; ++i) corpus[random_word(rng)] += 1 + rng.below(20);
  const MergeTable merges = learn_bpe(corpus, 150);

  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string w = random_word(rng);
    const std::vector<std::string> units = apply_bpe(w, merges);
    REQUIRE(!units.empty());
    CHECK(debpe(units) == std::vector<std::string>{w});
    ++checked;
  }
  CHECK(checked == 1000);

  // Also across whole lines, and with an empty merge table.
  const MergeTable empty;
  std::string line;
  for (int i = 0; i < 30; ++i) line += (i ? " " : "") + random_word(rng);
  CHECK(s2s::bpe_decode_line(s2s::bpe_encode_line(line, merges)) == line);
  CHECK(s2s::bpe_decode_line(s2s::bpe_encode_line(line, empty)) == line);
}

TEST_CASE("vocabulary closure over the training corpus") {
  s2s::Rng rng(7);
  WordCounts corpus;
  for (int i = 0; i < 300; ++i) corpus[random_word(rng)] += 1 + rng.below(10);
  const MergeTable merges = learn_bpe(corpus, 120);
  const Vocabulary vocab = Vocabulary::build(corpus, merges);

  CHECK(vocab.size() > s2s::kNumReserved);
  for (const auto& [word, freq] : corpus) {
    for (const std::string& unit : apply_bpe(word, merges)) {
      CHECK(vocab.contains(unit));
      CHECK(vocab.id(unit) >= s2s::kNumReserved);
    }
  }
  // Tokens outside the corpus map to the unknown id.
  CHECK(vocab.id("NEVER-SEEN-TOKEN") == s2s::kUnk);
  CHECK(vocab.encode({"NEVER-SEEN-TOKEN"}) == std::vector<int>{s2s::kUnk});
}

TEST_CASE("vocabulary reserves ids 0-3 and round-trips tokens") {
  const Vocabulary vocab = Vocabulary::build({{"ab", 3}}, MergeTable());
  CHECK(vocab.token(s2s::kPad) == s2s::kPadToken);
  CHECK(vocab.token(s2s::kUnk) == s2s::kUnkToken);
  CHECK(vocab.token(s2s::kSos) == s2s::kSosToken);
  CHECK(vocab.token(s2s::kEos) == s2s::kEosToken);
  CHECK_THROWS_AS(vocab.token(-1), std::out_of_range);
  CHECK_THROWS_AS(vocab.token(vocab.size()), std::out_of_range);
  for (int i = 0; i < vocab.size(); ++i) CHECK(vocab.id(vocab.token(i)) == i);
  const std::vector<std::string> toks = {"a@@", "b"};
  CHECK(vocab.decode(vocab.encode(toks)) == toks);
}

TEST_CASE("vocabulary size is non-decreasing in the merge count") {
  s2s::Rng rng(99);
  WordCounts corpus;
  for (int i = 0; i < 250; ++i) corpus[random_word(rng)] += 1 + rng.below(8);
  int prev = -1;
  for (int merges : {0, 10, 25, 50, 100, 200}) {
    const Vocabulary vocab = Vocabulary::build(corpus, learn_bpe(corpus, merges));
    CHECK(vocab.size() >= prev);
    prev = vocab.size();
  }
}

TEST_CASE("learning is deterministic and prefix-stable") {
  s2s::Rng rng(123);
  WordCounts corpus;
  for (int i = 0; i < 200; ++i) corpus[random_word(rng)] += 1 + rng.below(6);
  const MergeTable a = learn_bpe(corpus, 80);
  const MergeTable b = learn_bpe(corpus, 80);
  CHECK(a == b);
  // The first k merges of a longer run equal the k-merge run.
  const MergeTable longer = learn_bpe(corpus, 120);
  REQUIRE(longer.size() >= a.size());
  for (int i = 0; i < a.size(); ++i) CHECK(longer.at(i) == a.at(i));
}

TEST_CASE("merge table file round-trip") {
  const std::string path = temp_path("merges.txt");
  const MergeTable merges = learn_bpe({{"low", 5}, {"lowest", 2}, {"newer", 6}}, 10);
  save_merges(merges, path);
  const MergeTable loaded = load_merges(path);
  CHECK(loaded == merges);

  // Header and format violations are rejected.
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("l o\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_merges(path), std::runtime_error);
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("#version: s2s-bpe-1\nl o\nl o\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_merges(path), std::runtime_error);
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("#version: s2s-bpe-1\nnospace\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_merges(path), std::runtime_error);
  CHECK_THROWS_AS(load_merges(temp_path("missing.txt")), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("vocabulary file round-trip") {
  const std::string path = temp_path("vocab.txt");
  s2s::Rng rng(5);
  WordCounts corpus;
  for (int i = 0; i < 100; ++i) corpus[random_word(rng)] += 1 + rng.below(4);
  const Vocabulary vocab = Vocabulary::build(corpus, learn_bpe(corpus, 40));
  vocab.save(path);
  const Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded == vocab);
  CHECK(loaded.size() == vocab.size());

  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("<pad>\t0\n<unk>\t1\n<s>\t2\n</s>\t3\nx\t9\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(Vocabulary::load(path), std::runtime_error);  // ids not dense
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("<pad>\t0\n<s>\t1\n<unk>\t2\n</s>\t3\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(Vocabulary::load(path), std::runtime_error);  // reserved moved
  std::remove(path.c_str());
}

TEST_CASE("word counting tokenizes on whitespace") {
  const WordCounts counts = count_words({"the cat", "the  hat\tis", "", "the"});
  CHECK(counts.at("the") == 3);
  CHECK(counts.at("cat") == 1);
  CHECK(counts.at("hat") == 1);
  CHECK(counts.at("is") == 1);
  CHECK(counts.size() == 4);
}

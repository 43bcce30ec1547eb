#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace s2s {

// Corpus-level BLEU over tokenized text: clipped modified n-gram precisions
// for n = 1..4 aggregated corpus-wide, times a brevity penalty.  No
// smoothing: a zero precision at any order makes the score 0.

struct BleuReport {
  double bleu = 0.0;  // percent, 0..100
  std::array<double, 4> precisions{};  // p1..p4 as fractions in [0, 1]
  double brevity_penalty = 1.0;
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;
  std::array<std::int64_t, 4> matched{};  // clipped n-gram matches
  std::array<std::int64_t, 4> total{};    // hypothesis n-gram counts

  // "BLEU = 28.62, 61.1/34.2/21.9/14.6 (BP=0.994, ratio=0.994,
  //  hyp_len=62, ref_len=63)"
  std::string to_string() const;
};

// Each line is one sentence of whitespace-separated tokens; hypotheses and
// references are aligned by line.  Throws std::invalid_argument on a line
// count mismatch or an empty corpus.
BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references);

}  // namespace s2s

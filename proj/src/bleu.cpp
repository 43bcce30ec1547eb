#include "s2s/bleu.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

namespace s2s {

namespace {

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

// n-gram multiset of a token sequence; the key joins tokens with a space
// (tokens are whitespace-free, so the encoding is unambiguous).
std::map<std::string, std::int64_t> ngram_counts(const std::vector<std::string>& tokens,
                                                 size_t n) {
  std::map<std::string, std::int64_t> counts;
  if (tokens.size() < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (size_t k = 1; k < n; ++k) {
      key += ' ';
      key += tokens[i + k];
    }
    counts[key] += 1;
  }
  return counts;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) +
                                " hypotheses vs " + std::to_string(references.size()) +
                                " references");
  }
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");

  BleuReport report;
  for (size_t line = 0; line < hypotheses.size(); ++line) {
    const std::vector<std::string> hyp = split_tokens(hypotheses[line]);
    const std::vector<std::string> ref = split_tokens(references[line]);
    report.hyp_len += static_cast<std::int64_t>(hyp.size());
    report.ref_len += static_cast<std::int64_t>(ref.size());
    for (size_t n = 1; n <= 4; ++n) {
      const auto hyp_grams = ngram_counts(hyp, n);
      const auto ref_grams = ngram_counts(ref, n);
      std::int64_t matched = 0;
      std::int64_t total = 0;
      for (const auto& [gram, count] : hyp_grams) {
        total += count;
        auto it = ref_grams.find(gram);
        if (it != ref_grams.end()) matched += std::min(count, it->second);
      }
      report.matched[n - 1] += matched;
      report.total[n - 1] += total;
    }
  }

  // Geometric mean over the orders that exist in the hypothesis corpus
  // ("effective order").  When every sentence has >= 4 tokens this is the
  // plain 1/4-weighted mean; skipping absent orders keeps BLEU(h, h) == 100
  // on corpora of very short sentences.  A zero precision at any defined
  // order still zeroes the score (no smoothing).
  double log_precision_sum = 0.0;
  int defined_orders = 0;
  bool zero_precision = false;
  for (size_t n = 0; n < 4; ++n) {
    if (report.total[n] > 0) {
      report.precisions[n] =
          static_cast<double>(report.matched[n]) / static_cast<double>(report.total[n]);
      ++defined_orders;
      if (report.matched[n] > 0) {
        log_precision_sum += std::log(report.precisions[n]);
      } else {
        zero_precision = true;
      }
    } else {
      report.precisions[n] = 0.0;
    }
  }

  if (report.hyp_len == 0) {
    report.brevity_penalty = report.ref_len == 0 ? 1.0 : 0.0;
  } else if (report.hyp_len < report.ref_len) {
    report.brevity_penalty = std::exp(1.0 - static_cast<double>(report.ref_len) /
                                                static_cast<double>(report.hyp_len));
  } else {
    report.brevity_penalty = 1.0;
  }
  report.bleu = (zero_precision || defined_orders == 0)
                    ? 0.0
                    : report.brevity_penalty *
                          std::exp(log_precision_sum / defined_orders) * 100.0;
  return report;
}

std::string BleuReport::to_string() const {
  const double ratio = ref_len > 0 ? static_cast<double>(hyp_len) / static_cast<double>(ref_len)
                                   : 0.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, "
                "hyp_len=%lld, ref_len=%lld)",
                bleu, precisions[0] * 100.0, precisions[1] * 100.0, precisions[2] * 100.0,
                precisions[3] * 100.0, brevity_penalty, ratio,
                static_cast<long long>(hyp_len), static_cast<long long>(ref_len));
  return std::string(buf);
}

}  // namespace s2s

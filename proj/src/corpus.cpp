#include "s2s/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "s2s/tokens.hpp"

namespace s2s {

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

// Deterministic bucketing: stable order by (max side length, source length).
std::vector<size_t> bucketed_order(const ParallelCorpus& corpus) {
  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&corpus](size_t a, size_t b) {
    const SentencePair& pa = corpus.at(a);
    const SentencePair& pb = corpus.at(b);
    const size_t la = std::max(pa.src.size(), pa.tgt.size());
    const size_t lb = std::max(pb.src.size(), pb.tgt.size());
    if (la != lb) return la < lb;
    return pa.src.size() < pb.src.size();
  });
  return order;
}

IdBatch pad_rows(std::vector<std::vector<int>> rows) {
  size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  for (auto& r : rows) r.resize(width, kPad);
  IdBatch b;
  b.rows = std::move(rows);
  return b;
}

}  // namespace

ParallelCorpus ParallelCorpus::from_files(const std::string& src_path,
                                          const std::string& tgt_path,
                                          const Vocabulary& vocab, int max_length) {
  if (max_length <= 0) throw std::invalid_argument("from_files: max_length must be positive");
  const std::vector<std::string> src_lines = read_lines(src_path);
  const std::vector<std::string> tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size()) {
    throw std::runtime_error("corpus line count mismatch: " + src_path + " has " +
                             std::to_string(src_lines.size()) + " lines, " + tgt_path +
                             " has " + std::to_string(tgt_lines.size()));
  }
  std::vector<SentencePair> pairs;
  for (size_t i = 0; i < src_lines.size(); ++i) {
    const std::vector<std::string> src_tokens = split_tokens(src_lines[i]);
    const std::vector<std::string> tgt_tokens = split_tokens(tgt_lines[i]);
    if (src_tokens.empty() || tgt_tokens.empty()) continue;
    if (static_cast<int>(src_tokens.size()) > max_length ||
        static_cast<int>(tgt_tokens.size()) > max_length) {
      continue;
    }
    pairs.push_back(SentencePair{vocab.encode(src_tokens), vocab.encode(tgt_tokens)});
  }
  return ParallelCorpus(std::move(pairs));
}

std::vector<int> with_eos(std::vector<int> ids) {
  ids.push_back(kEos);
  return ids;
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus, int batch_size, Rng& rng) {
  if (corpus.empty()) throw std::invalid_argument("make_batches: empty corpus");
  if (batch_size <= 0) throw std::invalid_argument("make_batches: batch_size must be positive");

  const std::vector<size_t> order = bucketed_order(corpus);
  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    std::vector<std::vector<int>> src_rows, tgt_rows;
    src_rows.reserve(end - start);
    tgt_rows.reserve(end - start);
    for (size_t i = start; i < end; ++i) {
      const SentencePair& p = corpus.at(order[i]);
      src_rows.push_back(with_eos(p.src));
      tgt_rows.push_back(with_eos(p.tgt));
    }
    batches.push_back(Batch{pad_rows(std::move(src_rows)), pad_rows(std::move(tgt_rows))});
  }

  // Fisher-Yates over batch order only; batch membership stays fixed.
  for (size_t i = batches.size(); i > 1; --i) {
    std::swap(batches[i - 1], batches[rng.below(i)]);
  }
  return batches;
}

long long batches_per_epoch(const ParallelCorpus& corpus, int batch_size) {
  if (corpus.empty()) throw std::invalid_argument("batches_per_epoch: empty corpus");
  if (batch_size <= 0) throw std::invalid_argument("batches_per_epoch: batch_size must be positive");
  const long long n = static_cast<long long>(corpus.size());
  return (n + batch_size - 1) / batch_size;
}

std::vector<int> random_sentence(Rng& rng, int vocab, int min_len, int max_len) {
  if (vocab <= kNumReserved)
    throw std::invalid_argument("random_sentence: vocab must exceed the reserved range");
  if (min_len <= 0 || max_len < min_len)
    throw std::invalid_argument("random_sentence: need 0 < min_len <= max_len");
  const int len =
      min_len + static_cast<int>(rng.below(static_cast<uint64_t>(max_len - min_len + 1)));
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(len));
  for (int j = 0; j < len; ++j) {
    ids.push_back(kNumReserved +
                  static_cast<int>(rng.below(static_cast<uint64_t>(vocab - kNumReserved))));
  }
  return ids;
}

ParallelCorpus make_copy_corpus(int pairs, int vocab, int min_len, int max_len, uint64_t seed) {
  Rng rng(seed);
  std::vector<SentencePair> out;
  out.reserve(static_cast<size_t>(pairs));
  for (int i = 0; i < pairs; ++i) {
    std::vector<int> src = random_sentence(rng, vocab, min_len, max_len);
    out.push_back(SentencePair{src, src});
  }
  return ParallelCorpus(std::move(out));
}

ParallelCorpus make_reversal_corpus(int pairs, int vocab, int min_len, int max_len, uint64_t seed) {
  Rng rng(seed);
  std::vector<SentencePair> out;
  out.reserve(static_cast<size_t>(pairs));
  for (int i = 0; i < pairs; ++i) {
    std::vector<int> src = random_sentence(rng, vocab, min_len, max_len);
    std::vector<int> tgt(src.rbegin(), src.rend());
    out.push_back(SentencePair{std::move(src), std::move(tgt)});
  }
  return ParallelCorpus(std::move(out));
}

}  // namespace s2s

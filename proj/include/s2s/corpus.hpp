#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2s/bpe.hpp"
#include "s2s/model.hpp"
#include "s2s/rng.hpp"

namespace s2s {

// Line-aligned parallel sentences as vocabulary ids.  Stored ids carry no
// reserved tokens; EOS is appended (and PAD added) only when batches are
// assembled.

struct SentencePair {
  std::vector<int> src;
  std::vector<int> tgt;
};

class ParallelCorpus {
 public:
  ParallelCorpus() = default;
  explicit ParallelCorpus(std::vector<SentencePair> pairs) : pairs_(std::move(pairs)) {}

  // Reads two line-aligned token files, encodes through the vocabulary
  // (unknown tokens become UNK), and drops pairs whose source or target
  // exceeds max_length tokens or is empty.  Throws std::runtime_error on
  // unreadable files or a line-count mismatch.
  static ParallelCorpus from_files(const std::string& src_path, const std::string& tgt_path,
                                   const Vocabulary& vocab, int max_length = 50);

  size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const SentencePair& at(size_t i) const { return pairs_.at(i); }
  const std::vector<SentencePair>& pairs() const { return pairs_; }

 private:
  std::vector<SentencePair> pairs_;
};

// ids + EOS.
std::vector<int> with_eos(std::vector<int> ids);

struct Batch {
  IdBatch src;
  IdBatch tgt;
};

// Assembles length-bucketed batches: pairs are ordered by length so each
// batch pads little, EOS is appended to both sides, rows are PAD-filled to
// the batch maximum.  The set of batches depends only on corpus and
// batch_size; `rng` shuffles the order in which batches appear.  A short
// final batch is kept.
std::vector<Batch> make_batches(const ParallelCorpus& corpus, int batch_size, Rng& rng);

// The number of batches make_batches yields for this corpus/batch size.
long long batches_per_epoch(const ParallelCorpus& corpus, int batch_size);

// Random id sequence over the non-reserved vocabulary range.
std::vector<int> random_sentence(Rng& rng, int vocab, int min_len, int max_len);

// Synthetic diagnostic tasks.  Copy: target equals source.  Reversal: target
// equals source reversed.  Deterministic in the seed.
ParallelCorpus make_copy_corpus(int pairs, int vocab, int min_len, int max_len, uint64_t seed);
ParallelCorpus make_reversal_corpus(int pairs, int vocab, int min_len, int max_len, uint64_t seed);

}  // namespace s2s

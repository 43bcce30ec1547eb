#include "s2s/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "s2s/tokens.hpp"

namespace s2s {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Initial segmentation of a word: code points plus the end-of-word marker.
std::vector<std::string> initial_symbols(const std::string& word) {
  std::vector<std::string> symbols = utf8_chars(word);
  symbols.push_back(kEndOfWord);
  return symbols;
}

// Replaces every left-to-right, non-overlapping occurrence of `pair` by the
// concatenated symbol.
void merge_in_place(std::vector<std::string>& symbols, const SymbolPair& pair) {
  size_t w = 0;
  for (size_t r = 0; r < symbols.size();) {
    if (r + 1 < symbols.size() && symbols[r] == pair.first &&
        symbols[r + 1] == pair.second) {
      symbols[w++] = pair.first + pair.second;
      r += 2;
    } else {
      if (w != r) symbols[w] = std::move(symbols[r]);
      ++w;
      ++r;
    }
  }
  symbols.resize(w);
}

}  // namespace

std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    const unsigned char lead = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if (lead < 0x80) {
      len = 1;
    } else if ((lead & 0xE0) == 0xC0) {
      len = 2;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
    }
    if (i + len > s.size()) len = 1;
    for (size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;  // malformed sequence: emit the lead byte alone
        break;
      }
    }
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

WordCounts count_words(const std::vector<std::string>& lines) {
  WordCounts counts;
  for (const std::string& line : lines) {
    for (const std::string& word : split_whitespace(line)) {
      counts[word] += 1;
    }
  }
  return counts;
}

bool symbol_less(const std::string& a, const std::string& b) {
  const bool a_eow = (a == kEndOfWord);
  const bool b_eow = (b == kEndOfWord);
  if (a_eow != b_eow) return b_eow;
  return a < b;
}

bool pair_less(const SymbolPair& a, const SymbolPair& b) {
  if (a.first != b.first) return symbol_less(a.first, b.first);
  return symbol_less(a.second, b.second);
}

void MergeTable::add(const SymbolPair& pair) {
  if (index_.count(pair) != 0) {
    throw std::invalid_argument("MergeTable::add: duplicate pair (" + pair.first +
                                ", " + pair.second + ")");
  }
  index_[pair] = static_cast<int>(pairs_.size());
  pairs_.push_back(pair);
}

int MergeTable::priority(const std::string& left, const std::string& right) const {
  auto it = index_.find(SymbolPair(left, right));
  return it == index_.end() ? -1 : it->second;
}

std::map<SymbolPair, std::int64_t> count_symbol_pairs(const WordCounts& words) {
  std::map<SymbolPair, std::int64_t> counts;
  for (const auto& [word, freq] : words) {
    const std::vector<std::string> symbols = initial_symbols(word);
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      counts[SymbolPair(symbols[i], symbols[i + 1])] += freq;
    }
  }
  return counts;
}

MergeTable learn_bpe(const WordCounts& words, int num_merges) {
  if (num_merges < 0) throw std::invalid_argument("learn_bpe: num_merges < 0");
  std::vector<std::pair<std::vector<std::string>, std::int64_t>> corpus;
  for (const auto& [word, freq] : words) {
    if (word.empty() || freq <= 0) continue;
    corpus.emplace_back(initial_symbols(word), freq);
  }
  if (corpus.empty()) throw std::invalid_argument("learn_bpe: empty corpus");

  MergeTable table;
  for (int step = 0; step < num_merges; ++step) {
    std::map<SymbolPair, std::int64_t> counts;
    for (const auto& [symbols, freq] : corpus) {
      for (size_t i = 0; i + 1 < symbols.size(); ++i) {
        counts[SymbolPair(symbols[i], symbols[i + 1])] += freq;
      }
    }
    bool found = false;
    SymbolPair best;
    std::int64_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (!found || count > best_count ||
          (count == best_count && pair_less(pair, best))) {
        best = pair;
        best_count = count;
        found = true;
      }
    }
    if (!found || best_count < 2) break;
    table.add(best);
    for (auto& [symbols, freq] : corpus) {
      merge_in_place(symbols, best);
    }
  }
  return table;
}

std::vector<std::string> apply_bpe(const std::string& word, const MergeTable& merges) {
  std::vector<std::string> symbols = initial_symbols(word);
  if (!merges.empty()) {
    for (;;) {
      int best_priority = -1;
      for (size_t i = 0; i + 1 < symbols.size(); ++i) {
        const int p = merges.priority(symbols[i], symbols[i + 1]);
        if (p >= 0 && (best_priority < 0 || p < best_priority)) best_priority = p;
      }
      if (best_priority < 0) break;
      merge_in_place(symbols, merges.at(best_priority));
    }
  }
  // The last symbol always carries the marker: either it is the bare marker
  // (drop it) or the marker merged into it (strip the suffix).
  if (!symbols.empty() && symbols.back() == kEndOfWord) {
    symbols.pop_back();
  } else if (!symbols.empty() && ends_with(symbols.back(), kEndOfWord)) {
    std::string& last = symbols.back();
    last.resize(last.size() - std::string(kEndOfWord).size());
  }
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (size_t i = 0; i < symbols.size(); ++i) {
    out.push_back(i + 1 < symbols.size() ? symbols[i] + kContinuation : symbols[i]);
  }
  return out;
}

std::vector<std::string> debpe(const std::vector<std::string>& tokens) {
  std::vector<std::string> words;
  std::string current;
  for (const std::string& token : tokens) {
    if (ends_with(token, kContinuation)) {
      current += token.substr(0, token.size() - std::string(kContinuation).size());
    } else {
      current += token;
      words.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(current);  // dangling continuation
  return words;
}

std::vector<std::string> bpe_encode_line(const std::string& line, const MergeTable& merges) {
  std::vector<std::string> out;
  for (const std::string& word : split_whitespace(line)) {
    std::vector<std::string> units = apply_bpe(word, merges);
    out.insert(out.end(), units.begin(), units.end());
  }
  return out;
}

std::string bpe_decode_line(const std::vector<std::string>& tokens) {
  const std::vector<std::string> words = debpe(tokens);
  std::string line;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i > 0) line += ' ';
    line += words[i];
  }
  return line;
}

void save_merges(const MergeTable& merges, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_merges: cannot open " + path);
  out << "#version: s2s-bpe-1\n";
  for (const SymbolPair& pair : merges.pairs()) {
    out << pair.first << ' ' << pair.second << '\n';
  }
  if (!out) throw std::runtime_error("save_merges: write failed on " + path);
}

MergeTable load_merges(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_merges: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "#version: s2s-bpe-1") {
    throw std::runtime_error("load_merges: missing version header in " + path);
  }
  MergeTable table;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
        line.find(' ', space + 1) != std::string::npos) {
      throw std::runtime_error("load_merges: malformed pair at " + path + ":" +
                               std::to_string(line_no));
    }
    const SymbolPair pair(line.substr(0, space), line.substr(space + 1));
    if (table.priority(pair.first, pair.second) >= 0) {
      throw std::runtime_error("load_merges: duplicate pair at " + path + ":" +
                               std::to_string(line_no));
    }
    table.add(pair);
  }
  return table;
}

Vocabulary::Vocabulary() {
  add(kPadToken);
  add(kUnkToken);
  add(kSosToken);
  add(kEosToken);
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token) != 0) return;
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const WordCounts& words, const MergeTable& merges) {
  // Every unit apply_bpe can emit is either a rendered form of a single code
  // point or of a merged symbol; collecting both forms of each gives closure
  // over the corpus, and the symbol inventory only grows with more merges.
  std::set<std::string> rendered;
  auto add_symbol = [&rendered](const std::string& symbol) {
    if (symbol == kEndOfWord) return;  // never rendered
    if (ends_with(symbol, kEndOfWord)) {
      rendered.insert(symbol.substr(0, symbol.size() - std::string(kEndOfWord).size()));
    } else {
      rendered.insert(symbol + kContinuation);
      rendered.insert(symbol);
    }
  };
  for (const auto& [word, freq] : words) {
    if (word.empty() || freq <= 0) continue;
    for (const std::string& c : utf8_chars(word)) add_symbol(c);
  }
  for (const SymbolPair& pair : merges.pairs()) add_symbol(pair.first + pair.second);

  Vocabulary vocab;
  for (const std::string& token : rendered) vocab.add(token);
  return vocab;
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) != 0;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("Vocabulary::token: id " + std::to_string(id) +
                            " outside [0, " + std::to_string(size()) + ")");
  }
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& token : tokens) ids.push_back(id(token));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int i : ids) tokens.push_back(token(i));
  return tokens;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("Vocabulary::save: cannot open " + path);
  for (int i = 0; i < size(); ++i) {
    out << tokens_[static_cast<size_t>(i)] << '\t' << i << '\n';
  }
  if (!out) throw std::runtime_error("Vocabulary::save: write failed on " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("Vocabulary::load: cannot open " + path);
  std::vector<std::pair<std::string, int>> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw std::runtime_error("Vocabulary::load: malformed line at " + path + ":" +
                               std::to_string(line_no));
    }
    int id = 0;
    try {
      size_t consumed = 0;
      id = std::stoi(line.substr(tab + 1), &consumed);
      if (consumed != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::runtime_error("Vocabulary::load: bad id at " + path + ":" +
                               std::to_string(line_no));
    }
    entries.emplace_back(line.substr(0, tab), id);
  }
  std::vector<std::string> tokens(entries.size());
  std::vector<bool> seen(entries.size(), false);
  for (const auto& [token, id] : entries) {
    if (id < 0 || id >= static_cast<int>(entries.size()) || seen[static_cast<size_t>(id)]) {
      throw std::runtime_error("Vocabulary::load: ids in " + path +
                               " are not a dense bijection");
    }
    seen[static_cast<size_t>(id)] = true;
    tokens[static_cast<size_t>(id)] = token;
  }
  const char* reserved[] = {kPadToken, kUnkToken, kSosToken, kEosToken};
  if (tokens.size() < 4) {
    throw std::runtime_error("Vocabulary::load: " + path + " lacks the reserved entries");
  }
  for (int i = 0; i < 4; ++i) {
    if (tokens[static_cast<size_t>(i)] != reserved[i]) {
      throw std::runtime_error("Vocabulary::load: reserved id " + std::to_string(i) +
                               " in " + path + " is not " + reserved[i]);
    }
  }
  Vocabulary vocab;
  for (size_t i = 4; i < tokens.size(); ++i) {
    if (vocab.contains(tokens[i])) {
      throw std::runtime_error("Vocabulary::load: duplicate token in " + path);
    }
    vocab.add(tokens[i]);
  }
  return vocab;
}

}  // namespace s2s

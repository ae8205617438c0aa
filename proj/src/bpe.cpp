#include "alnmt/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include "alnmt/corpus.hpp"
#include "alnmt/utf8.hpp"

namespace alnmt::bpe {

namespace {

bool has_continuation(std::string_view s) {
  return s.size() >= kContinuation.size() &&
         s.substr(s.size() - kContinuation.size()) == kContinuation;
}

std::string_view strip_continuation(std::string_view s) {
  return has_continuation(s) ? s.substr(0, s.size() - kContinuation.size()) : s;
}

}  // namespace

std::vector<std::string> split_words(std::string_view sentence) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < sentence.size()) {
    while (i < sentence.size() && sentence[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < sentence.size() && sentence[i] != ' ') ++i;
    if (i > start) words.emplace_back(sentence.substr(start, i - start));
  }
  return words;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  const std::u32string cps = utf8::decode(word);
  std::vector<std::string> out;
  out.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    std::string s;
    utf8::append(s, cps[i]);
    if (i + 1 < cps.size()) s += kContinuation;
    out.push_back(std::move(s));
  }
  return out;
}

std::string merged_symbol(const SymbolPair& pair) {
  return std::string(strip_continuation(pair.first)) + pair.second;
}

BpeModel::BpeModel(std::vector<SymbolPair> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    if (!rank_.emplace(merges_[i], i).second) {
      throw std::invalid_argument("duplicate BPE merge '" + merges_[i].first + " " +
                                  merges_[i].second + "'");
    }
  }
}

std::vector<std::string> BpeModel::segment_word(std::string_view word) const {
  std::vector<std::string> symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = merges_.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find({symbols[i], symbols[i + 1]});
      if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == merges_.size()) break;
    const SymbolPair& pair = merges_[best_rank];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
        next.push_back(merged_symbol(pair));
        i += 2;
      } else {
        next.push_back(std::move(symbols[i]));
        ++i;
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::vector<std::string> lines;
  lines.reserve(merges_.size());
  for (const auto& [l, r] : merges_) lines.push_back(l + " " + r);
  corpus::write_lines(path, lines);
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::vector<SymbolPair> merges;
  for (const auto& line : corpus::read_lines(path)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
      throw std::runtime_error("malformed merge line '" + line + "' in " + path.string());
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return BpeModel(std::move(merges));
}

BpeModel learn_bpe(const std::vector<std::string>& sentences, std::size_t num_merges) {
  std::map<std::string, std::size_t> word_freq;
  for (const auto& s : sentences)
    for (auto& w : split_words(s)) ++word_freq[w];

  std::vector<std::vector<std::string>> words;
  std::vector<std::size_t> freqs;
  for (const auto& [w, f] : word_freq) {
    words.push_back(initial_symbols(w));
    freqs.push_back(f);
  }

  std::map<SymbolPair, std::size_t> counts;
  std::map<SymbolPair, std::set<std::size_t>> where;
  auto adjust = [&](const SymbolPair& p, std::size_t word, std::ptrdiff_t delta) {
    std::size_t& c = counts[p];
    c = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(c) + delta);
    if (delta > 0) where[p].insert(word);
  };
  for (std::size_t w = 0; w < words.size(); ++w)
    for (std::size_t i = 0; i + 1 < words[w].size(); ++i)
      adjust({words[w][i], words[w][i + 1]}, w, static_cast<std::ptrdiff_t>(freqs[w]));

  std::vector<SymbolPair> merges;
  while (merges.size() < num_merges) {
    const SymbolPair* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [p, c] : counts) {
      // Map iteration is in ascending pair order, so strict > keeps the
      // lexicographically smallest among equal counts.
      if (c > best_count) {
        best_count = c;
        best = &p;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const SymbolPair pair = *best;
    const std::string merged = merged_symbol(pair);
    merges.push_back(pair);

    const std::set<std::size_t> affected = where[pair];
    for (std::size_t w : affected) {
      auto& syms = words[w];
      const auto f = static_cast<std::ptrdiff_t>(freqs[w]);
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) adjust({syms[i], syms[i + 1]}, w, -f);
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size();) {
        if (i + 1 < syms.size() && syms[i] == pair.first && syms[i + 1] == pair.second) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(syms[i]);
          ++i;
        }
      }
      syms = std::move(next);
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) adjust({syms[i], syms[i + 1]}, w, f);
    }
    for (auto it = counts.begin(); it != counts.end();) {
      if (it->second == 0) {
        where.erase(it->first);
        it = counts.erase(it);
      } else {
        ++it;
      }
    }
  }
  return BpeModel(std::move(merges));
}

std::vector<std::string> apply_bpe(const BpeModel& model, std::string_view sentence) {
  std::vector<std::string> out;
  for (const auto& w : split_words(sentence)) {
    auto pieces = model.segment_word(w);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()),
               std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  bool glue = false;
  for (const auto& t : tokens) {
    if (!out.empty() && !glue) out += ' ';
    out += strip_continuation(t);
    glue = has_continuation(t);
  }
  return out;
}

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<unk>", "<s>", "</s>"};
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<int>(i));
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& tokenized) {
  std::map<std::string, std::size_t> freq;
  for (const auto& sent : tokenized)
    for (const auto& t : sent) ++freq[t];
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(items.size());
  for (auto& [t, f] : items) tokens.push_back(t);
  return from_tokens(tokens);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (v.ids_.count(t)) continue;
    v.ids_.emplace(t, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(t);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int i : ids)
    if (!is_special(i) || i == kUnk) out.push_back(token(i));
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::vector<std::string> lines(tokens_.begin() + kSpecials, tokens_.end());
  corpus::write_lines(path, lines);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  return from_tokens(corpus::read_lines(path));
}

}  // namespace alnmt::bpe

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace alnmt::bpe {

/// Suffix carried by every subword that is not the last piece of its word.
inline constexpr std::string_view kContinuation = "@@";

using SymbolPair = std::pair<std::string, std::string>;

/// Ordered merge list. Symbols use the continuation convention directly, so
/// the first merge learned on "low" is ("l@@", "o@@") -> "lo@@".
class BpeModel {
 public:
  BpeModel() = default;
  explicit BpeModel(std::vector<SymbolPair> merges);

  const std::vector<SymbolPair>& merges() const { return merges_; }
  std::size_t merge_count() const { return merges_.size(); }

  /// Subword pieces of one word, continuation markers included.
  std::vector<std::string> segment_word(std::string_view word) const;

  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

 private:
  std::vector<SymbolPair> merges_;
  std::map<SymbolPair, std::size_t> rank_;
};

/// Splits a word into single-character symbols (UTF-8 aware), marking all
/// but the last with the continuation suffix.
std::vector<std::string> initial_symbols(std::string_view word);

/// Result of merging `pair` into one symbol.
std::string merged_symbol(const SymbolPair& pair);

/// Learns up to `num_merges` merges from whitespace-separated sentences.
/// Each step merges the most frequent adjacent pair; ties go to the
/// lexicographically smallest (left, right). Stops early once no pair occurs
/// at least twice.
BpeModel learn_bpe(const std::vector<std::string>& sentences, std::size_t num_merges);

std::vector<std::string> apply_bpe(const BpeModel& model, std::string_view sentence);

/// Joins subwords, removing continuation boundaries.
std::string detokenize(const std::vector<std::string>& tokens);

/// Token <-> id map with fixed special ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr std::size_t kSpecials = 4;

  Vocabulary();

  /// Vocabulary over the given tokenized sentences, most frequent first
  /// (ties lexicographic).
  static Vocabulary build(const std::vector<std::vector<std::string>>& tokenized);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  static bool is_special(int id) { return id >= 0 && id < static_cast<int>(kSpecials); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  /// Drops pad, bos and eos; unknown ids stay visible as <unk>.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  /// One token per line, specials excluded: line i holds id i + 4.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::vector<std::string> split_words(std::string_view sentence);

}  // namespace alnmt::bpe

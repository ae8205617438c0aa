#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace alnmt {

/// Invalid user-supplied configuration (sizes, fractions, keys).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace corpus {

/// Inclusive codepoint range.
struct CodepointRange {
  char32_t first;
  char32_t last;
};

/// Characters a cleaned line may contain (besides the single space).
struct ScriptSet {
  std::vector<CodepointRange> ranges;

  bool contains(char32_t cp) const;
  static ScriptSet printable_ascii();
  static ScriptSet devanagari_latin();
  /// Parses a preset name ("ascii", "devanagari+latin") or a comma list of
  /// hex ranges such as "0020-007E,0900-097F".
  static ScriptSet parse(std::string_view name);
};

struct CleanConfig {
  ScriptSet script = ScriptSet::printable_ascii();
  bool remove_stop_words = false;
  std::set<std::string> stop_words;
};

enum class RejectReason { empty, foreign_script };

std::string to_string(RejectReason r);

/// Outcome of cleaning one line: either accepted text or a rejection.
struct CleanResult {
  std::string text;
  std::optional<RejectReason> rejection;

  bool accepted() const { return !rejection.has_value(); }
};

/// Lowercases, strips control and invisible junk characters, collapses
/// whitespace, and rejects empty lines or lines with out-of-script characters.
CleanResult clean(std::string_view raw, const CleanConfig& config = {});

struct SentencePair {
  std::string source;
  std::string target;
  std::int64_t id = 0;

  bool operator==(const SentencePair&) const = default;
};

enum class SplitTag { train, dev, test };

std::string to_string(SplitTag tag);

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  SplitTag tag = SplitTag::train;

  std::size_t size() const { return pairs.size(); }
  std::vector<std::string> sources() const;
  std::vector<std::string> targets() const;
};

struct IngestStats {
  std::size_t lines = 0;
  std::size_t rejected_source = 0;
  std::size_t rejected_target = 0;
  std::size_t duplicates = 0;
  std::map<std::string, std::size_t> reasons;
};

struct IngestResult {
  ParallelCorpus corpus;
  IngestStats stats;
};

/// Cleans aligned lines, drops rejected and duplicate (source, target) pairs
/// and assigns ids in ingestion order starting at 0.
IngestResult ingest(const std::vector<std::string>& source_lines,
                    const std::vector<std::string>& target_lines,
                    const CleanConfig& source_config = {}, const CleanConfig& target_config = {});

struct SplitResult {
  ParallelCorpus train;
  ParallelCorpus dev;
  ParallelCorpus test;
};

/// Seeded shuffle followed by a three-way partition with exact sizes.
/// Dev and test draw only pairs whose source text is unique in the corpus,
/// so no source string can occur in two splits.
SplitResult split(const ParallelCorpus& corpus, std::size_t dev_size, std::size_t test_size,
                  std::uint64_t seed);

class MonolingualPool;

/// Passkey for reading withheld references; only oracle code creates one.
class RevealKey {
  RevealKey() = default;
  friend class OracleAccess;
};

/// Grants RevealKeys. Oracles and the journal replay go through this.
class OracleAccess {
 public:
  static RevealKey key() { return {}; }
};

struct PoolEntry {
  std::int64_t id = 0;
  std::string source;
};

/// Unlabeled source sentences. Withheld references are stored alongside but
/// are only reachable with a RevealKey.
class MonolingualPool {
 public:
  MonolingualPool() = default;

  void add(std::int64_t id, std::string source, std::optional<std::string> hidden_reference = {});
  const std::vector<PoolEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(std::int64_t id) const { return index_.count(id) != 0; }
  const PoolEntry& entry(std::int64_t id) const;
  bool has_reference(std::int64_t id) const { return hidden_.count(id) != 0; }
  const std::string& reveal(std::int64_t id, RevealKey) const;

 private:
  std::vector<PoolEntry> entries_;
  std::map<std::int64_t, std::size_t> index_;
  std::map<std::int64_t, std::string> hidden_;
};

struct AlPartition {
  ParallelCorpus baseline;
  MonolingualPool pool;
};

/// Number of pairs that go to the baseline set: ceil(n * fraction).
std::size_t baseline_count(std::size_t n, double baseline_fraction);

/// Seeded random split of the training set into a labeled baseline and an
/// unlabeled pool whose entries carry the withheld targets.
AlPartition partition_for_al(const ParallelCorpus& train, double baseline_fraction,
                             std::uint64_t seed);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

/// Writes `<prefix>.{train,dev,test}.{src,trg}`.
void write_split(const std::string& prefix, const SplitResult& split);
/// Reads `<prefix>.<name>.{src,trg}`; ids are line numbers plus `id_offset`.
ParallelCorpus read_parallel(const std::string& prefix, const std::string& name, SplitTag tag,
                             std::int64_t id_offset = 0);

}  // namespace corpus
}  // namespace alnmt

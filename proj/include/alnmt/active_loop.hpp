#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "alnmt/acquisition.hpp"
#include "alnmt/corpus.hpp"
#include "alnmt/trainer.hpp"

namespace alnmt::active {

enum class OracleMode { simulated, interactive };

std::string to_string(OracleMode m);
std::optional<OracleMode> parse_oracle_mode(const std::string& s);

struct ALConfig {
  acquisition::Strategy strategy = acquisition::Strategy::least_confidence;
  double pool_sample_fraction = 0.06;
  std::size_t query_size = 10000;  // B
  std::size_t budget = 20;         // oracle query iterations
  std::size_t fine_tune_epochs = 2;
  OracleMode oracle = OracleMode::simulated;
  std::uint64_t seed = 1;
  std::size_t beam = 5;
  std::size_t n_best = 2;
  bool raw_product = false;   // unnormalized sequence probability
  bool retrain_full = false;  // retrain from scratch on the labeled set each iteration
  std::size_t workers = 1;

  void validate() const;
  /// Sentences scored per iteration: max(B, round(fraction * |U|)), capped at |U|.
  std::size_t sample_size(std::size_t pool_size) const;
};

struct OracleItem {
  std::int64_t id = 0;
  std::string source;
  std::string hypothesis;  // model's current best, for post-editing
  double score = 0;
};

struct OracleRequest {
  std::size_t iteration = 0;
  std::vector<OracleItem> items;
};

struct OracleLabel {
  std::int64_t id = 0;
  std::string target;
  std::string annotator;
};

struct OracleResponse {
  std::vector<OracleLabel> labels;
  std::vector<std::int64_t> skipped;
};

/// Callbacks an oracle uses to hand back answers as they arrive. `skip`
/// returns the replacement item (if any) that should be asked next.
struct OracleSink {
  std::function<void(const OracleLabel&)> label;
  std::function<std::optional<OracleItem>(std::int64_t id, const std::string& annotator)> skip;
};

class OracleAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual OracleMode mode() const = 0;
  /// Blocks until every item (and every replacement handed out by the sink)
  /// is labeled or skipped. May throw OracleAborted.
  virtual void query(const OracleRequest& request, const OracleSink& sink) = 0;
};

/// Answers with the withheld pool references.
class SimulatedOracle final : public Oracle {
 public:
  explicit SimulatedOracle(const corpus::MonolingualPool& pool) : pool_(pool) {}
  OracleMode mode() const override { return OracleMode::simulated; }
  OracleResponse answer(const OracleRequest& request) const;
  void query(const OracleRequest& request, const OracleSink& sink) override;

 private:
  const corpus::MonolingualPool& pool_;
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::vector<std::int64_t> selected;  // X_B, in labeling order
  std::vector<std::string> targets;    // Y_B
  std::vector<std::int64_t> skipped;
  double dev_bleu = 0;
  double dev_ppl = 0;
  std::string checkpoint;  // relative to the run directory
  std::size_t labeled_count = 0;
  std::size_t pool_count = 0;

  bool operator==(const IterationRecord&) const = default;
};

struct ALState {
  std::size_t iteration = 0;  // completed iterations
  std::vector<corpus::SentencePair> labeled;
  std::set<std::int64_t> labeled_ids;
  std::set<std::int64_t> pool_ids;
  std::vector<IterationRecord> history;

  bool operator==(const ALState&) const = default;
};

/// Partition invariants: L and U disjoint, and L ∪ U equals `universe`.
/// Returns human-readable violations (empty when all hold).
std::vector<std::string> audit(const ALState& state, const std::set<std::int64_t>& universe);

/// Converts text to ids and back for the loop.
struct TextCodec {
  std::function<std::vector<int>(const std::string&)> source;
  std::function<std::vector<int>(const std::string&)> target;
  training::Detokenizer detokenize;
  std::function<std::string(const std::vector<int>&)> target_text;
};

struct RunContext {
  std::filesystem::path run_dir;  // journal.jsonl and checkpoints/ live here
  TextCodec codec;
  const training::PairData* dev = nullptr;
  training::TrainConfig train;  // fine-tune (and full retrain) settings
  ModelConfig model_config;
  std::uint64_t init_seed = 1;
  /// Normalizes human labels; nullopt rejects the label.
  std::function<std::optional<std::string>(const std::string&)> clean_label;
  std::function<void(const IterationRecord&)> on_iteration;
  bool write_score_dumps = true;
};

struct Status {
  std::size_t iteration = 0;  // iteration in progress (1-based), or completed count when idle
  std::size_t pending_count = 0;
  std::size_t labeled_count = 0;
  std::size_t pool_count = 0;
  std::string strategy;
};

class ActiveLearner {
 public:
  ActiveLearner(ALConfig config, RunContext context, corpus::ParallelCorpus baseline,
                const corpus::MonolingualPool& pool);

  /// Runs (or resumes, if the run directory already holds a journal) until
  /// the budget is spent or the pool is empty. `model` must hold the
  /// baseline parameters; on return it holds the final ones.
  ALState run(training::Model& model, Oracle& oracle);

  ALState state() const;
  Status status() const;

  const std::filesystem::path& journal_path() const { return journal_path_; }

 private:
  struct Pending;
  void append(const std::string& line);
  std::optional<Pending> restore(training::Model& model);
  void apply_label(std::size_t iteration, const OracleLabel& label, IterationRecord& rec);

  ALConfig config_;
  RunContext ctx_;
  corpus::ParallelCorpus baseline_;
  const corpus::MonolingualPool& pool_;
  std::filesystem::path journal_path_;

  mutable std::mutex mu_;
  ALState state_;
  std::size_t pending_ = 0;
  std::size_t current_iteration_ = 0;
};

/// Rebuilds the state recorded in a journal from the baseline and pool it
/// was produced with. Hidden references are not consulted: labels come from
/// the journal itself.
ALState replay(const std::filesystem::path& journal, const corpus::ParallelCorpus& baseline,
               const corpus::MonolingualPool& pool);

}  // namespace alnmt::active

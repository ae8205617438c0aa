#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "alnmt/active_loop.hpp"
#include "alnmt/bpe.hpp"
#include "alnmt/config.hpp"
#include "alnmt/corpus.hpp"
#include "alnmt/metrics.hpp"
#include "alnmt/trainer.hpp"

namespace alnmt::pipeline {

namespace fs = std::filesystem;

/// Files inside a run directory.
struct RunLayout {
  fs::path root;

  fs::path snapshot() const { return root / "config.snapshot"; }
  fs::path lock() const { return root / ".lock"; }
  fs::path corpus_prefix() const { return root / "data" / "corpus"; }
  fs::path bpe_dir() const { return root / "bpe"; }
  fs::path model() const { return root / "model.ckpt"; }
  fs::path baseline_model() const { return root / "baseline.ckpt"; }
  fs::path train_log() const { return root / "train_log.jsonl"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path journal() const { return root / "journal.jsonl"; }
  fs::path test_report() const { return root / "test_report.json"; }
  fs::path variant() const { return root / "variant.txt"; }
};

/// Exclusive ownership of a run directory for the life of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

/// Defaults, then `base_run`'s snapshot, then the run's own snapshot, then
/// `file`, then `assignments` (later wins).
config::Config resolve_config(const fs::path& run_dir, const std::optional<fs::path>& base_run,
                              const std::optional<fs::path>& file, const std::vector<std::string>& assignments);
void write_snapshot(const fs::path& run_dir, const config::Config& c);

corpus::CleanConfig source_clean(const config::Config& c);
corpus::CleanConfig target_clean(const config::Config& c);

struct PrepareSummary {
  corpus::IngestStats stats;
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
  std::size_t baseline = 0;
  std::size_t pool = 0;
};

/// Cleans, deduplicates and splits the corpus into `data/`.
PrepareSummary prepare(const fs::path& run_dir, const config::Config& c);

/// Learns one BPE model per language on the training split and the
/// vocabularies over the segmented text, into `bpe/`.
void learn_bpe(const fs::path& run_dir, const config::Config& c);

/// Text <-> ids for one run, loaded from `bpe/`.
class TextPipeline {
 public:
  TextPipeline(const fs::path& run_dir, const config::Config& c);

  std::vector<int> source_ids(const std::string& text) const;
  std::vector<int> target_ids(const std::string& text) const;
  std::string target_text(const std::vector<int>& ids) const;
  std::vector<std::string> target_words(const std::vector<int>& ids) const;
  /// Cleans a line with the source rules; nullopt if rejected.
  std::optional<std::string> clean_source(const std::string& raw) const;
  std::optional<std::string> clean_target(const std::string& raw) const;

  training::PairData pairs(const corpus::ParallelCorpus& corpus) const;
  active::TextCodec codec() const;
  std::size_t source_vocab() const { return src_vocab_.size(); }
  std::size_t target_vocab() const { return trg_vocab_.size(); }

 private:
  bpe::BpeModel src_bpe_, trg_bpe_;
  bpe::Vocabulary src_vocab_, trg_vocab_;
  corpus::CleanConfig src_clean_, trg_clean_;
};

corpus::ParallelCorpus load_split(const fs::path& run_dir, corpus::SplitTag tag);
/// Baseline/pool partition of the training split (a function of the seed).
corpus::AlPartition load_partition(const fs::path& run_dir, const config::Config& c);

/// Trains on the full training split or the baseline share (`train.on`).
training::TrainResult train(const fs::path& run_dir, const config::Config& c);

struct TestReport {
  std::string variant;
  metrics::BleuReport bleu;
  metrics::PerplexityReport ppl;
  double exact_match = 0;
  std::size_t sentences = 0;
};

/// Greedy-decodes the test split, writes `test_report.json` and the
/// hypotheses to `test.hyp`.
TestReport test(const fs::path& run_dir, const config::Config& c, const std::optional<fs::path>& model = {});

/// One output line per input line; with `nbest > 0` prints
/// "index ||| hypothesis ||| score" lines instead.
void translate(const fs::path& run_dir, const config::Config& c, std::istream& in, std::ostream& out,
               std::size_t nbest = 0, const std::optional<fs::path>& model = {});

/// Copies data, BPE and the trained model of `base_run` into `run_dir` so the
/// active-learning run is self-contained.
void adopt_baseline(const fs::path& run_dir, const fs::path& base_run);

/// Runs (or resumes) the active-learning loop. In interactive mode the
/// annotation service is started in-process for the duration of the run.
active::ALState active_learn(const fs::path& run_dir, const config::Config& c, std::ostream& log);

/// Curve files and a comparison table for the given runs, into `out_dir`.
/// Missing pieces produce warnings, not errors.
void report(const std::vector<fs::path>& runs, const fs::path& out_dir, std::ostream& out, std::ostream& warn);

/// Display name of the model variant a run produced.
std::string variant_name(const config::Config& c, bool active_learning);

}  // namespace alnmt::pipeline

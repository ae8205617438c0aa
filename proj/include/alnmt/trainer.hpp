#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "alnmt/metrics.hpp"
#include "alnmt/transformer.hpp"

namespace alnmt::training {

using Model = Transformer<float>;

struct TrainConfig {
  double lr0 = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  std::int64_t warmup_steps = 1000;
  double min_lr = 1e-8;
  double plateau_factor = 0.7;
  std::size_t patience = 5;
  double plateau_tolerance = 1e-4;  // relative improvement needed to count as better
  std::size_t epochs = 20;
  std::size_t batch_tokens = 512;
  std::size_t validate_every = 1000;  // batches; 0 = only at the end
  std::size_t keep_best = 3;
  double label_smoothing = 0.1;
  double dropout = 0.3;
  std::uint64_t seed = 1;
  bool restore_best = true;  // load the best validated parameters when done
  std::size_t decode_workers = 1;

  void validate() const;
};

/// Linear warmup to lr0 over `warmup_steps`, then lr0 * factor^plateau_events,
/// never below min_lr.
double lr_schedule(std::int64_t t, const TrainConfig& config, std::size_t plateau_events);

/// Token-id pairs (no bos/eos; the model adds them).
struct PairData {
  std::vector<std::vector<int>> sources;
  std::vector<std::vector<int>> targets;

  std::size_t size() const { return sources.size(); }
  void append(const std::vector<int>& src, const std::vector<int>& trg) {
    sources.push_back(src);
    targets.push_back(trg);
  }
};

/// Batches of pair indices grouped by similar length, each within the token
/// budget (padded size: count * longest side + 1). Order is a function of
/// the seed only.
std::vector<std::vector<std::size_t>> make_batches(const PairData& data, std::size_t token_budget,
                                                   std::uint64_t seed, std::size_t max_length);

struct LogRecord {
  std::int64_t step = 0;
  double train_loss = 0;
  double lr = 0;
  double dev_ppl = 0;
  double dev_bleu = 0;
};

std::string to_json_line(const LogRecord& r);

struct SavedCheckpoint {
  std::filesystem::path path;
  double dev_ppl = 0;
  std::int64_t step = 0;
};

struct TrainState {
  std::int64_t step = 0;
  std::size_t plateau_events = 0;
  std::size_t bad_validations = 0;
  double best_ppl = 0;  // 0 until the first validation
  double best_bleu = 0;
  std::int64_t best_step = 0;
  double lr = 0;
  std::vector<SavedCheckpoint> checkpoints;  // oldest first, at most keep_best
  std::vector<double> ppl_history;
};

/// Maps ids to words for BLEU (BPE joined, whitespace split).
using Detokenizer = std::function<std::vector<std::string>(const std::vector<int>&)>;

struct TrainIO {
  const PairData* dev = nullptr;
  Detokenizer detokenize;                 // defaults to decimal ids
  std::filesystem::path checkpoint_dir;   // empty = keep best in memory only
  std::filesystem::path log_path;         // JSON lines, appended
  std::filesystem::path dump_dir;         // diagnostic dumps on divergence
};

struct TrainResult {
  TrainState state;
  std::vector<LogRecord> log;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  std::optional<std::filesystem::path> best_checkpoint;
};

struct Validation {
  double ppl = 0;
  double bleu = 0;
};

/// Dev perplexity (teacher forced) and greedy corpus BLEU; parameters are
/// not touched.
Validation validate(const Model& model, const PairData& dev, const Detokenizer& detok, std::size_t workers = 1);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::filesystem::path dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::filesystem::path& dump() const { return dump_; }

 private:
  std::filesystem::path dump_;
};

TrainResult train(Model& model, const PairData& data, const TrainConfig& config, const TrainIO& io = {});

/// Continues training from the model's current parameters on `data` with
/// fresh optimizer moments for `epochs` epochs.
TrainResult fine_tune(Model& model, const PairData& data, TrainConfig config, std::size_t epochs,
                      const TrainIO& io = {});

/// Loads `checkpoint`, checks it against `expected`, fine-tunes and writes
/// the result to `output`.
TrainResult fine_tune_checkpoint(const std::filesystem::path& checkpoint, const ModelConfig& expected,
                                 const PairData& data, const TrainConfig& config, std::size_t epochs,
                                 const std::filesystem::path& output, const TrainIO& io = {});

/// Default detokenizer: every id printed in decimal.
std::vector<std::string> ids_as_words(const std::vector<int>& ids);

}  // namespace alnmt::training

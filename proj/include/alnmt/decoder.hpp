#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "alnmt/transformer.hpp"

namespace alnmt::decoding {

/// One decoded target sequence. `tokens` ends in eos unless the hypothesis
/// was cut at the length limit.
struct Hypothesis {
  std::vector<int> tokens;
  std::vector<double> token_logprobs;
  double score = 0;  // sum(token_logprobs) / |tokens|
  bool finished = false;

  double total_logprob() const;
  /// Tokens without the trailing eos.
  std::vector<int> content() const;
};

struct NBestList {
  std::size_t source_id = 0;
  std::vector<Hypothesis> hypotheses;  // descending score

  const Hypothesis& best() const { return hypotheses.front(); }
};

/// Incremental decoding state for one source sentence. `log_probs` is the
/// next-token distribution after everything fed so far.
class StepState {
 public:
  virtual ~StepState() = default;
  virtual std::unique_ptr<StepState> clone() const = 0;
  virtual void advance(int token) = 0;
  virtual std::span<const double> log_probs() const = 0;
};

/// Anything that can score continuations: the transformer, or a scripted
/// table in tests.
class StepModel {
 public:
  virtual ~StepModel() = default;
  /// State after feeding bos for `src`.
  virtual std::unique_ptr<StepState> start(std::span<const int> src) const = 0;
  /// Maximum number of generated tokens (eos included).
  virtual std::size_t max_length() const = 0;
};

/// Adapter over a transformer using its cached incremental decoder.
template <typename T>
class TransformerStepModel final : public StepModel {
 public:
  explicit TransformerStepModel(const Transformer<T>& model) : model_(model) {}
  std::unique_ptr<StepState> start(std::span<const int> src) const override;
  std::size_t max_length() const override { return model_.config().max_length; }

 private:
  const Transformer<T>& model_;
};

/// Model defined by a function of (source, prefix) returning next-token
/// log-probabilities. The prefix starts with bos.
class ScriptedStepModel final : public StepModel {
 public:
  using Fn = std::function<std::vector<double>(std::span<const int> src, std::span<const int> prefix)>;
  ScriptedStepModel(Fn fn, std::size_t max_length) : fn_(std::move(fn)), max_length_(max_length) {}
  std::unique_ptr<StepState> start(std::span<const int> src) const override;
  std::size_t max_length() const override { return max_length_; }

 private:
  Fn fn_;
  std::size_t max_length_;
};

/// Argmax decoding; ties go to the lowest token id.
Hypothesis greedy(const StepModel& model, std::span<const int> src);

/// Beam search over cumulative log-probability. A hypothesis that emits eos
/// is frozen and the live beam shrinks by one. The returned list holds the
/// best `n_best` finished hypotheses by length-normalized score, padded with
/// unfinished ones when too few finish before the length limit.
NBestList beam_search(const StepModel& model, std::span<const int> src, std::size_t beam,
                      std::size_t n_best);

/// Beam search over many sources; `source_id` is the index into `sources`.
/// Work is spread over `workers` threads; output order never depends on it.
std::vector<NBestList> beam_search_batch(const StepModel& model,
                                         std::span<const std::vector<int>> sources,
                                         std::size_t beam, std::size_t n_best,
                                         std::size_t workers = 1);

std::vector<Hypothesis> greedy_batch(const StepModel& model, std::span<const std::vector<int>> sources,
                                     std::size_t workers = 1);

/// "line_index ||| hypothesis ||| score"
std::string format_nbest_line(std::size_t line_index, const std::string& text, double score);

extern template class TransformerStepModel<float>;
extern template class TransformerStepModel<double>;

}  // namespace alnmt::decoding

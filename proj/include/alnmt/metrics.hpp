#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "alnmt/transformer.hpp"

namespace alnmt::metrics {

using Tokens = std::vector<std::string>;

struct BleuOptions {
  std::size_t max_order = 4;
  std::vector<double> weights;  // empty = uniform 1/N
  bool smooth = false;          // add-one on orders >= 2
};

struct BleuReport {
  double bleu = 0;
  std::vector<double> precisions;  // p_1..p_N
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  double brevity_penalty = 0;
  std::size_t candidate_length = 0;  // c
  std::size_t reference_length = 0;  // r

  double percent() const { return 100.0 * bleu; }
};

/// exp(1 - r/c) when c <= r, else 1. Zero candidate length gives 0.
double brevity_penalty(std::size_t c, std::size_t r);

BleuReport corpus_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references,
                       const BleuOptions& options = {});

/// Several references per candidate: counts are clipped by the maximum count
/// over references and r uses the reference length closest to each
/// candidate (shorter on ties).
BleuReport corpus_bleu_multi(std::span<const Tokens> candidates,
                             std::span<const std::vector<Tokens>> references,
                             const BleuOptions& options = {});

struct PerplexityReport {
  double cross_entropy = 0;  // bits per token
  double perplexity = 1;
  std::size_t tokens = 0;
};

/// From natural-log probabilities of the gold tokens.
PerplexityReport perplexity_from_logprobs(std::span<const double> gold_logprobs);

/// Teacher-forced perplexity of a model over tokenized pairs (eval mode).
template <typename T>
PerplexityReport perplexity(const Transformer<T>& model, std::span<const std::vector<int>> sources,
                            std::span<const std::vector<int>> targets);

/// Natural-log gold probabilities under teacher forcing, in corpus order.
template <typename T>
std::vector<double> gold_logprobs(const Transformer<T>& model, std::span<const int> src,
                                  std::span<const int> trg);

/// Fixed-field evaluation report: BLEU%, p1..p4, BP, c/r ratio, PPL.
std::string format_report(const BleuReport& bleu, const PerplexityReport& ppl);

}  // namespace alnmt::metrics

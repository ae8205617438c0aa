#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alnmt/decoder.hpp"

namespace alnmt::acquisition {

enum class Strategy { least_confidence, margin, random };

std::string to_string(Strategy s);
/// Accepts "least_confidence", "margin", "random" (also "lc").
std::optional<Strategy> parse_strategy(const std::string& name);

struct AcquisitionScore {
  std::size_t id = 0;
  Strategy strategy = Strategy::least_confidence;
  double value = 0;  // higher = more worth labeling
};

/// Score assigned to sentences whose decoding failed; never selected ahead
/// of a real score.
inline constexpr double kFailedScore = -std::numeric_limits<double>::infinity();

/// Probability of a hypothesis: exp(length-normalized score), or the raw
/// product of token probabilities when `raw_product` is set.
double sequence_probability(const decoding::Hypothesis& h, bool raw_product = false);

/// 1 - P(y*).
double least_confidence_value(double p_best);
/// -(P(y1*) - P(y2*)).
double margin_value(double p_first, double p_second);

AcquisitionScore least_confidence(std::size_t id, const decoding::NBestList& nbest, bool raw_product = false);
/// Returns -1 when the list holds a single hypothesis.
AcquisitionScore margin(std::size_t id, const decoding::NBestList& nbest, bool raw_product = false);
/// Seeded uniform value in [0, 1), a function of (seed, iteration, id) only.
AcquisitionScore random(std::size_t id, std::uint64_t seed, std::size_t iteration);

struct PoolItem {
  std::size_t id = 0;
  std::vector<int> tokens;
};

struct ScoreOptions {
  std::size_t beam = 5;
  std::size_t n_best = 2;
  bool raw_product = false;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct PoolScores {
  std::size_t iteration = 0;
  std::vector<AcquisitionScore> scores;  // ascending id
  std::vector<std::size_t> failed;       // ids whose decode threw
  std::vector<std::size_t> selected;     // filled by select_top
};

/// Decodes and scores every item. Results are ordered by id regardless of
/// input order or worker count.
PoolScores score_pool(std::size_t iteration, std::span<const PoolItem> items, const decoding::StepModel& model,
                      Strategy strategy, const ScoreOptions& options);

/// The B highest values, ties broken by ascending id. When B exceeds the
/// number of scores, every id is returned and `shortfall` is set.
std::vector<std::size_t> select_top(std::span<const AcquisitionScore> scores, std::size_t B,
                                    std::size_t* shortfall = nullptr);

/// Candidates in selection order (full ranking).
std::vector<std::size_t> rank(std::span<const AcquisitionScore> scores);

}  // namespace alnmt::acquisition

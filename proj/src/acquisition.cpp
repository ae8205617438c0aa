#include "alnmt/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iostream>
#include <stdexcept>
#include <thread>

#include "alnmt/rng.hpp"

namespace alnmt::acquisition {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::least_confidence:
      return "least_confidence";
    case Strategy::margin:
      return "margin";
    case Strategy::random:
      return "random";
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(const std::string& name) {
  if (name == "least_confidence" || name == "lc") return Strategy::least_confidence;
  if (name == "margin") return Strategy::margin;
  if (name == "random") return Strategy::random;
  return std::nullopt;
}

double sequence_probability(const decoding::Hypothesis& h, bool raw_product) {
  return raw_product ? std::exp(h.total_logprob()) : std::exp(h.score);
}

double least_confidence_value(double p_best) { return 1.0 - p_best; }

double margin_value(double p_first, double p_second) { return -(p_first - p_second); }

AcquisitionScore least_confidence(std::size_t id, const decoding::NBestList& nbest, bool raw_product) {
  if (nbest.hypotheses.empty()) throw ContractError("least_confidence: empty n-best list");
  return {id, Strategy::least_confidence,
          least_confidence_value(sequence_probability(nbest.hypotheses[0], raw_product))};
}

AcquisitionScore margin(std::size_t id, const decoding::NBestList& nbest, bool raw_product) {
  if (nbest.hypotheses.empty()) throw ContractError("margin: empty n-best list");
  if (nbest.hypotheses.size() < 2) return {id, Strategy::margin, -1.0};
  return {id, Strategy::margin,
          margin_value(sequence_probability(nbest.hypotheses[0], raw_product),
                       sequence_probability(nbest.hypotheses[1], raw_product))};
}

AcquisitionScore random(std::size_t id, std::uint64_t seed, std::size_t iteration) {
  Rng rng(derive_seed(seed, {0x72616e64ULL, iteration, id}));
  return {id, Strategy::random, rng.uniform()};
}

PoolScores score_pool(std::size_t iteration, std::span<const PoolItem> items, const decoding::StepModel& model,
                      Strategy strategy, const ScoreOptions& options) {
  PoolScores out;
  out.iteration = iteration;
  out.scores.resize(items.size());
  std::vector<char> failed(items.size(), 0);
  const std::size_t n_best = strategy == Strategy::margin ? std::max<std::size_t>(2, options.n_best) : options.n_best;
  const std::size_t beam = std::max(options.beam, n_best);

  auto score_one = [&](std::size_t i) {
    const PoolItem& item = items[i];
    if (strategy == Strategy::random) {
      out.scores[i] = random(item.id, options.seed, iteration);
      return;
    }
    try {
      const auto nbest = decoding::beam_search(model, item.tokens, beam, n_best);
      out.scores[i] = strategy == Strategy::margin ? margin(item.id, nbest, options.raw_product)
                                                   : least_confidence(item.id, nbest, options.raw_product);
      if (std::isnan(out.scores[i].value)) throw std::runtime_error("non-finite score");
    } catch (const std::exception&) {
      out.scores[i] = {item.id, strategy, kFailedScore};
      failed[i] = 1;
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, items.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) score_one(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < items.size(); i += workers) score_one(i);
      });
    for (auto& t : pool) t.join();
  }

  for (std::size_t i = 0; i < items.size(); ++i) {
    if (failed[i]) {
      out.failed.push_back(items[i].id);
      std::cerr << "acquisition: decoding failed for sentence " << items[i].id << "\n";
    }
  }
  std::sort(out.scores.begin(), out.scores.end(),
            [](const AcquisitionScore& a, const AcquisitionScore& b) { return a.id < b.id; });
  std::sort(out.failed.begin(), out.failed.end());
  return out;
}

std::vector<std::size_t> rank(std::span<const AcquisitionScore> scores) {
  std::vector<const AcquisitionScore*> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const AcquisitionScore* a, const AcquisitionScore* b) {
    if (a->value != b->value) return a->value > b->value;
    return a->id < b->id;
  });
  std::vector<std::size_t> ids;
  ids.reserve(order.size());
  for (const auto* s : order) ids.push_back(s->id);
  return ids;
}

std::vector<std::size_t> select_top(std::span<const AcquisitionScore> scores, std::size_t B,
                                    std::size_t* shortfall) {
  std::vector<std::size_t> ids = rank(scores);
  if (shortfall) *shortfall = B > ids.size() ? B - ids.size() : 0;
  if (B > ids.size()) {
    std::cerr << "acquisition: requested " << B << " sentences but only " << ids.size() << " were scored\n";
  }
  ids.resize(std::min(B, ids.size()));
  return ids;
}

}  // namespace alnmt::acquisition

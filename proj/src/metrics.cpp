#include "alnmt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <stdexcept>

namespace alnmt::metrics {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

std::vector<double> resolve_weights(const BleuOptions& o) {
  if (o.max_order == 0) throw std::invalid_argument("BLEU max_order must be positive");
  if (o.weights.empty()) return std::vector<double>(o.max_order, 1.0 / static_cast<double>(o.max_order));
  if (o.weights.size() != o.max_order) throw std::invalid_argument("BLEU weights must have max_order entries");
  return o.weights;
}

std::size_t closest_length(std::size_t c, const std::vector<Tokens>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return len > c ? len - c : c - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

}  // namespace

double brevity_penalty(std::size_t c, std::size_t r) {
  if (c == 0) return 0.0;
  if (c > r) return 1.0;
  return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

BleuReport corpus_bleu_multi(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references,
                             const BleuOptions& options) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("corpus_bleu: candidate and reference counts differ");
  if (candidates.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  const std::vector<double> weights = resolve_weights(options);
  const std::size_t N = options.max_order;

  BleuReport rep;
  rep.matches.assign(N, 0);
  rep.totals.assign(N, 0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& cand = candidates[i];
    const auto& refs = references[i];
    if (refs.empty()) throw std::invalid_argument("corpus_bleu: candidate without reference");
    rep.candidate_length += cand.size();
    rep.reference_length += closest_length(cand.size(), refs);
    for (std::size_t n = 1; n <= N; ++n) {
      const NgramCounts cc = count_ngrams(cand, n);
      NgramCounts max_ref;
      for (const auto& r : refs)
        for (const auto& [g, k] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : cc) {
        auto it = max_ref.find(g);
        rep.matches[n - 1] += std::min(k, it == max_ref.end() ? std::size_t{0} : it->second);
        rep.totals[n - 1] += k;
      }
    }
  }

  rep.precisions.assign(N, 0.0);
  bool any_zero = false;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double m = static_cast<double>(rep.matches[n]);
    double t = static_cast<double>(rep.totals[n]);
    if (options.smooth && n >= 1) {
      m += 1.0;
      t += 1.0;
    }
    rep.precisions[n] = t > 0 ? m / t : 0.0;
    if (rep.precisions[n] <= 0.0) {
      any_zero = true;
    } else {
      log_sum += weights[n] * std::log(rep.precisions[n]);
    }
  }
  rep.brevity_penalty = brevity_penalty(rep.candidate_length, rep.reference_length);
  rep.bleu = any_zero ? 0.0 : rep.brevity_penalty * std::exp(log_sum);
  return rep;
}

BleuReport corpus_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references,
                       const BleuOptions& options) {
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back({r});
  return corpus_bleu_multi(candidates, refs, options);
}

PerplexityReport perplexity_from_logprobs(std::span<const double> gold_logprobs) {
  if (gold_logprobs.empty()) throw std::invalid_argument("perplexity: no tokens");
  double bits = 0.0;
  for (double lp : gold_logprobs) bits -= lp / std::log(2.0);
  PerplexityReport rep;
  rep.tokens = gold_logprobs.size();
  rep.cross_entropy = bits / static_cast<double>(rep.tokens);
  rep.perplexity = std::exp2(rep.cross_entropy);
  return rep;
}

template <typename T>
std::vector<double> gold_logprobs(const Transformer<T>& model, std::span<const int> src,
                                  std::span<const int> trg) {
  const std::size_t max_len = model.config().max_length;
  const EncodedSentence enc = encode_source(src, max_len);
  const TargetSides sides = encode_target(trg, max_len);
  const auto cache = model.prepare_encoder(enc.ids);
  auto state = model.start_state(cache);
  std::vector<double> out;
  out.reserve(sides.output.size());
  for (std::size_t t = 0; t < sides.output.size(); ++t) {
    out.push_back(static_cast<double>(state.log_probs[static_cast<std::size_t>(sides.output[t])]));
    if (t + 1 < sides.output.size()) model.advance(cache, state, sides.input[t + 1]);
  }
  return out;
}

template <typename T>
PerplexityReport perplexity(const Transformer<T>& model, std::span<const std::vector<int>> sources,
                            std::span<const std::vector<int>> targets) {
  if (sources.size() != targets.size()) throw std::invalid_argument("perplexity: size mismatch");
  std::vector<double> all;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    auto lp = gold_logprobs(model, sources[i], targets[i]);
    all.insert(all.end(), lp.begin(), lp.end());
  }
  return perplexity_from_logprobs(all);
}

std::string format_report(const BleuReport& bleu, const PerplexityReport& ppl) {
  char buf[256];
  const double ratio = bleu.reference_length == 0
                           ? 0.0
                           : static_cast<double>(bleu.candidate_length) / static_cast<double>(bleu.reference_length);
  std::string p;
  for (std::size_t n = 0; n < bleu.precisions.size(); ++n) {
    char tmp[32];
    std::snprintf(tmp, sizeof tmp, "%s%.4f", n == 0 ? "" : "/", bleu.precisions[n]);
    p += tmp;
  }
  std::snprintf(buf, sizeof buf, "BLEU = %.2f, p = %s, BP = %.4f, ratio = %.4f (c=%zu r=%zu), PPL = %.4f",
                bleu.percent(), p.c_str(), bleu.brevity_penalty, ratio, bleu.candidate_length,
                bleu.reference_length, ppl.perplexity);
  return buf;
}

template std::vector<double> gold_logprobs<float>(const Transformer<float>&, std::span<const int>, std::span<const int>);
template std::vector<double> gold_logprobs<double>(const Transformer<double>&, std::span<const int>, std::span<const int>);
template PerplexityReport perplexity<float>(const Transformer<float>&, std::span<const std::vector<int>>,
                                            std::span<const std::vector<int>>);
template PerplexityReport perplexity<double>(const Transformer<double>&, std::span<const std::vector<int>>,
                                             std::span<const std::vector<int>>);

}  // namespace alnmt::metrics

#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They favour directness over speed and share no code with src/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <limits>
#include <span>
#include <unistd.h>
#include <vector>

#include "alnmt/decoder.hpp"

namespace oracle {

using Words = std::vector<std::string>;

struct Bleu {
  double bleu = 0;
  std::vector<double> precisions;
  double bp = 0;
  std::size_t c = 0;
  std::size_t r = 0;
};

inline std::map<Words, int> ngram_counts(const Words& w, std::size_t n) {
  std::map<Words, int> counts;
  for (std::size_t i = 0; i + n <= w.size(); ++i) counts[Words(w.begin() + i, w.begin() + i + n)] += 1;
  return counts;
}

/// Corpus BLEU with naive n-gram dictionaries, uniform weights, single
/// reference, no smoothing.
inline Bleu brute_bleu(const std::vector<Words>& cands, const std::vector<Words>& refs, std::size_t N = 4) {
  Bleu out;
  std::vector<double> num(N, 0), den(N, 0);
  for (std::size_t s = 0; s < cands.size(); ++s) {
    out.c += cands[s].size();
    out.r += refs[s].size();
    for (std::size_t n = 1; n <= N; ++n) {
      auto cc = ngram_counts(cands[s], n);
      auto rc = ngram_counts(refs[s], n);
      for (auto& [g, k] : cc) {
        int clip = rc.count(g) ? rc[g] : 0;
        num[n - 1] += std::min(k, clip);
        den[n - 1] += k;
      }
    }
  }
  double log_sum = 0;
  bool zero = false;
  for (std::size_t n = 0; n < N; ++n) {
    const double p = den[n] > 0 ? num[n] / den[n] : 0.0;
    out.precisions.push_back(p);
    if (p == 0) zero = true;
    else log_sum += std::log(p) / static_cast<double>(N);
  }
  if (out.c == 0) out.bp = 0;
  else if (out.c > out.r) out.bp = 1;
  else out.bp = std::exp(1.0 - static_cast<double>(out.r) / static_cast<double>(out.c));
  out.bleu = zero ? 0.0 : out.bp * std::exp(log_sum);
  return out;
}

/// BPE by recounting every adjacent pair after each merge. Symbols carry the
/// "@@" continuation suffix on every non-final piece; ties go to the
/// lexicographically smallest (left, right); stops when the best pair occurs
/// fewer than two times.
inline std::vector<std::pair<std::string, std::string>> brute_bpe(const std::vector<std::string>& sentences,
                                                                  std::size_t merges) {
  std::map<std::string, int> freq;
  for (const auto& s : sentences) {
    std::string w;
    for (char ch : s + " ") {
      if (ch == ' ') {
        if (!w.empty()) freq[w] += 1;
        w.clear();
      } else {
        w += ch;
      }
    }
  }
  std::vector<std::pair<std::vector<std::string>, int>> words;
  for (auto& [w, f] : freq) {
    std::vector<std::string> syms;
    for (std::size_t i = 0; i < w.size(); ++i) syms.push_back(std::string(1, w[i]) + (i + 1 < w.size() ? "@@" : ""));
    words.push_back({syms, f});
  }
  std::vector<std::pair<std::string, std::string>> out;
  while (out.size() < merges) {
    std::map<std::pair<std::string, std::string>, int> pairs;
    for (auto& [syms, f] : words)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += f;
    std::pair<std::string, std::string> best;
    int best_count = 0;
    for (auto& [p, k] : pairs)
      if (k > best_count) {  // map order visits smaller pairs first, so ">" keeps the smallest on ties
        best = p;
        best_count = k;
      }
    if (best_count < 2) break;
    out.push_back(best);
    const std::string merged = best.first.substr(0, best.first.size() - 2) + best.second;
    for (auto& [syms, f] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = next;
    }
  }
  return out;
}

/// Table-driven step model: next-token log-probs depend on the prefix only.
/// Unlisted prefixes put all mass on eos.
inline alnmt::decoding::ScriptedStepModel table_model(std::map<std::vector<int>, std::vector<double>> probs,
                                                      std::size_t vocab, std::size_t max_length) {
  return alnmt::decoding::ScriptedStepModel(
      [probs = std::move(probs), vocab](std::span<const int>, std::span<const int> prefix) {
        std::vector<int> key(prefix.begin(), prefix.end());
        std::vector<double> lp(vocab, -std::numeric_limits<double>::infinity());
        auto it = probs.find(key);
        if (it == probs.end()) {
          lp[3] = 0;
          return lp;
        }
        for (std::size_t i = 0; i < vocab; ++i) lp[i] = it->second[i] > 0 ? std::log(it->second[i]) : lp[i];
        return lp;
      },
      max_length);
}

/// Random normalized distribution over `vocab` ids (specials 0..2 get zero).
inline std::vector<double> random_distribution(std::mt19937_64& g, std::size_t vocab) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(vocab, 0.0);
  double z = 0;
  for (std::size_t i = 3; i < vocab; ++i) z += (p[i] = u(g));
  for (auto& x : p) x /= z;
  return p;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("alnmt-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle

#include <algorithm>
#include <cmath>
#include <random>

#include "alnmt/decoder.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace alnmt;
using namespace alnmt::decoding;

namespace {

using Table = std::map<std::vector<int>, std::vector<double>>;

std::vector<double> dist(std::initializer_list<std::pair<int, double>> entries, std::size_t vocab = 7) {
  std::vector<double> p(vocab, 0.0);
  for (auto [id, prob] : entries) p[static_cast<std::size_t>(id)] = prob;
  return p;
}

/// Two free steps over {4, 5, 6}, then eos. Greedy takes 4,4 but the best
/// sequence starts with 5.
Table two_step_table() {
  Table t;
  t[{2}] = dist({{4, 0.4}, {5, 0.35}, {6, 0.25}});
  t[{2, 4}] = dist({{4, 0.4}, {5, 0.3}, {6, 0.3}});
  t[{2, 5}] = dist({{4, 0.9}, {5, 0.05}, {6, 0.05}});
  t[{2, 6}] = dist({{4, 0.5}, {5, 0.25}, {6, 0.25}});
  return t;
}

ModelConfig toy_model_config() {
  ModelConfig c;
  c.d = 16;
  c.heads = 2;
  c.layers = 1;
  c.ffn_width = 32;
  c.src_vocab = 24;
  c.trg_vocab = 24;
  c.max_length = 12;
  return c;
}

std::vector<std::vector<int>> random_sources(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> s(1 + g() % 8);
    for (auto& x : s) x = 4 + static_cast<int>(g() % 20);
    s.push_back(3);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("a model that emits eos first gives the empty translation") {
  const auto m = oracle::table_model({}, 7, 10);
  const auto h = greedy(m, std::vector<int>{4, 3});
  CHECK(h.tokens == std::vector<int>{3});
  CHECK(h.content().empty());
  CHECK(h.finished);
  CHECK(h.score == 0.0);
}

TEST_CASE("greedy follows the hand-traced argmax path") {
  Table t;
  t[{2}] = dist({{4, 0.6}, {5, 0.4}});
  t[{2, 4}] = dist({{4, 0.3}, {5, 0.7}});
  t[{2, 4, 5}] = dist({{3, 0.8}, {6, 0.2}});
  const auto m = oracle::table_model(t, 7, 10);
  const auto h = greedy(m, std::vector<int>{4, 3});
  CHECK(h.tokens == std::vector<int>{4, 5, 3});
  CHECK(std::abs(h.token_logprobs[0] - std::log(0.6)) < 1e-12);
  CHECK(std::abs(h.token_logprobs[1] - std::log(0.7)) < 1e-12);
  CHECK(std::abs(h.token_logprobs[2] - std::log(0.8)) < 1e-12);
  CHECK(std::abs(h.score - std::log(0.6 * 0.7 * 0.8) / 3) < 1e-12);
  CHECK(greedy(m, std::vector<int>{4, 3}).tokens == h.tokens);
}

TEST_CASE("greedy breaks ties toward the lowest id") {
  Table t;
  t[{2}] = dist({{5, 0.5}, {4, 0.5}});
  const auto m = oracle::table_model(t, 7, 10);
  CHECK(greedy(m, std::vector<int>{3}).tokens.front() == 4);
}

TEST_CASE("greedy stops at the length limit") {
  const ScriptedStepModel loop(
      [](std::span<const int>, std::span<const int>) {
        std::vector<double> lp(7, -1e9);
        lp[4] = 0;
        return lp;
      },
      5);
  const auto h = greedy(loop, std::vector<int>{3});
  CHECK(h.tokens.size() == 5);
  CHECK_FALSE(h.finished);
}

TEST_CASE("beam 2 equals exhaustive enumeration on a scripted two-step model") {
  const auto m = oracle::table_model(two_step_table(), 7, 10);
  const auto t = two_step_table();
  struct Seq {
    std::vector<int> tokens;
    double logprob;
  };
  std::vector<Seq> all;
  for (int a : {4, 5, 6})
    for (int b : {4, 5, 6}) {
      const double p = t.at({2})[static_cast<std::size_t>(a)] * t.at({2, a})[static_cast<std::size_t>(b)];
      all.push_back({{a, b, 3}, std::log(p)});
    }
  std::stable_sort(all.begin(), all.end(), [](const Seq& x, const Seq& y) { return x.logprob > y.logprob; });

  const auto nb = beam_search(m, std::vector<int>{4, 3}, 2, 2);
  REQUIRE(nb.hypotheses.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(nb.hypotheses[i].tokens == all[i].tokens);
    CHECK(std::abs(nb.hypotheses[i].total_logprob() - all[i].logprob) < 1e-12);
    CHECK(std::abs(nb.hypotheses[i].score - all[i].logprob / 3) < 1e-12);
  }
  // greedy misses the best sequence here
  CHECK(greedy(m, std::vector<int>{4, 3}).tokens != all[0].tokens);
}

TEST_CASE("wider beams never find a worse best sequence on the scripted model") {
  const auto m = oracle::table_model(two_step_table(), 7, 10);
  double prev = -1e300;
  for (std::size_t beam = 1; beam <= 4; ++beam) {
    const double best = beam_search(m, std::vector<int>{3}, beam, 1).best().total_logprob();
    CHECK(best >= prev);
    prev = best;
  }
}

TEST_CASE("n-best lists are sorted and log-probabilities multiply out") {
  std::mt19937_64 g(77);
  Table t;
  // random three-level tree with eos available at every depth
  std::vector<std::vector<int>> frontier{{2}};
  for (int depth = 0; depth < 3; ++depth) {
    std::vector<std::vector<int>> next;
    for (const auto& prefix : frontier) {
      t[prefix] = oracle::random_distribution(g, 7);
      for (int tok = 4; tok < 7; ++tok) {
        auto p = prefix;
        p.push_back(tok);
        next.push_back(p);
      }
    }
    frontier = next;
  }
  const auto m = oracle::table_model(t, 7, 10);
  const auto nb = beam_search(m, std::vector<int>{3}, 5, 5);
  CHECK(nb.hypotheses.size() == 5);
  for (std::size_t i = 0; i + 1 < nb.hypotheses.size(); ++i)
    CHECK(nb.hypotheses[i].score >= nb.hypotheses[i + 1].score);
  for (const auto& h : nb.hypotheses) {
    CHECK(h.token_logprobs.size() == h.tokens.size());
    CHECK(h.score <= 0);
    std::vector<int> prefix{2};
    double product = 1;
    for (int tok : h.tokens) {
      const auto it = t.find(prefix);
      product *= it == t.end() ? (tok == 3 ? 1.0 : 0.0) : it->second[static_cast<std::size_t>(tok)];
      prefix.push_back(tok);
    }
    CHECK(std::abs(std::exp(h.total_logprob()) - product) < 1e-9);
  }
}

TEST_CASE("beam 1 is token-for-token greedy on 100 sentences") {
  const Transformer<double> model(toy_model_config(), 31);
  const TransformerStepModel<double> m(model);
  const auto sources = random_sources(100, 4);
  for (const auto& s : sources) {
    const auto g = greedy(m, s);
    const auto b = beam_search(m, s, 1, 1).best();
    CHECK(g.tokens == b.tokens);
    CHECK(std::abs(g.score - b.score) < 1e-12);
  }
}

TEST_CASE("batch output does not depend on the number of workers") {
  const Transformer<float> model(toy_model_config(), 12);
  const TransformerStepModel<float> m(model);
  const auto sources = random_sources(17, 5);
  const auto one = beam_search_batch(m, sources, 3, 2, 1);
  const auto many = beam_search_batch(m, sources, 3, 2, 4);
  REQUIRE(one.size() == sources.size());
  REQUIRE(many.size() == sources.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].source_id == i);
    CHECK(many[i].source_id == i);
    REQUIRE(one[i].hypotheses.size() == many[i].hypotheses.size());
    for (std::size_t k = 0; k < one[i].hypotheses.size(); ++k) {
      CHECK(one[i].hypotheses[k].tokens == many[i].hypotheses[k].tokens);
      CHECK(one[i].hypotheses[k].score == many[i].hypotheses[k].score);
    }
  }
  const auto g1 = greedy_batch(m, sources, 1);
  const auto g3 = greedy_batch(m, sources, 3);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i].tokens == g3[i].tokens);
}

TEST_CASE("n_best must lie between one and the beam width") {
  const auto m = oracle::table_model({}, 7, 10);
  CHECK_THROWS_AS(beam_search(m, std::vector<int>{3}, 2, 3), ContractError);
  CHECK_THROWS_AS(beam_search(m, std::vector<int>{3}, 2, 0), ContractError);
}

TEST_CASE("n-best output line format") {
  CHECK(format_nbest_line(0, "c", -2.008499) == "0 ||| c ||| -2.008499");
  CHECK(format_nbest_line(12, "a b", -0.5) == "12 ||| a b ||| -0.500000");
}

// Acceptance checks. Prints one PASS/FAIL line per criterion followed by
// the measured values. An optional argument runs only criteria whose name
// contains it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include "alnmt/acquisition.hpp"
#include "alnmt/active_loop.hpp"
#include "alnmt/bpe.hpp"
#include "alnmt/corpus.hpp"
#include "alnmt/decoder.hpp"
#include "alnmt/metrics.hpp"
#include "alnmt/optim.hpp"
#include "alnmt/toy.hpp"
#include "alnmt/trainer.hpp"
#include "alnmt/transformer.hpp"
#include "oracles.hpp"

using namespace alnmt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[violated: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<int> letter_ids(const std::string& s) {
  std::vector<int> v;
  for (char c : s)
    if (c != ' ') v.push_back(4 + (c - 'a'));
  return v;
}

std::vector<std::string> id_words(const std::vector<int>& ids) {
  std::vector<std::string> w;
  for (int id : ids) w.emplace_back(1, static_cast<char>('a' + id - 4));
  return w;
}

ModelConfig toy_model() {
  ModelConfig mc;
  mc.d = 64;
  mc.heads = 4;
  mc.layers = 2;
  mc.ffn_width = 256;
  mc.src_vocab = 24;
  mc.trg_vocab = 24;
  mc.max_length = 60;
  return mc;
}

training::TrainConfig toy_training(std::size_t epochs, std::uint64_t seed) {
  training::TrainConfig c;
  c.lr0 = 1e-3;
  c.warmup_steps = 200;
  c.dropout = 0.0;
  c.epochs = epochs;
  c.batch_tokens = 128;
  c.validate_every = 0;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------

void metric_oracles(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 g(2024);
  auto sentence = [&](std::size_t max_len) {
    metrics::Tokens s(g() % (max_len + 1));
    for (auto& w : s) w = std::string(1, static_cast<char>('a' + g() % 4));
    return s;
  };
  double worst = 0;
  for (int set = 0; set < 50; ++set) {
    std::vector<metrics::Tokens> cands, refs;
    const std::size_t n = 1 + g() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      refs.push_back(sentence(12));
      if (refs.back().empty()) refs.back().push_back("a");
      metrics::Tokens c = g() % 2 ? refs.back() : sentence(12);
      if (!c.empty() && g() % 2) c[g() % c.size()] = "z";
      cands.push_back(c);
    }
    worst = std::max(worst, std::abs(metrics::corpus_bleu(cands, refs).bleu - oracle::brute_bleu(cands, refs).bleu));
  }
  const std::vector<metrics::Tokens> same{bpe::split_words("the cat sat on the mat")};
  const double perfect = metrics::corpus_bleu(same, same).bleu;
  const double bp = metrics::brevity_penalty(5, 10);
  const std::vector<metrics::Tokens> clipped{bpe::split_words("the the the the")};
  const std::vector<metrics::Tokens> clipped_ref{bpe::split_words("the cat is on the mat")};
  const double p1 = metrics::corpus_bleu(clipped, clipped_ref).precisions[0];
  const double elapsed = seconds_since(t0);
  o.require(worst < 1e-9, "BLEU vs brute force < 1e-9");
  o.require(perfect == 1.0, "perfect match = 1");
  o.require(std::abs(bp - std::exp(-1.0)) < 1e-12, "BP(5,10) = e^-1");
  o.require(p1 == 0.5, "clipped p1 = 0.5");
  o.require(elapsed < 1.0, "runtime < 1 s");
  o.detail << "max |BLEU - oracle| = " << worst << ", perfect = " << perfect << ", |BP - e^-1| = "
           << std::abs(bp - std::exp(-1.0)) << ", p1 = " << p1 << ", " << elapsed << " s";
}

void perplexity_identities(Outcome& o) {
  const auto t0 = Clock::now();
  ModelConfig c;
  c.d = 4;
  c.heads = 1;
  c.layers = 1;
  c.ffn_width = 8;
  c.src_vocab = 16;
  c.trg_vocab = 16;
  c.max_length = 10;
  const Transformer<double> uniform(c, make_params<double>(c));
  const std::vector<std::vector<int>> src{{4, 5}, {6, 7, 8}}, trg{{9}, {10, 11, 12, 13}};
  const auto pp = metrics::perplexity(uniform, src, trg).perplexity;

  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> lp(1 + g() % 50);
    for (auto& x : lp) x = std::log(u(g));
    const auto r = metrics::perplexity_from_logprobs(lp);
    worst = std::max(worst, std::abs(r.perplexity - std::pow(2.0, r.cross_entropy)) / r.perplexity);
  }
  const double elapsed = seconds_since(t0);
  o.require(std::abs(pp - 16.0) < 1e-9, "uniform |V|=16 gives 16");
  o.require(worst <= 4 * std::numeric_limits<double>::epsilon(), "PP = 2^H to machine precision");
  o.require(elapsed < 1.0, "runtime < 1 s");
  o.detail << "uniform PP = " << std::setprecision(17) << pp << std::setprecision(6)
           << ", max rel |PP - 2^H| = " << worst << ", " << elapsed << " s";
}

void randomize(ParamSet<double>& p, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (auto* param : p.all())
    for (auto& v : param->value.values()) v = u(g) + (param->name.ends_with(".gain") ? 1.0 : 0.0);
}

ModelConfig tiny(std::size_t d, std::size_t heads, std::size_t layers, std::size_t vocab) {
  ModelConfig c;
  c.d = d;
  c.heads = heads;
  c.layers = layers;
  c.ffn_width = 2 * d;
  c.src_vocab = vocab;
  c.trg_vocab = vocab;
  c.max_length = 12;
  return c;
}

void gradient_check(Outcome& o) {
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t checked = 0;
  std::string worst_param;
  for (bool tied : {true, false}) {
    ModelConfig c = tiny(8, 2, 1, 16);
    c.tie_weights = tied;
    Transformer<double> m(c, 5);
    randomize(m.params(), tied ? 1 : 2);
    const std::vector<int> src{4, 9, 13, 3};
    const TargetSides trg = encode_target(std::vector<int>{5, 12, 7}, c.max_length);
    auto params = m.params().all();
    auto loss = [&](Tape<double>& tape) { return m.pair_loss(tape, src, trg, 0.1, 4.0); };
    const GradCheckReport r = check_gradients(loss, params, 1e-4);
    checked += r.checked;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      worst_param = r.worst.parameter;
    }
  }
  const double elapsed = seconds_since(t0);
  o.require(worst < 1e-3, "max relative error < 1e-3");
  o.require(elapsed < 60, "runtime < 1 min");
  o.detail << checked << " entries (tied and untied), max relative error " << worst << " in " << worst_param << ", "
           << elapsed << " s";
}

void causality(Outcome& o) {
  double worst_past = 0, smallest_future = std::numeric_limits<double>::infinity();
  std::mt19937_64 g(17);
  for (int trial = 0; trial < 5; ++trial) {
    Transformer<double> m(tiny(8, 2, 2, 16), 100 + trial);
    randomize(m.params(), 40 + trial);
    std::vector<int> src{4, 5, 6, 7, 3};
    std::vector<int> trg{2};
    for (int i = 0; i < 7; ++i) trg.push_back(4 + static_cast<int>(g() % 12));
    const auto before = m.distributions(src, trg);
    for (std::size_t k = 1; k < trg.size(); ++k) {
      auto changed = trg;
      changed[k] = 4 + (changed[k] - 4 + 1 + static_cast<int>(g() % 11)) % 12;
      const auto after = m.distributions(src, changed);
      for (std::size_t r = 0; r < before.rows(); ++r) {
        double diff = 0;
        for (std::size_t j = 0; j < before.cols(); ++j) diff = std::max(diff, std::abs(after(r, j) - before(r, j)));
        if (r < k)
          worst_past = std::max(worst_past, diff);
        else if (r == k)
          smallest_future = std::min(smallest_future, diff);
      }
    }
  }
  o.require(worst_past < 1e-9, "earlier positions unchanged within 1e-9");
  o.require(smallest_future > 0, "the perturbed position itself does change");
  o.detail << "max change before the perturbed position " << worst_past << ", min change at it " << smallest_future;
}

void decoder_equivalences(Outcome& o) {
  ModelConfig c = tiny(16, 2, 1, 24);
  const Transformer<double> model(c, 31);
  const decoding::TransformerStepModel<double> m(model);
  std::mt19937_64 g(4);
  std::size_t agree = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<int> s(1 + g() % 8);
    for (auto& x : s) x = 4 + static_cast<int>(g() % 20);
    s.push_back(3);
    const auto greedy = decoding::greedy(m, s);
    const auto beam = decoding::beam_search(m, s, 1, 1).best();
    agree += greedy.tokens == beam.tokens && std::abs(greedy.score - beam.score) < 1e-12;
  }

  std::map<std::vector<int>, std::vector<double>> t;
  auto dist = [](std::initializer_list<std::pair<int, double>> entries) {
    std::vector<double> p(7, 0.0);
    for (auto [id, prob] : entries) p[static_cast<std::size_t>(id)] = prob;
    return p;
  };
  t[{2}] = dist({{4, 0.4}, {5, 0.35}, {6, 0.25}});
  t[{2, 4}] = dist({{4, 0.4}, {5, 0.3}, {6, 0.3}});
  t[{2, 5}] = dist({{4, 0.9}, {5, 0.05}, {6, 0.05}});
  t[{2, 6}] = dist({{4, 0.5}, {5, 0.25}, {6, 0.25}});
  const auto scripted = oracle::table_model(t, 7, 10);
  std::vector<std::pair<double, std::vector<int>>> all;
  for (int a : {4, 5, 6})
    for (int b : {4, 5, 6})
      all.push_back({std::log(t.at({2})[static_cast<std::size_t>(a)] * t.at({2, a})[static_cast<std::size_t>(b)]),
                     {a, b, 3}});
  std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  const auto nb = decoding::beam_search(scripted, std::vector<int>{4, 3}, 2, 2);
  bool exhaustive = nb.hypotheses.size() == 2;
  for (std::size_t i = 0; exhaustive && i < 2; ++i)
    exhaustive = nb.hypotheses[i].tokens == all[i].second &&
                 std::abs(nb.hypotheses[i].total_logprob() - all[i].first) < 1e-12;
  o.require(agree == 100, "beam 1 = greedy on all 100 sentences");
  o.require(exhaustive, "beam 2 N-best = exhaustive top 2");
  o.detail << "beam1/greedy agreement " << agree << "/100, beam-2 N-best equals enumeration: "
           << (exhaustive ? "yes" : "no");
}

void acquisition_checks(Outcome& o) {
  using namespace acquisition;
  const double lc = least_confidence_value(0.3);
  const double mg = margin_value(0.6, 0.1);
  const double tie = margin_value(0.4, 0.4);
  o.require(std::abs(lc - 0.7) < 1e-15, "phi_LC(0.3) = 0.7");
  o.require(std::abs(mg + 0.5) < 1e-15, "phi_M(0.6, 0.1) = -0.5");
  o.require(tie == 0.0, "tie gives 0");

  // 20 sentences, one free step then eos: p(best) is the largest table entry.
  std::mt19937_64 g(99);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<std::vector<double>> tables;
  std::vector<PoolItem> items;
  for (std::size_t i = 0; i < 20; ++i) {
    std::vector<double> p(10, 0.0);
    double z = 0;
    for (std::size_t k = 4; k < 10; ++k) z += (p[k] = std::pow(u(g), 3));
    for (auto& x : p) x /= z;
    tables.push_back(p);
    items.push_back({i, {100 + static_cast<int>(i), 3}});
  }
  const decoding::ScriptedStepModel model(
      [&](std::span<const int> src, std::span<const int> prefix) {
        const auto& p = tables[static_cast<std::size_t>(src[0] - 100)];
        std::vector<double> lp(10, -std::numeric_limits<double>::infinity());
        if (prefix.size() == 1)
          for (std::size_t i = 4; i < 10; ++i) lp[i] = std::log(p[i]);
        else
          lp[3] = 0;
        return lp;
      },
      5);
  std::size_t matched = 0, cases = 0;
  for (Strategy s : {Strategy::least_confidence, Strategy::margin}) {
    ScoreOptions opts;
    opts.beam = 5;
    opts.n_best = 2;
    const auto ps = score_pool(0, items, model, s, opts);
    std::vector<std::pair<double, std::size_t>> brute;
    for (std::size_t i = 0; i < 20; ++i) {
      std::vector<double> sorted(tables[i].begin() + 4, tables[i].end());
      std::sort(sorted.rbegin(), sorted.rend());
      const double first = std::sqrt(sorted[0]), second = std::sqrt(sorted[1]);
      brute.push_back({s == Strategy::least_confidence ? 1 - first : -(first - second), i});
    }
    std::sort(brute.begin(), brute.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t B : {0, 1, 5, 10, 13, 20}) {
      std::vector<std::size_t> want;
      for (std::size_t i = 0; i < B; ++i) want.push_back(brute[i].second);
      ++cases;
      matched += select_top(ps.scores, B) == want;
    }
  }
  o.require(matched == cases, "top-B equals the sort oracle");
  o.detail << "LC(0.3) = " << lc << ", M(0.6,0.1) = " << mg << ", tie = " << tie << ", top-B agreement " << matched
           << "/" << cases;
}

void bpe_oracle(Outcome& o) {
  std::vector<std::string> corpus;
  for (auto [word, n] : std::vector<std::pair<std::string, int>>{{"low", 5}, {"lower", 2}, {"newest", 6}, {"widest", 3}})
    for (int i = 0; i < n; ++i) corpus.push_back(word);
  std::size_t agree = 0;
  const std::vector<std::size_t> sizes{0, 1, 2, 5, 10, 50};
  for (std::size_t n : sizes) agree += bpe::learn_bpe(corpus, n).merges() == oracle::brute_bpe(corpus, n);

  toy::ToyConfig tc;
  tc.seed = 3;
  std::vector<std::string> sentences;
  for (const auto& p : toy::generate(tc, 500)) {
    for (const auto* text : {&p.source, &p.target}) {
      sentences.push_back(*text);
      std::string glued;
      for (std::size_t i = 0; i < text->size(); ++i)
        if ((*text)[i] != ' ' || i % 3 == 0) glued += (*text)[i];
      sentences.push_back(glued);
    }
  }
  const auto model = bpe::learn_bpe(sentences, 200);
  std::size_t roundtrip = 0;
  for (const auto& s : sentences) roundtrip += bpe::detokenize(bpe::apply_bpe(model, s)) == s;
  o.require(agree == sizes.size(), "merges equal the oracle");
  o.require(roundtrip == sentences.size(), "apply/detokenize roundtrip");
  o.detail << "oracle agreement " << agree << "/" << sizes.size() << " merge budgets, roundtrip " << roundtrip << "/"
           << sentences.size() << " toy sentences (" << model.merge_count() << " merges)";
}

void toy_learning(Outcome& o) {
  const auto t0 = Clock::now();
  toy::ToyConfig tc;
  tc.alphabet = 20;
  const auto pairs = toy::generate(tc, 2300);
  training::PairData train, dev;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    (i < 2000 ? train : dev).append(letter_ids(pairs[i].source), letter_ids(pairs[i].target));
  training::Model model(toy_model(), 11);
  auto config = toy_training(30, 1);
  config.validate_every = 400;
  training::TrainIO io;
  io.dev = &dev;
  io.detokenize = id_words;
  const auto result = training::train(model, train, config, io);

  const decoding::TransformerStepModel<float> step(model);
  const auto hyps = decoding::greedy_batch(step, dev.sources, 1);
  std::size_t exact = 0;
  std::vector<metrics::Tokens> cands, refs;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    exact += hyps[i].content() == dev.targets[i];
    cands.push_back(id_words(hyps[i].content()));
    refs.push_back(id_words(dev.targets[i]));
  }
  const double em = static_cast<double>(exact) / static_cast<double>(dev.size());
  const double bleu = metrics::corpus_bleu(cands, refs).bleu;
  const double elapsed = seconds_since(t0);
  o.require(em >= 0.8, "dev exact match >= 0.8");
  o.require(bleu >= 0.9, "dev BLEU >= 0.9");
  o.require(result.epochs_run <= 30, "within 30 epochs");
  o.require(elapsed < 600, "runtime < 10 min");
  o.detail << "reverse task, vocab 20, 2000 train / 300 dev, d=64: exact match " << em << ", BLEU " << bleu << " after "
           << result.epochs_run << " epochs, " << elapsed << " s";
}

// ---------------------------------------------------------------------------
// Active learning on the toy task: 500 labeled seed pairs and a 1500-sentence
// pool, B = 100, budget 5.

struct ToyAL {
  corpus::ParallelCorpus train;
  corpus::AlPartition partition;
  training::PairData dev;
  std::set<std::int64_t> universe;
};

ToyAL toy_al(std::uint64_t seed) {
  toy::ToyConfig tc;
  tc.seed = 100 + seed;
  const auto pairs = toy::generate(tc, 2300);
  ToyAL t;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i < 2000)
      t.train.pairs.push_back({pairs[i].source, pairs[i].target, static_cast<std::int64_t>(i)});
    else
      t.dev.append(letter_ids(pairs[i].source), letter_ids(pairs[i].target));
  }
  t.partition = corpus::partition_for_al(t.train, 0.25, seed);
  for (const auto& p : t.train.pairs) t.universe.insert(p.id);
  return t;
}

active::RunContext al_context(const ToyAL& t, const fs::path& dir, std::uint64_t seed) {
  active::RunContext ctx;
  ctx.run_dir = dir;
  ctx.codec.source = letter_ids;
  ctx.codec.target = letter_ids;
  ctx.codec.detokenize = id_words;
  ctx.codec.target_text = [](const std::vector<int>& ids) {
    std::string s;
    for (const auto& w : id_words(ids)) s += (s.empty() ? "" : " ") + w;
    return s;
  };
  ctx.dev = &t.dev;
  ctx.train = toy_training(2, seed);
  ctx.train.warmup_steps = 0;
  ctx.model_config = toy_model();
  ctx.init_seed = seed;
  return ctx;
}

active::ALConfig al_config(acquisition::Strategy s, std::uint64_t seed) {
  active::ALConfig a;
  a.strategy = s;
  a.pool_sample_fraction = 0.4;
  a.query_size = 100;
  a.budget = 5;
  a.fine_tune_epochs = 2;
  a.seed = seed;
  return a;
}

struct Curve {
  std::vector<std::pair<std::size_t, double>> points;  // labeled count, dev BLEU

  double final_bleu() const { return points.back().second; }
  std::optional<std::size_t> labels_to_reach(double threshold) const {
    for (const auto& [labeled, bleu] : points)
      if (bleu >= threshold) return labeled;
    return std::nullopt;
  }
};

struct InvariantReport {
  bool ran = false;
  std::size_t iterations = 0;
  std::vector<std::string> violations;
  bool replay_equal = false;
  double seconds = 0;
};

struct EffectivenessReport {
  std::vector<std::string> lines;
  std::size_t lc_wins = 0, margin_wins = 0, seeds = 0;
  double seconds = 0;
};

InvariantReport invariants;
EffectivenessReport effectiveness;
const fs::path work_root = fs::temp_directory_path() / "alnmt-acceptance";

void run_effectiveness(std::size_t seeds) {
  if (effectiveness.seeds > 0) return;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    const ToyAL t = toy_al(seed);
    training::PairData seed_data;
    for (const auto& p : t.partition.baseline.pairs) seed_data.append(letter_ids(p.source), letter_ids(p.target));
    training::Model baseline(toy_model(), seed);
    training::TrainIO io;
    io.dev = &t.dev;
    io.detokenize = id_words;
    const auto tb = Clock::now();
    const auto base_result = training::train(baseline, seed_data, toy_training(30, seed), io);
    const double base_seconds = seconds_since(tb);
    const double base_bleu = base_result.log.back().dev_bleu;

    std::map<acquisition::Strategy, Curve> curves;
    for (auto s : {acquisition::Strategy::random, acquisition::Strategy::least_confidence,
                   acquisition::Strategy::margin}) {
      const auto tl = Clock::now();
      const fs::path dir = work_root / ("seed" + std::to_string(seed) + "-" + acquisition::to_string(s));
      fs::remove_all(dir);
      auto ctx = al_context(t, dir, seed);
      std::vector<active::ALState> snapshots;
      active::ActiveLearner* self = nullptr;
      const bool check_invariants = seed == 1 && s == acquisition::Strategy::least_confidence;
      if (check_invariants) ctx.on_iteration = [&](const active::IterationRecord&) { snapshots.push_back(self->state()); };
      active::ActiveLearner learner(al_config(s, seed), ctx, t.partition.baseline, t.partition.pool);
      self = &learner;
      active::SimulatedOracle oracle(t.partition.pool);
      training::Model model = baseline;
      const auto state = learner.run(model, oracle);

      Curve& c = curves[s];
      c.points.push_back({t.partition.baseline.size(), base_bleu});
      for (const auto& h : state.history) c.points.push_back({h.labeled_count, h.dev_bleu});

      if (check_invariants) {
        invariants.ran = true;
        invariants.iterations = snapshots.size();
        std::size_t labeled = t.partition.baseline.size(), pool = t.partition.pool.size();
        if (pool != 1500) invariants.violations.push_back("pool size " + std::to_string(pool));
        for (const auto& snap : snapshots) {
          labeled += 100;
          pool -= 100;
          for (const auto& v : active::audit(snap, t.universe)) invariants.violations.push_back(v);
          if (snap.labeled_ids.size() != labeled || snap.pool_ids.size() != pool)
            invariants.violations.push_back("iteration " + std::to_string(snap.iteration) + ": |L| = " +
                                            std::to_string(snap.labeled_ids.size()) +
                                            ", |U| = " + std::to_string(snap.pool_ids.size()));
        }
        invariants.replay_equal =
            active::replay(learner.journal_path(), t.partition.baseline, t.partition.pool) == state;
        invariants.seconds = seconds_since(tl) + base_seconds;
      }
      fs::remove_all(dir);
    }

    const double threshold = curves[acquisition::Strategy::random].final_bleu();
    const auto need_random = curves[acquisition::Strategy::random].labels_to_reach(threshold);
    const auto need_lc = curves[acquisition::Strategy::least_confidence].labels_to_reach(threshold);
    const auto need_margin = curves[acquisition::Strategy::margin].labels_to_reach(threshold);
    const bool lc_ok = need_lc && *need_lc <= *need_random;
    const bool margin_ok = need_margin && *need_margin <= *need_random;
    effectiveness.lc_wins += lc_ok;
    effectiveness.margin_wins += margin_ok;
    ++effectiveness.seeds;

    auto fmt = [](const std::optional<std::size_t>& n) { return n ? std::to_string(*n) : std::string("never"); };
    std::ostringstream line;
    line << std::fixed << std::setprecision(4) << "seed " << seed << ": threshold " << threshold << "; labels needed random "
         << fmt(need_random) << ", lc " << fmt(need_lc) << (lc_ok ? "" : " (worse)") << ", margin "
         << fmt(need_margin) << (margin_ok ? "" : " (worse)") << "; curves";
    for (auto& [s, c] : curves) {
      line << " " << acquisition::to_string(s) << "=";
      for (std::size_t i = 0; i < c.points.size(); ++i) line << (i ? "," : "") << c.points[i].second;
    }
    effectiveness.lines.push_back(line.str());
    std::cerr << "  " << line.str() << " (" << seconds_since(t0) << " s)\n";
  }
  effectiveness.seconds = seconds_since(t0);
}

void algorithm_invariants(Outcome& o) {
  run_effectiveness(5);
  o.require(invariants.ran, "least-confidence run on seed 1 executed");
  o.require(invariants.iterations == 5, "five iterations");
  o.require(invariants.violations.empty(), "|U| -100, |L| +100 and the partition hold each iteration");
  o.require(invariants.replay_equal, "journal replay reconstructs the final state");
  o.require(invariants.seconds < 600, "runtime < 10 min");
  o.detail << "pool 1500, B = 100, budget 5: " << invariants.iterations << " iterations, "
           << invariants.violations.size() << " violations, replay "
           << (invariants.replay_equal ? "identical" : "DIFFERENT") << ", " << invariants.seconds << " s";
  for (const auto& v : invariants.violations) o.detail << "; " << v;
}

void al_effectiveness(Outcome& o) {
  run_effectiveness(5);
  o.require(effectiveness.lc_wins >= 4, "least confidence in >= 4 of 5 seeds");
  o.require(effectiveness.margin_wins >= 4, "margin in >= 4 of 5 seeds");
  o.require(effectiveness.seconds < 3600, "runtime < 1 hr");
  o.detail << "least confidence " << effectiveness.lc_wins << "/" << effectiveness.seeds << ", margin "
           << effectiveness.margin_wins << "/" << effectiveness.seeds << ", " << effectiveness.seconds << " s";
  for (const auto& l : effectiveness.lines) o.detail << "\n    " << l;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism(Outcome& o) {
  const ToyAL t = toy_al(3);
  std::vector<std::string> logs, journals;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = work_root / ("determinism-" + std::to_string(run));
    fs::remove_all(dir);
    fs::create_directories(dir);
    training::PairData seed_data;
    for (const auto& p : t.partition.baseline.pairs) seed_data.append(letter_ids(p.source), letter_ids(p.target));
    ModelConfig mc = toy_model();
    mc.d = 32;
    mc.ffn_width = 64;
    mc.heads = 2;
    mc.layers = 1;
    training::Model baseline(mc, 3);
    auto tc = toy_training(3, 3);
    tc.dropout = 0.1;
    tc.validate_every = 20;
    training::TrainIO io;
    io.dev = &t.dev;
    io.detokenize = id_words;
    io.log_path = dir / "train_log.jsonl";
    io.checkpoint_dir = dir / "checkpoints";
    training::train(baseline, seed_data, tc, io);

    auto ctx = al_context(t, dir / "al", 3);
    ctx.model_config = mc;
    ctx.train = tc;
    ctx.train.warmup_steps = 0;
    auto ac = al_config(acquisition::Strategy::least_confidence, 3);
    ac.budget = 2;
    ac.query_size = 50;
    ac.pool_sample_fraction = 0.1;
    ac.fine_tune_epochs = 1;
    active::ActiveLearner learner(ac, ctx, t.partition.baseline, t.partition.pool);
    active::SimulatedOracle oracle(t.partition.pool);
    learner.run(baseline, oracle);
    logs.push_back(file_bytes(io.log_path));
    journals.push_back(file_bytes(learner.journal_path()));
    fs::remove_all(dir);
  }
  o.require(!logs[0].empty() && logs[0] == logs[1], "training logs byte-identical");
  o.require(!journals[0].empty() && journals[0] == journals[1], "journals byte-identical");
  o.detail << "training log " << logs[0].size() << " bytes " << (logs[0] == logs[1] ? "identical" : "DIFFERENT")
           << ", journal " << journals[0].size() << " bytes " << (journals[0] == journals[1] ? "identical" : "DIFFERENT");
}

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"metric-oracles", metric_oracles},
      {"perplexity-identities", perplexity_identities},
      {"gradient-check", gradient_check},
      {"causality", causality},
      {"decoder-equivalences", decoder_equivalences},
      {"acquisition-formulas", acquisition_checks},
      {"al-invariants", algorithm_invariants},
      {"bpe-oracle", bpe_oracle},
      {"toy-learning", toy_learning},
      {"al-effectiveness", al_effectiveness},
      {"determinism", determinism},
  };
  std::cout << std::setprecision(6);
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    Outcome o;
    o.detail << std::setprecision(6);
    try {
      check(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
  }
  fs::remove_all(work_root);
  return failures == 0 ? 0 : 1;
}

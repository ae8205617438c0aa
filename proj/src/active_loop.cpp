#include "alnmt/active_loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "json.hpp"

#include "alnmt/decoder.hpp"
#include "alnmt/rng.hpp"

namespace alnmt::active {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d70ULL;
constexpr std::uint64_t kTuneStream = 0x74756e65ULL;

std::string iteration_tag(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter-%03zu", i);
  return buf;
}

json header_json(const ALConfig& c, std::size_t baseline_size, std::size_t pool_size) {
  return {{"type", "header"},
          {"strategy", acquisition::to_string(c.strategy)},
          {"pool_sample_fraction", c.pool_sample_fraction},
          {"query_size", c.query_size},
          {"budget", c.budget},
          {"fine_tune_epochs", c.fine_tune_epochs},
          {"oracle", to_string(c.oracle)},
          {"seed", c.seed},
          {"beam", c.beam},
          {"n_best", c.n_best},
          {"sequence_probability", c.raw_product ? "raw_product" : "length_normalized"},
          {"retrain_full", c.retrain_full},
          {"baseline_size", baseline_size},
          {"pool_size", pool_size}};
}

std::vector<json> read_journal(const std::filesystem::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      // A torn final line from an interrupted write is dropped.
      break;
    }
  }
  return out;
}

ALState initial_state(const corpus::ParallelCorpus& baseline, const corpus::MonolingualPool& pool) {
  ALState s;
  s.labeled = baseline.pairs;
  for (const auto& p : baseline.pairs) s.labeled_ids.insert(p.id);
  for (const auto& e : pool.entries()) s.pool_ids.insert(e.id);
  return s;
}

/// Journal contents folded into a state plus the unfinished iteration.
struct Replayed {
  ALState state;
  std::optional<json> header;
  std::size_t open_iteration = 0;  // 0 = none
  std::vector<std::int64_t> ranking;
  std::map<std::int64_t, double> scores;
  IterationRecord open_record;
};

Replayed fold(const std::vector<json>& records, const corpus::ParallelCorpus& baseline,
              const corpus::MonolingualPool& pool) {
  Replayed r;
  r.state = initial_state(baseline, pool);
  for (const auto& rec : records) {
    const std::string type = rec.at("type");
    if (type == "header") {
      r.header = rec;
    } else if (type == "selection") {
      r.open_iteration = rec.at("iteration");
      r.ranking = rec.at("ranking").get<std::vector<std::int64_t>>();
      r.scores.clear();
      const auto& values = rec.at("scores");
      for (std::size_t i = 0; i < r.ranking.size() && i < values.size(); ++i)
        r.scores[r.ranking[i]] = values[i].is_null() ? acquisition::kFailedScore : values[i].get<double>();
      r.open_record = {};
      r.open_record.iteration = r.open_iteration;
    } else if (type == "label") {
      const std::int64_t id = rec.at("id");
      if (!r.state.pool_ids.erase(id)) throw std::runtime_error("journal labels id " + std::to_string(id) + " twice");
      r.state.labeled_ids.insert(id);
      r.state.labeled.push_back({pool.entry(id).source, rec.at("target").get<std::string>(), id});
      r.open_record.selected.push_back(id);
      r.open_record.targets.push_back(rec.at("target"));
    } else if (type == "skip") {
      r.open_record.skipped.push_back(rec.at("id"));
    } else if (type == "iteration_end") {
      IterationRecord done = r.open_record;
      done.iteration = rec.at("iteration");
      done.dev_bleu = rec.at("dev_bleu");
      done.dev_ppl = rec.at("dev_ppl");
      done.checkpoint = rec.at("checkpoint");
      done.labeled_count = rec.at("labeled");
      done.pool_count = rec.at("pool");
      r.state.history.push_back(std::move(done));
      r.state.iteration = r.state.history.back().iteration;
      r.open_iteration = 0;
      r.ranking.clear();
      r.scores.clear();
      r.open_record = {};
    }
  }
  return r;
}

}  // namespace

std::string to_string(OracleMode m) { return m == OracleMode::simulated ? "simulated" : "interactive"; }

std::optional<OracleMode> parse_oracle_mode(const std::string& s) {
  if (s == "simulated") return OracleMode::simulated;
  if (s == "interactive") return OracleMode::interactive;
  return std::nullopt;
}

void ALConfig::validate() const {
  if (!(pool_sample_fraction > 0 && pool_sample_fraction <= 1)) throw ConfigError("pool_sample_fraction must be in (0, 1]");
  if (query_size == 0) throw ConfigError("query_size must be at least 1");
  if (budget == 0) throw ConfigError("budget must be at least 1");
  if (beam == 0 || n_best == 0 || n_best > beam) throw ConfigError("need 1 <= n_best <= beam");
}

std::size_t ALConfig::sample_size(std::size_t pool_size) const {
  const auto frac = static_cast<std::size_t>(std::llround(pool_sample_fraction * static_cast<double>(pool_size)));
  return std::min(pool_size, std::max(query_size, frac));
}

OracleResponse SimulatedOracle::answer(const OracleRequest& request) const {
  OracleResponse r;
  const auto key = corpus::OracleAccess::key();
  for (const auto& item : request.items) r.labels.push_back({item.id, pool_.reveal(item.id, key), "simulated"});
  return r;
}

void SimulatedOracle::query(const OracleRequest& request, const OracleSink& sink) {
  for (const auto& l : answer(request).labels) sink.label(l);
}

std::vector<std::string> audit(const ALState& state, const std::set<std::int64_t>& universe) {
  std::vector<std::string> problems;
  for (auto id : state.labeled_ids)
    if (state.pool_ids.count(id)) problems.push_back("id " + std::to_string(id) + " is both labeled and in the pool");
  std::set<std::int64_t> all = state.labeled_ids;
  all.insert(state.pool_ids.begin(), state.pool_ids.end());
  if (all != universe) problems.push_back("labeled and pool ids do not cover the id universe exactly");
  if (state.labeled.size() != state.labeled_ids.size()) problems.push_back("labeled pair list and id set differ in size");
  if (state.history.size() != state.iteration) problems.push_back("history length differs from iteration count");
  return problems;
}

struct ActiveLearner::Pending {
  std::size_t iteration = 0;
  std::vector<std::int64_t> ranking;
  std::map<std::int64_t, double> scores;
  IterationRecord record;
};

ActiveLearner::ActiveLearner(ALConfig config, RunContext context, corpus::ParallelCorpus baseline,
                             const corpus::MonolingualPool& pool)
    : config_(config), ctx_(std::move(context)), baseline_(std::move(baseline)), pool_(pool) {
  config_.validate();
  journal_path_ = ctx_.run_dir / "journal.jsonl";
  state_ = initial_state(baseline_, pool_);
  for (const auto& p : baseline_.pairs)
    if (pool_.contains(p.id)) throw ConfigError("pool ids overlap the labeled corpus");
}

ALState ActiveLearner::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

Status ActiveLearner::status() const {
  std::lock_guard lock(mu_);
  return {current_iteration_ ? current_iteration_ : state_.iteration, pending_, state_.labeled_ids.size(),
          state_.pool_ids.size(), acquisition::to_string(config_.strategy)};
}

void ActiveLearner::append(const std::string& line) {
  std::ofstream out(journal_path_, std::ios::app | std::ios::binary);
  out << line << "\n";
  out.flush();
  if (!out) throw std::runtime_error("cannot append to journal " + journal_path_.string());
}

void ActiveLearner::apply_label(std::size_t iteration, const OracleLabel& label, IterationRecord& rec) {
  append(json{{"type", "label"}, {"iteration", iteration}, {"id", label.id}, {"target", label.target},
              {"annotator", label.annotator}}
             .dump());
  state_.pool_ids.erase(label.id);
  state_.labeled_ids.insert(label.id);
  state_.labeled.push_back({pool_.entry(label.id).source, label.target, label.id});
  rec.selected.push_back(label.id);
  rec.targets.push_back(label.target);
}

std::optional<ActiveLearner::Pending> ActiveLearner::restore(training::Model& model) {
  const json header = header_json(config_, baseline_.size(), pool_.size());
  if (!std::filesystem::exists(journal_path_)) {
    std::filesystem::create_directories(ctx_.run_dir);
    append(header.dump());
    return std::nullopt;
  }
  const Replayed r = fold(read_journal(journal_path_), baseline_, pool_);
  if (!r.header) throw ConfigError("journal " + journal_path_.string() + " has no header");
  if (*r.header != header) throw ConfigError("journal header does not match the current configuration");
  {
    std::lock_guard lock(mu_);
    state_ = r.state;
  }
  if (!state_.history.empty()) model = load_checkpoint<float>(ctx_.run_dir / state_.history.back().checkpoint);
  if (r.open_iteration == 0) return std::nullopt;
  return Pending{r.open_iteration, r.ranking, r.scores, r.open_record};
}

ALState ActiveLearner::run(training::Model& model, Oracle& oracle) {
  std::optional<Pending> pending = restore(model);
  std::map<std::int64_t, std::pair<std::vector<int>, std::vector<int>>> token_cache;
  auto tokens_of = [&](const corpus::SentencePair& p) -> const std::pair<std::vector<int>, std::vector<int>>& {
    auto it = token_cache.find(p.id);
    if (it == token_cache.end())
      it = token_cache.emplace(p.id, std::make_pair(ctx_.codec.source(p.source), ctx_.codec.target(p.target))).first;
    return it->second;
  };

  while (true) {
    std::size_t iteration;
    std::vector<std::int64_t> ranking;
    std::map<std::int64_t, double> score_of;
    IterationRecord rec;
    {
      std::lock_guard lock(mu_);
      if (!pending && (state_.iteration >= config_.budget || state_.pool_ids.empty())) break;
    }
    if (pending) {
      iteration = pending->iteration;
      ranking = pending->ranking;
      score_of = pending->scores;
      rec = pending->record;
      pending.reset();
    } else {
      iteration = state_.iteration + 1;
      rec.iteration = iteration;
      std::vector<std::int64_t> ids(state_.pool_ids.begin(), state_.pool_ids.end());
      Rng rng(derive_seed(config_.seed, {kSampleStream, iteration}));
      rng.shuffle(ids);
      ids.resize(config_.sample_size(ids.size()));
      std::sort(ids.begin(), ids.end());

      std::vector<acquisition::PoolItem> items;
      items.reserve(ids.size());
      for (auto id : ids) items.push_back({static_cast<std::size_t>(id), ctx_.codec.source(pool_.entry(id).source)});
      const decoding::TransformerStepModel<float> step(model);
      acquisition::ScoreOptions opts{config_.beam, config_.n_best, config_.raw_product, config_.seed, config_.workers};
      const auto scores = acquisition::score_pool(iteration, items, step, config_.strategy, opts);
      for (auto id : acquisition::rank(scores.scores)) ranking.push_back(static_cast<std::int64_t>(id));
      for (const auto& s : scores.scores) score_of[static_cast<std::int64_t>(s.id)] = s.value;

      json values = json::array();
      for (auto id : ranking) {
        const double v = score_of[id];
        values.push_back(std::isfinite(v) ? json(v) : json(nullptr));
      }
      append(json{{"type", "selection"}, {"iteration", iteration}, {"sample_size", ids.size()},
                  {"ranking", ranking}, {"scores", values}, {"failed", scores.failed}}
                 .dump());
    }

    // Work out which candidates are outstanding: the first B of the ranking,
    // extended by one replacement per skip.
    std::size_t cursor = std::min(config_.query_size + rec.skipped.size(), ranking.size());
    std::vector<std::int64_t> outstanding;
    {
      std::set<std::int64_t> resolved(rec.selected.begin(), rec.selected.end());
      resolved.insert(rec.skipped.begin(), rec.skipped.end());
      for (std::size_t i = 0; i < cursor; ++i)
        if (!resolved.count(ranking[i])) outstanding.push_back(ranking[i]);
    }

    const decoding::TransformerStepModel<float> step(model);
    auto make_item = [&](std::int64_t id) {
      OracleItem item{id, pool_.entry(id).source, "", 0.0};
      auto it = score_of.find(id);
      if (it != score_of.end() && std::isfinite(it->second)) item.score = it->second;
      if (oracle.mode() == OracleMode::interactive && ctx_.codec.target_text) {
        item.hypothesis = ctx_.codec.target_text(decoding::greedy(step, ctx_.codec.source(item.source)).content());
      }
      return item;
    };

    OracleRequest request{iteration, {}};
    for (auto id : outstanding) request.items.push_back(make_item(id));
    {
      std::lock_guard lock(mu_);
      current_iteration_ = iteration;
      pending_ = request.items.size();
    }

    OracleSink sink;
    sink.label = [&](const OracleLabel& label) {
      std::lock_guard lock(mu_);
      OracleLabel l = label;
      if (ctx_.clean_label) {
        auto cleaned = ctx_.clean_label(l.target);
        if (!cleaned) throw std::invalid_argument("label for sentence " + std::to_string(l.id) + " rejected");
        l.target = *cleaned;
      }
      if (!state_.pool_ids.count(l.id)) throw std::invalid_argument("sentence " + std::to_string(l.id) + " is not pending");
      apply_label(iteration, l, rec);
      if (pending_ > 0) --pending_;
    };
    sink.skip = [&](std::int64_t id, const std::string& annotator) -> std::optional<OracleItem> {
      std::lock_guard lock(mu_);
      append(json{{"type", "skip"}, {"iteration", iteration}, {"id", id}, {"annotator", annotator}}.dump());
      rec.skipped.push_back(id);
      if (pending_ > 0) --pending_;
      if (cursor < ranking.size()) {
        ++pending_;
        return make_item(ranking[cursor++]);
      }
      return std::nullopt;
    };
    if (!request.items.empty()) oracle.query(request, sink);

    // Update the model on everything labeled so far.
    training::PairData labeled;
    {
      std::lock_guard lock(mu_);
      for (const auto& p : state_.labeled) {
        const auto& t = tokens_of(p);
        labeled.append(t.first, t.second);
      }
    }
    training::TrainConfig tc = ctx_.train;
    tc.seed = derive_seed(config_.seed, {kTuneStream, iteration});
    if (config_.retrain_full) {
      model = training::Model(ctx_.model_config, ctx_.init_seed);
      training::TrainIO io;
      io.dev = ctx_.dev;
      io.detokenize = ctx_.codec.detokenize;
      training::train(model, labeled, tc, io);
    } else {
      tc.restore_best = false;
      tc.validate_every = 0;
      training::fine_tune(model, labeled, tc, config_.fine_tune_epochs);
    }

    const std::string ckpt = "checkpoints/" + iteration_tag(iteration) + ".ckpt";
    save_checkpoint(ctx_.run_dir / ckpt, model.config(), model.params());
    training::Validation v;
    if (ctx_.dev && ctx_.dev->size() > 0) v = training::validate(model, *ctx_.dev, ctx_.codec.detokenize, config_.workers);

    {
      std::lock_guard lock(mu_);
      rec.iteration = iteration;
      rec.dev_bleu = v.bleu;
      rec.dev_ppl = v.ppl;
      rec.checkpoint = ckpt;
      rec.labeled_count = state_.labeled_ids.size();
      rec.pool_count = state_.pool_ids.size();
      append(json{{"type", "iteration_end"}, {"iteration", iteration}, {"checkpoint", ckpt}, {"dev_bleu", v.bleu},
                  {"dev_ppl", v.ppl}, {"labeled", rec.labeled_count}, {"pool", rec.pool_count}}
                 .dump());
      state_.history.push_back(rec);
      state_.iteration = iteration;
      current_iteration_ = 0;
      pending_ = 0;
    }

    if (ctx_.write_score_dumps && !score_of.empty()) {
      std::filesystem::create_directories(ctx_.run_dir / "scores");
      std::ofstream dump(ctx_.run_dir / "scores" / (iteration_tag(iteration) + ".tsv"));
      dump << "iteration\tid\tstrategy\tvalue\tselected\n";
      const std::set<std::int64_t> chosen(rec.selected.begin(), rec.selected.end());
      for (const auto& [id, value] : score_of)
        dump << iteration << '\t' << id << '\t' << acquisition::to_string(config_.strategy) << '\t' << value << '\t'
             << (chosen.count(id) ? 1 : 0) << '\n';
    }
    if (ctx_.on_iteration) ctx_.on_iteration(rec);
  }
  return state();
}

ALState replay(const std::filesystem::path& journal, const corpus::ParallelCorpus& baseline,
               const corpus::MonolingualPool& pool) {
  return fold(read_journal(journal), baseline, pool).state;
}

}  // namespace alnmt::active

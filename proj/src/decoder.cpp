#include "alnmt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "alnmt/bpe.hpp"

namespace alnmt::decoding {

double Hypothesis::total_logprob() const {
  return std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0);
}

std::vector<int> Hypothesis::content() const {
  std::vector<int> out = tokens;
  if (!out.empty() && out.back() == bpe::Vocabulary::kEos) out.pop_back();
  return out;
}

namespace {

template <typename T>
class TransformerState final : public StepState {
 public:
  using Cache = typename Transformer<T>::EncoderCache;
  using State = typename Transformer<T>::DecoderState;

  TransformerState(const Transformer<T>& model, std::shared_ptr<const Cache> cache)
      : model_(model), cache_(std::move(cache)), state_(model.start_state(*cache_)) {
    sync();
  }

  std::unique_ptr<StepState> clone() const override { return std::make_unique<TransformerState>(*this); }
  void advance(int token) override {
    model_.advance(*cache_, state_, token);
    sync();
  }
  std::span<const double> log_probs() const override { return log_probs_; }

 private:
  void sync() { log_probs_.assign(state_.log_probs.begin(), state_.log_probs.end()); }

  const Transformer<T>& model_;
  std::shared_ptr<const Cache> cache_;
  State state_;
  std::vector<double> log_probs_;
};

class ScriptedState final : public StepState {
 public:
  ScriptedState(const ScriptedStepModel::Fn& fn, std::vector<int> src)
      : fn_(&fn), src_(std::move(src)), prefix_{bpe::Vocabulary::kBos} {
    refresh();
  }
  std::unique_ptr<StepState> clone() const override { return std::make_unique<ScriptedState>(*this); }
  void advance(int token) override {
    prefix_.push_back(token);
    refresh();
  }
  std::span<const double> log_probs() const override { return log_probs_; }

 private:
  void refresh() { log_probs_ = (*fn_)(src_, prefix_); }

  const ScriptedStepModel::Fn* fn_;
  std::vector<int> src_;
  std::vector<int> prefix_;
  std::vector<double> log_probs_;
};

void finalize(Hypothesis& h) {
  h.score = h.tokens.empty() ? 0.0 : h.total_logprob() / static_cast<double>(h.tokens.size());
}

struct Live {
  Hypothesis hyp;
  double cumulative = 0;
  std::unique_ptr<StepState> state;
};

struct Candidate {
  double cumulative;
  std::size_t parent;
  int token;
  double logprob;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.cumulative != b.cumulative) return a.cumulative > b.cumulative;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

void sort_by_score(std::vector<Hypothesis>& hyps) {
  std::stable_sort(hyps.begin(), hyps.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

template <typename T>
std::unique_ptr<StepState> TransformerStepModel<T>::start(std::span<const int> src) const {
  const EncodedSentence enc = encode_source(src, model_.config().max_length);
  auto cache = std::make_shared<const typename Transformer<T>::EncoderCache>(model_.prepare_encoder(enc.ids));
  return std::make_unique<TransformerState<T>>(model_, std::move(cache));
}

std::unique_ptr<StepState> ScriptedStepModel::start(std::span<const int> src) const {
  return std::make_unique<ScriptedState>(fn_, std::vector<int>(src.begin(), src.end()));
}

Hypothesis greedy(const StepModel& model, std::span<const int> src) {
  auto state = model.start(src);
  Hypothesis h;
  const std::size_t limit = model.max_length();
  while (h.tokens.size() < limit) {
    const auto lp = state->log_probs();
    int best = -1;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (!std::isfinite(lp[v])) continue;
      if (best < 0 || lp[v] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(v);
    }
    if (best < 0) break;
    h.tokens.push_back(best);
    h.token_logprobs.push_back(lp[static_cast<std::size_t>(best)]);
    if (best == bpe::Vocabulary::kEos) {
      h.finished = true;
      break;
    }
    if (h.tokens.size() < limit) state->advance(best);
  }
  finalize(h);
  return h;
}

NBestList beam_search(const StepModel& model, std::span<const int> src, std::size_t beam,
                      std::size_t n_best) {
  if (beam == 0 || n_best == 0 || n_best > beam)
    throw ContractError("beam_search requires 1 <= n_best <= beam");
  const std::size_t limit = model.max_length();
  std::vector<Live> live;
  live.push_back({Hypothesis{}, 0.0, model.start(src)});
  std::vector<Hypothesis> finished;
  std::vector<Hypothesis> cut;

  std::vector<Candidate> candidates;
  while (!live.empty() && finished.size() < beam) {
    const std::size_t width = beam - finished.size();
    candidates.clear();
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto lp = live[i].state->log_probs();
      std::vector<Candidate> own;
      own.reserve(lp.size());
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (std::isfinite(lp[v])) own.push_back({live[i].cumulative + lp[v], i, static_cast<int>(v), lp[v]});
      }
      const std::size_t keep = std::min(width, own.size());
      std::partial_sort(own.begin(), own.begin() + static_cast<std::ptrdiff_t>(keep), own.end(), better);
      candidates.insert(candidates.end(), own.begin(), own.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    const std::size_t keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);

    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = candidates[c];
      const Live& parent = live[cand.parent];
      Hypothesis h = parent.hyp;
      h.tokens.push_back(cand.token);
      h.token_logprobs.push_back(cand.logprob);
      if (cand.token == bpe::Vocabulary::kEos) {
        h.finished = true;
        finalize(h);
        finished.push_back(std::move(h));
      } else if (h.tokens.size() >= limit) {
        finalize(h);
        cut.push_back(std::move(h));
      } else {
        auto state = parent.state->clone();
        state->advance(cand.token);
        next.push_back({std::move(h), cand.cumulative, std::move(state)});
      }
    }
    live = std::move(next);
  }

  NBestList out;
  sort_by_score(finished);
  sort_by_score(cut);
  for (auto& h : finished) {
    if (out.hypotheses.size() == n_best) break;
    out.hypotheses.push_back(std::move(h));
  }
  for (auto& h : cut) {
    if (out.hypotheses.size() == n_best) break;
    out.hypotheses.push_back(std::move(h));
  }
  sort_by_score(out.hypotheses);
  return out;
}

std::vector<NBestList> beam_search_batch(const StepModel& model, std::span<const std::vector<int>> sources,
                                         std::size_t beam, std::size_t n_best, std::size_t workers) {
  std::vector<NBestList> out(sources.size());
  parallel_for(sources.size(), workers, [&](std::size_t i) {
    out[i] = beam_search(model, sources[i], beam, n_best);
    out[i].source_id = i;
  });
  return out;
}

std::vector<Hypothesis> greedy_batch(const StepModel& model, std::span<const std::vector<int>> sources,
                                     std::size_t workers) {
  std::vector<Hypothesis> out(sources.size());
  parallel_for(sources.size(), workers, [&](std::size_t i) { out[i] = greedy(model, sources[i]); });
  return out;
}

std::string format_nbest_line(std::size_t line_index, const std::string& text, double score) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << line_index << " ||| " << text << " ||| " << score;
  return os.str();
}

template class TransformerStepModel<float>;
template class TransformerStepModel<double>;

}  // namespace alnmt::decoding

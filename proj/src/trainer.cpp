#include "alnmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "alnmt/corpus.hpp"
#include "alnmt/decoder.hpp"
#include "alnmt/optim.hpp"
#include "alnmt/rng.hpp"

namespace alnmt::training {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid training config: " + m); };
  if (!(plateau_factor > 0 && plateau_factor < 1)) fail("plateau_factor must be in (0, 1)");
  if (!(min_lr < lr0)) fail("min_lr must be below lr0");
  if (lr0 <= 0) fail("lr0 must be positive");
  if (batch_tokens == 0) fail("batch_tokens must be positive");
  if (warmup_steps < 0) fail("warmup_steps must be non-negative");
  if (label_smoothing < 0 || label_smoothing >= 1) fail("label_smoothing must be in [0, 1)");
  if (dropout < 0 || dropout >= 1) fail("dropout must be in [0, 1)");
  if (keep_best == 0) fail("keep_best must be positive");
}

double lr_schedule(std::int64_t t, const TrainConfig& config, std::size_t plateau_events) {
  double lr;
  if (config.warmup_steps > 0 && t < config.warmup_steps) {
    lr = config.lr0 * static_cast<double>(t) / static_cast<double>(config.warmup_steps);
  } else {
    lr = config.lr0 * std::pow(config.plateau_factor, static_cast<double>(plateau_events));
  }
  return std::max(lr, config.min_lr);
}

std::vector<std::vector<std::size_t>> make_batches(const PairData& data, std::size_t token_budget,
                                                   std::uint64_t seed, std::size_t max_length) {
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  auto width = [&](std::size_t i) {
    return std::min(std::max(data.sources[i].size(), data.targets[i].size()), max_length - 1) + 1;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return width(a) < width(b); });

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t longest = 0;
  for (std::size_t i : order) {
    const std::size_t w = std::max(longest, width(i));
    if (!current.empty() && (current.size() + 1) * w > token_budget) {
      batches.push_back(std::move(current));
      current.clear();
      longest = 0;
    }
    current.push_back(i);
    longest = std::max(longest, width(i));
  }
  if (!current.empty()) batches.push_back(std::move(current));
  rng.shuffle(batches);
  return batches;
}

std::string to_json_line(const LogRecord& r) {
  json j;
  j["step"] = r.step;
  j["train_loss"] = r.train_loss;
  j["lr"] = r.lr;
  j["dev_ppl"] = r.dev_ppl;
  j["dev_bleu"] = r.dev_bleu;
  return j.dump();
}

std::vector<std::string> ids_as_words(const std::vector<int>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(std::to_string(i));
  return out;
}

Validation validate(const Model& model, const PairData& dev, const Detokenizer& detok, std::size_t workers) {
  Validation v;
  if (dev.size() == 0) return v;
  v.ppl = metrics::perplexity(model, dev.sources, dev.targets).perplexity;
  const decoding::TransformerStepModel<float> step(model);
  const auto hyps = decoding::greedy_batch(step, dev.sources, workers);
  const Detokenizer& to_words = detok ? detok : Detokenizer(ids_as_words);
  std::vector<metrics::Tokens> cands;
  std::vector<metrics::Tokens> refs;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    cands.push_back(to_words(hyps[i].content()));
    refs.push_back(to_words(dev.targets[i]));
  }
  v.bleu = metrics::corpus_bleu(cands, refs).bleu;
  return v;
}

namespace {

std::vector<Tensor<float>> snapshot(const Model& model) {
  std::vector<Tensor<float>> out;
  for (const auto* p : model.params().all()) out.push_back(p->value);
  return out;
}

void restore(Model& model, const std::vector<Tensor<float>>& values) {
  auto params = model.params().all();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::filesystem::path dump_state(const TrainIO& io, const TrainState& state, double loss,
                                 const std::vector<std::size_t>& batch, const Model& model) {
  json j;
  j["step"] = state.step;
  j["lr"] = state.lr;
  j["loss"] = std::isfinite(loss) ? json(loss) : json(std::to_string(loss));
  j["batch"] = batch;
  j["best_ppl"] = state.best_ppl;
  json params = json::array();
  for (const auto* p : model.params().all()) {
    std::size_t bad_values = 0;
    std::size_t bad_grads = 0;
    double sq = 0;
    for (float v : p->value.values()) {
      if (!std::isfinite(v)) ++bad_values;
      else sq += static_cast<double>(v) * v;
    }
    for (float g : p->grad.values())
      if (!std::isfinite(g)) ++bad_grads;
    params.push_back({{"name", p->name}, {"norm", std::sqrt(sq)}, {"non_finite_values", bad_values},
                      {"non_finite_grads", bad_grads}});
  }
  j["parameters"] = params;
  std::filesystem::path dir = io.dump_dir.empty() ? std::filesystem::temp_directory_path() : io.dump_dir;
  std::filesystem::create_directories(dir);
  const auto path = dir / ("divergence-step" + std::to_string(state.step) + ".json");
  std::ofstream(path) << j.dump(2) << "\n";
  return path;
}

TrainResult run(Model& model, const PairData& data, const TrainConfig& config, const TrainIO& io,
                std::size_t epochs) {
  config.validate();
  TrainResult result;
  TrainState& st = result.state;
  const std::size_t max_len = model.config().max_length;
  Adam<float> adam({config.beta1, config.beta2, config.adam_eps});
  auto params = model.params().all();
  model.set_dropout(config.dropout);
  Rng dropout_rng(derive_seed(config.seed, {0x64726f70ULL}));

  std::ofstream log;
  if (!io.log_path.empty()) {
    if (io.log_path.has_parent_path()) std::filesystem::create_directories(io.log_path.parent_path());
    log.open(io.log_path, std::ios::app);
  }
  if (!io.checkpoint_dir.empty()) std::filesystem::create_directories(io.checkpoint_dir);

  std::vector<Tensor<float>> best_values;
  double loss_sum = 0;
  std::size_t loss_batches = 0;
  std::int64_t last_validated = -1;

  auto do_validate = [&]() {
    if (io.dev == nullptr || io.dev->size() == 0) return;
    const Validation v = validate(model, *io.dev, io.detokenize, config.decode_workers);
    LogRecord rec{st.step, loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0, st.lr, v.ppl, v.bleu};
    loss_sum = 0;
    loss_batches = 0;
    last_validated = st.step;
    result.log.push_back(rec);
    if (log.is_open()) log << to_json_line(rec) << "\n" << std::flush;
    st.ppl_history.push_back(v.ppl);

    const bool improved = st.best_ppl == 0 || v.ppl < st.best_ppl * (1.0 - config.plateau_tolerance);
    if (improved) {
      st.best_ppl = v.ppl;
      st.best_bleu = v.bleu;
      st.best_step = st.step;
      st.bad_validations = 0;
      best_values = snapshot(model);
      if (!io.checkpoint_dir.empty()) {
        const auto path = io.checkpoint_dir / ("best-step" + std::to_string(st.step) + ".ckpt");
        save_checkpoint(path, model.config(), model.params());
        st.checkpoints.push_back({path, v.ppl, st.step});
        while (st.checkpoints.size() > config.keep_best) {
          std::filesystem::remove(st.checkpoints.front().path);
          st.checkpoints.erase(st.checkpoints.begin());
        }
        result.best_checkpoint = path;
      }
    } else if (++st.bad_validations >= config.patience) {
      st.bad_validations = 0;
      if (lr_schedule(st.step + 1, config, st.plateau_events) <= config.min_lr) {
        result.stopped_early = true;
      } else {
        ++st.plateau_events;
      }
    }
  };

  for (std::size_t epoch = 0; epoch < epochs && !result.stopped_early; ++epoch) {
    const auto batches = make_batches(data, config.batch_tokens, derive_seed(config.seed, {0x65706f63ULL, epoch}), max_len);
    for (const auto& batch : batches) {
      ++st.step;
      st.lr = lr_schedule(st.step, config, st.plateau_events);
      std::vector<std::vector<int>> src;
      std::vector<std::vector<int>> trg;
      src.reserve(batch.size());
      trg.reserve(batch.size());
      for (std::size_t i : batch) {
        src.push_back(data.sources[i]);
        trg.push_back(data.targets[i]);
      }
      model.params().zero_grad();
      const double loss = model.accumulate_gradients(src, trg, config.label_smoothing, &dropout_rng);
      if (!std::isfinite(loss)) {
        const auto path = dump_state(io, st, loss, batch, model);
        throw DivergenceError("non-finite training loss at step " + std::to_string(st.step) +
                                  "; state dumped to " + path.string(),
                              path);
      }
      adam.step(params, st.step, st.lr);
      loss_sum += loss;
      ++loss_batches;
      if (config.validate_every > 0 && st.step % static_cast<std::int64_t>(config.validate_every) == 0) {
        do_validate();
        if (result.stopped_early) break;
      }
    }
    ++result.epochs_run;
  }
  if (st.step > 0 && last_validated != st.step && !result.stopped_early) do_validate();
  if (config.restore_best && !best_values.empty()) restore(model, best_values);
  model.set_dropout(0.0);
  return result;
}

}  // namespace

TrainResult train(Model& model, const PairData& data, const TrainConfig& config, const TrainIO& io) {
  return run(model, data, config, io, config.epochs);
}

TrainResult fine_tune(Model& model, const PairData& data, TrainConfig config, std::size_t epochs,
                      const TrainIO& io) {
  if (data.size() == 0 || epochs == 0) return {};
  return run(model, data, config, io, epochs);
}

TrainResult fine_tune_checkpoint(const std::filesystem::path& checkpoint, const ModelConfig& expected,
                                 const PairData& data, const TrainConfig& config, std::size_t epochs,
                                 const std::filesystem::path& output, const TrainIO& io) {
  const ModelConfig found = read_checkpoint_config(checkpoint);
  if (!(found == expected)) throw ConfigError("checkpoint " + checkpoint.string() + " does not match the model config");
  Model model = load_checkpoint<float>(checkpoint);
  TrainResult r = fine_tune(model, data, config, epochs, io);
  save_checkpoint(output, model.config(), model.params());
  return r;
}

}  // namespace alnmt::training

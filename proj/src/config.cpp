#include "alnmt/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "alnmt/corpus.hpp"

namespace alnmt::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::map<std::string, std::string> default_map() {
  std::map<std::string, std::string> m;
  for (const auto& k : known_keys()) m[k.key] = k.default_value;
  return m;
}

}  // namespace

const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      {"run.seed", "1", "root seed; every random stream is derived from it"},

      {"data.toy_task", "reverse", "synthetic task (reverse, copy) or `none` to read data.source_file/target_file"},
      {"data.toy_pairs", "2600", "number of distinct synthetic pairs"},
      {"data.toy_alphabet", "20", "letters used by the synthetic task"},
      {"data.toy_min_length", "2", "shortest synthetic sentence"},
      {"data.toy_max_length", "12", "longest synthetic sentence"},
      {"data.toy_short_mass", "0.5", "share of synthetic sentences drawn from the shorter half of the length range"},
      {"data.source_file", "", "raw source-language lines (one sentence per line)"},
      {"data.target_file", "", "raw target-language lines aligned with data.source_file"},
      {"data.source_script", "ascii", "allowed source characters: ascii, devanagari+latin, or hex ranges like 0020-007E"},
      {"data.target_script", "ascii", "allowed target characters"},
      {"data.dev_size", "300", "pairs held out for validation"},
      {"data.test_size", "300", "pairs held out for the final test"},
      {"data.baseline_fraction", "0.7", "share of the training split labeled for the baseline; the rest is the pool"},

      {"bpe.source_merges", "16000", "BPE merge operations for the source language"},
      {"bpe.target_merges", "16000", "BPE merge operations for the target language"},

      {"model.d", "64", "model and embedding width"},
      {"model.heads", "4", "attention heads (d must be divisible by heads)"},
      {"model.layers", "2", "encoder and decoder depth"},
      {"model.ffn_width", "256", "feed-forward inner width"},
      {"model.max_length", "60", "maximum tokens per side, eos/bos included"},
      {"model.scale_attention", "true", "divide attention logits by sqrt(d/heads)"},
      {"model.tie_weights", "true", "share the target embedding with the output projection"},
      {"model.positional", "true", "add sinusoidal position encodings"},

      {"train.on", "full", "training data for `train`: full (all training pairs) or baseline (labeled share only)"},
      {"train.lr0", "0.0003", "peak learning rate"},
      {"train.beta1", "0.9", "Adam beta1"},
      {"train.beta2", "0.98", "Adam beta2"},
      {"train.adam_eps", "1e-8", "Adam epsilon"},
      {"train.warmup_steps", "1000", "linear warmup steps"},
      {"train.min_lr", "1e-8", "learning-rate floor; a plateau at the floor stops training"},
      {"train.plateau_factor", "0.7", "learning-rate decay factor on a plateau"},
      {"train.patience", "5", "validations without dev perplexity improvement before decaying"},
      {"train.plateau_tolerance", "1e-4", "relative perplexity improvement that counts as better"},
      {"train.epochs", "20", "passes over the training data"},
      {"train.batch_tokens", "512", "padded tokens per mini-batch"},
      {"train.validate_every", "1000", "mini-batches between validations (0 = end of training only)"},
      {"train.keep_best", "3", "best checkpoints kept on disk"},
      {"train.label_smoothing", "0.1", "label smoothing epsilon"},
      {"train.dropout", "0.3", "dropout probability"},
      {"train.decode_workers", "1", "threads for greedy validation decoding"},

      {"al.strategy", "least_confidence", "acquisition function: least_confidence, margin or random"},
      {"al.pool_sample_fraction", "0.06", "share of the remaining pool scored each iteration"},
      {"al.query_size", "10000", "sentences labeled per iteration (B)"},
      {"al.budget", "20", "oracle query iterations"},
      {"al.fine_tune_epochs", "2", "fine-tuning epochs over the labeled set per iteration"},
      {"al.fine_tune_warmup_steps", "0", "warmup steps for each fine-tuning round"},
      {"al.oracle", "simulated", "simulated (withheld references) or interactive (annotation service)"},
      {"al.beam", "5", "beam width for N-best scoring"},
      {"al.n_best", "2", "hypotheses kept per sentence (margin needs 2)"},
      {"al.raw_product", "false", "use the unnormalized sequence probability instead of the per-token geometric mean"},
      {"al.retrain_full", "false", "retrain from scratch on the labeled set each iteration instead of fine-tuning"},
      {"al.workers", "1", "threads for pool scoring"},

      {"decode.beam", "5", "beam width for `translate` and `test`"},
      {"decode.n_best", "1", "hypotheses printed per sentence by `translate --nbest`"},

      {"service.host", "127.0.0.1", "annotation service bind address"},
      {"service.port", "8080", "annotation service port (0 = any free port)"},
      {"service.lease_seconds", "600", "seconds before an unanswered lease expires"},
      {"service.timeout_seconds", "0", "give up waiting for a batch after this many seconds (0 = wait forever)"},
  };
  return keys;
}

Config::Config() : values_(default_map()) {}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second = value;
}

void Config::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

void Config::parse(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    if (body.find('=') == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key = value");
    try {
      assign(body);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

void Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  parse(ss.str(), path.string());
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

std::int64_t Config::integer(const std::string& key) const {
  const std::string& v = get(key);
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + " must be an integer, got '" + v + "'");
  return out;
}

std::size_t Config::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw ConfigError(key + " must not be negative");
  return static_cast<std::size_t>(v);
}

double Config::real(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(out)) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError(key + " must be a number, got '" + v + "'");
  }
}

bool Config::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + " must be true or false, got '" + v + "'");
}

std::string Config::snapshot() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

ModelConfig model_config(const Config& c, std::size_t src_vocab, std::size_t trg_vocab) {
  ModelConfig m;
  m.d = c.count("model.d");
  m.heads = c.count("model.heads");
  m.layers = c.count("model.layers");
  m.ffn_width = c.count("model.ffn_width");
  m.max_length = c.count("model.max_length");
  m.scale_attention = c.flag("model.scale_attention");
  m.tie_weights = c.flag("model.tie_weights");
  m.positional = c.flag("model.positional");
  m.src_vocab = src_vocab;
  m.trg_vocab = trg_vocab;
  try {
    m.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
  return m;
}

training::TrainConfig train_config(const Config& c) {
  training::TrainConfig t;
  t.lr0 = c.real("train.lr0");
  t.beta1 = c.real("train.beta1");
  t.beta2 = c.real("train.beta2");
  t.adam_eps = c.real("train.adam_eps");
  t.warmup_steps = c.integer("train.warmup_steps");
  t.min_lr = c.real("train.min_lr");
  t.plateau_factor = c.real("train.plateau_factor");
  t.patience = c.count("train.patience");
  t.plateau_tolerance = c.real("train.plateau_tolerance");
  t.epochs = c.count("train.epochs");
  t.batch_tokens = c.count("train.batch_tokens");
  t.validate_every = c.count("train.validate_every");
  t.keep_best = c.count("train.keep_best");
  t.label_smoothing = c.real("train.label_smoothing");
  t.dropout = c.real("train.dropout");
  t.decode_workers = c.count("train.decode_workers");
  t.seed = static_cast<std::uint64_t>(c.integer("run.seed"));
  t.validate();
  const std::string& on = c.get("train.on");
  if (on != "full" && on != "baseline") throw ConfigError("train.on must be full or baseline");
  return t;
}

training::TrainConfig fine_tune_config(const Config& c) {
  training::TrainConfig t = train_config(c);
  t.warmup_steps = c.integer("al.fine_tune_warmup_steps");
  t.validate();
  return t;
}

active::ALConfig al_config(const Config& c) {
  active::ALConfig a;
  const auto strategy = acquisition::parse_strategy(c.get("al.strategy"));
  if (!strategy) throw ConfigError("unknown al.strategy '" + c.get("al.strategy") + "'");
  a.strategy = *strategy;
  a.pool_sample_fraction = c.real("al.pool_sample_fraction");
  a.query_size = c.count("al.query_size");
  a.budget = c.count("al.budget");
  a.fine_tune_epochs = c.count("al.fine_tune_epochs");
  const auto oracle = active::parse_oracle_mode(c.get("al.oracle"));
  if (!oracle) throw ConfigError("al.oracle must be simulated or interactive");
  a.oracle = *oracle;
  a.seed = static_cast<std::uint64_t>(c.integer("run.seed"));
  a.beam = c.count("al.beam");
  a.n_best = c.count("al.n_best");
  a.raw_product = c.flag("al.raw_product");
  a.retrain_full = c.flag("al.retrain_full");
  a.workers = c.count("al.workers");
  a.validate();
  return a;
}

void validate(const Config& c) {
  train_config(c);
  fine_tune_config(c);
  al_config(c);
  model_config(c, 8, 8);
  for (const char* key : {"data.toy_pairs", "data.toy_alphabet", "data.toy_min_length", "data.toy_max_length",
                          "data.dev_size", "data.test_size", "bpe.source_merges", "bpe.target_merges", "decode.beam",
                          "decode.n_best", "service.port", "service.lease_seconds", "service.timeout_seconds"})
    c.count(key);
  for (const char* key : {"data.toy_short_mass", "data.baseline_fraction"}) c.real(key);
}

std::string reference_table() {
  std::string out = "| key | default | meaning |\n|---|---|---|\n";
  for (const auto& k : known_keys()) {
    out += "| `" + k.key + "` | `" + (k.default_value.empty() ? "\"\"" : k.default_value) + "` | " + k.help + " |\n";
  }
  return out;
}

}  // namespace alnmt::config

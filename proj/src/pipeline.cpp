#include "alnmt/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "alnmt/annotation_service.hpp"
#include "alnmt/decoder.hpp"
#include "alnmt/rng.hpp"
#include "alnmt/toy.hpp"
#include "json.hpp"

namespace alnmt::pipeline {

using nlohmann::json;

namespace {

constexpr std::uint64_t kToyStream = 0x746f79;
constexpr std::uint64_t kSplitStream = 0x73706c74;
constexpr std::uint64_t kPartitionStream = 0x70617274;
constexpr std::uint64_t kInitStream = 0x696e6974;

std::uint64_t root_seed(const config::Config& c) { return static_cast<std::uint64_t>(c.integer("run.seed")); }

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw std::runtime_error(path.string() + " not found; " + hint);
}

std::optional<std::string> cleaned(const std::string& raw, const corpus::CleanConfig& cfg) {
  auto r = corpus::clean(raw, cfg);
  if (!r.accepted()) return std::nullopt;
  return r.text;
}

}  // namespace

RunLock::RunLock(const fs::path& run_dir) : path_(RunLayout{run_dir}.lock()) {
  fs::create_directories(run_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw std::runtime_error("run directory " + run_dir.string() + " is in use (remove " + path_.string() +
                               " if no other process owns it)");
    throw std::runtime_error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

config::Config resolve_config(const fs::path& run_dir, const std::optional<fs::path>& base_run,
                              const std::optional<fs::path>& file, const std::vector<std::string>& assignments) {
  config::Config c;
  if (base_run) {
    const auto snap = RunLayout{*base_run}.snapshot();
    if (fs::exists(snap)) c.load(snap);
  }
  const auto own = RunLayout{run_dir}.snapshot();
  if (fs::exists(own)) c.load(own);
  if (file) c.load(*file);
  for (const auto& a : assignments) c.assign(a);
  return c;
}

void write_snapshot(const fs::path& run_dir, const config::Config& c) {
  write_text(RunLayout{run_dir}.snapshot(), c.snapshot());
}

corpus::CleanConfig source_clean(const config::Config& c) {
  corpus::CleanConfig cfg;
  cfg.script = corpus::ScriptSet::parse(c.get("data.source_script"));
  return cfg;
}

corpus::CleanConfig target_clean(const config::Config& c) {
  corpus::CleanConfig cfg;
  cfg.script = corpus::ScriptSet::parse(c.get("data.target_script"));
  return cfg;
}

PrepareSummary prepare(const fs::path& run_dir, const config::Config& c) {
  std::vector<std::string> src, trg;
  const std::string task = c.get("data.toy_task");
  if (task == "reverse" || task == "copy") {
    toy::ToyConfig tc;
    tc.task = task == "copy" ? toy::Task::copy : toy::Task::reverse;
    tc.alphabet = c.count("data.toy_alphabet");
    tc.min_length = c.count("data.toy_min_length");
    tc.max_length = c.count("data.toy_max_length");
    tc.short_mass = c.real("data.toy_short_mass");
    tc.seed = derive_seed(root_seed(c), {kToyStream});
    std::vector<toy::ToyPair> pairs;
    try {
      pairs = toy::generate(tc, c.count("data.toy_pairs"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    for (auto& p : pairs) {
      src.push_back(std::move(p.source));
      trg.push_back(std::move(p.target));
    }
  } else if (task == "none") {
    if (c.get("data.source_file").empty() || c.get("data.target_file").empty())
      throw ConfigError("data.source_file and data.target_file are required when data.toy_task = none");
    src = corpus::read_lines(c.get("data.source_file"));
    trg = corpus::read_lines(c.get("data.target_file"));
  } else {
    throw ConfigError("data.toy_task must be reverse, copy or none");
  }
  if (src.size() != trg.size())
    throw std::runtime_error("source and target files have different line counts (" + std::to_string(src.size()) +
                             " vs " + std::to_string(trg.size()) + ")");

  auto ingested = corpus::ingest(src, trg, source_clean(c), target_clean(c));
  const double fraction = c.real("data.baseline_fraction");
  if (!(fraction > 0 && fraction < 1)) throw ConfigError("data.baseline_fraction must be in (0, 1)");
  auto parts = corpus::split(ingested.corpus, c.count("data.dev_size"), c.count("data.test_size"),
                             derive_seed(root_seed(c), {kSplitStream}));
  corpus::write_split(RunLayout{run_dir}.corpus_prefix().string(), parts);

  PrepareSummary s;
  s.stats = ingested.stats;
  s.train = parts.train.size();
  s.dev = parts.dev.size();
  s.test = parts.test.size();
  s.baseline = corpus::baseline_count(s.train, fraction);
  s.pool = s.train - s.baseline;
  return s;
}

corpus::ParallelCorpus load_split(const fs::path& run_dir, corpus::SplitTag tag) {
  const auto prefix = RunLayout{run_dir}.corpus_prefix();
  require(prefix.string() + "." + corpus::to_string(tag) + ".src", "run `alnmt prepare` first");
  return corpus::read_parallel(prefix.string(), corpus::to_string(tag), tag);
}

corpus::AlPartition load_partition(const fs::path& run_dir, const config::Config& c) {
  return corpus::partition_for_al(load_split(run_dir, corpus::SplitTag::train), c.real("data.baseline_fraction"),
                                  derive_seed(root_seed(c), {kPartitionStream}));
}

void learn_bpe(const fs::path& run_dir, const config::Config& c) {
  const auto train = load_split(run_dir, corpus::SplitTag::train);
  const auto dir = RunLayout{run_dir}.bpe_dir();
  fs::create_directories(dir);
  auto side = [&](const std::vector<std::string>& lines, std::size_t merges, const std::string& name) {
    const auto model = bpe::learn_bpe(lines, merges);
    model.save(dir / (name + ".codes"));
    std::vector<std::vector<std::string>> tokenized;
    tokenized.reserve(lines.size());
    for (const auto& l : lines) tokenized.push_back(bpe::apply_bpe(model, l));
    bpe::Vocabulary::build(tokenized).save(dir / (name + ".vocab"));
  };
  side(train.sources(), c.count("bpe.source_merges"), "source");
  side(train.targets(), c.count("bpe.target_merges"), "target");
}

TextPipeline::TextPipeline(const fs::path& run_dir, const config::Config& c)
    : src_clean_(source_clean(c)), trg_clean_(target_clean(c)) {
  const auto dir = RunLayout{run_dir}.bpe_dir();
  require(dir / "source.vocab", "run `alnmt learn-bpe` first");
  src_bpe_ = bpe::BpeModel::load(dir / "source.codes");
  trg_bpe_ = bpe::BpeModel::load(dir / "target.codes");
  src_vocab_ = bpe::Vocabulary::load(dir / "source.vocab");
  trg_vocab_ = bpe::Vocabulary::load(dir / "target.vocab");
}

std::vector<int> TextPipeline::source_ids(const std::string& text) const {
  return src_vocab_.encode(bpe::apply_bpe(src_bpe_, text));
}

std::vector<int> TextPipeline::target_ids(const std::string& text) const {
  return trg_vocab_.encode(bpe::apply_bpe(trg_bpe_, text));
}

std::string TextPipeline::target_text(const std::vector<int>& ids) const {
  return bpe::detokenize(trg_vocab_.decode(ids));
}

std::vector<std::string> TextPipeline::target_words(const std::vector<int>& ids) const {
  return bpe::split_words(target_text(ids));
}

std::optional<std::string> TextPipeline::clean_source(const std::string& raw) const { return cleaned(raw, src_clean_); }
std::optional<std::string> TextPipeline::clean_target(const std::string& raw) const { return cleaned(raw, trg_clean_); }

training::PairData TextPipeline::pairs(const corpus::ParallelCorpus& corpus) const {
  training::PairData out;
  for (const auto& p : corpus.pairs) out.append(source_ids(p.source), target_ids(p.target));
  return out;
}

active::TextCodec TextPipeline::codec() const {
  active::TextCodec codec;
  codec.source = [this](const std::string& s) { return source_ids(s); };
  codec.target = [this](const std::string& s) { return target_ids(s); };
  codec.detokenize = [this](const std::vector<int>& ids) { return target_words(ids); };
  codec.target_text = [this](const std::vector<int>& ids) { return target_text(ids); };
  return codec;
}

std::string variant_name(const config::Config& c, bool active_learning) {
  if (!active_learning) return c.get("train.on") == "full" ? "Fully Trained" : "Baseline";
  switch (config::al_config(c).strategy) {
    case acquisition::Strategy::least_confidence:
      return "Least Confidence";
    case acquisition::Strategy::margin:
      return "Margin";
    case acquisition::Strategy::random:
      return "Random";
  }
  return "Unknown";
}

training::TrainResult train(const fs::path& run_dir, const config::Config& c) {
  const RunLayout layout{run_dir};
  const TextPipeline text(run_dir, c);
  const auto tc = config::train_config(c);
  const auto corpus = c.get("train.on") == "full" ? load_split(run_dir, corpus::SplitTag::train)
                                                   : load_partition(run_dir, c).baseline;
  const auto data = text.pairs(corpus);
  const auto dev = text.pairs(load_split(run_dir, corpus::SplitTag::dev));
  const auto mc = config::model_config(c, text.source_vocab(), text.target_vocab());

  fs::remove(layout.train_log());
  fs::remove_all(layout.checkpoints());
  training::Model model(mc, derive_seed(root_seed(c), {kInitStream}));
  training::TrainIO io;
  io.dev = &dev;
  io.detokenize = [&text](const std::vector<int>& ids) { return text.target_words(ids); };
  io.checkpoint_dir = layout.checkpoints();
  io.log_path = layout.train_log();
  io.dump_dir = run_dir / "dumps";
  auto result = training::train(model, data, tc, io);
  save_checkpoint(layout.model(), model.config(), model.params());
  write_text(layout.variant(), variant_name(c, false) + "\n");
  return result;
}

TestReport test(const fs::path& run_dir, const config::Config& c, const std::optional<fs::path>& model_path) {
  const RunLayout layout{run_dir};
  const fs::path path = model_path.value_or(layout.model());
  require(path, "train a model first");
  const TextPipeline text(run_dir, c);
  const auto model = load_checkpoint<float>(path);
  const auto corpus = load_split(run_dir, corpus::SplitTag::test);
  const auto data = text.pairs(corpus);

  decoding::TransformerStepModel<float> step(model);
  const auto hyps = decoding::greedy_batch(step, data.sources, c.count("train.decode_workers"));
  std::vector<metrics::Tokens> candidates, references;
  std::string hyp_text;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    candidates.push_back(text.target_words(hyps[i].content()));
    references.push_back(bpe::split_words(corpus.pairs[i].target));
    if (candidates.back() == references.back()) ++exact;
    hyp_text += text.target_text(hyps[i].content()) + "\n";
  }
  TestReport r;
  r.variant = fs::exists(layout.variant()) ? read_text(layout.variant()) : variant_name(c, fs::exists(layout.journal()));
  while (!r.variant.empty() && (r.variant.back() == '\n' || r.variant.back() == '\r')) r.variant.pop_back();
  r.bleu = metrics::corpus_bleu(candidates, references);
  r.ppl = metrics::perplexity(model, data.sources, data.targets);
  r.sentences = data.size();
  r.exact_match = data.size() == 0 ? 0.0 : static_cast<double>(exact) / static_cast<double>(data.size());

  json j = {{"variant", r.variant},
            {"sentences", r.sentences},
            {"bleu", r.bleu.bleu},
            {"bleu_percent", r.bleu.percent()},
            {"precisions", r.bleu.precisions},
            {"brevity_penalty", r.bleu.brevity_penalty},
            {"candidate_length", r.bleu.candidate_length},
            {"reference_length", r.bleu.reference_length},
            {"perplexity", r.ppl.perplexity},
            {"cross_entropy_bits", r.ppl.cross_entropy},
            {"exact_match", r.exact_match},
            {"model", path.lexically_relative(run_dir).string()}};
  write_text(layout.test_report(), j.dump(2) + "\n");
  write_text(run_dir / "test.hyp", hyp_text);
  return r;
}

void translate(const fs::path& run_dir, const config::Config& c, std::istream& in, std::ostream& out,
               std::size_t nbest, const std::optional<fs::path>& model_path) {
  const RunLayout layout{run_dir};
  const fs::path path = model_path.value_or(layout.model());
  require(path, "train a model first");
  const TextPipeline text(run_dir, c);
  const auto model = load_checkpoint<float>(path);
  decoding::TransformerStepModel<float> step(model);
  const std::size_t beam = std::max<std::size_t>(c.count("decode.beam"), std::max<std::size_t>(nbest, 1));
  if (beam == 0) throw ConfigError("decode.beam must be at least 1");

  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    const auto src = text.clean_source(line);
    if (!src) std::cerr << "warning: line " << index << " rejected by the source cleaner; emitting an empty translation\n";
    const auto ids = src ? text.source_ids(*src) : std::vector<int>{};
    const auto list = decoding::beam_search(step, ids, beam, std::max<std::size_t>(nbest, 1));
    if (nbest == 0) {
      out << text.target_text(list.best().content()) << '\n';
    } else {
      for (const auto& h : list.hypotheses)
        out << decoding::format_nbest_line(index, text.target_text(h.content()), h.score) << '\n';
    }
    out.flush();
    ++index;
  }
}

void adopt_baseline(const fs::path& run_dir, const fs::path& base_run) {
  const RunLayout base{base_run}, run{run_dir};
  require(base.model(), "train the baseline run first");
  require(base.bpe_dir(), "run `alnmt learn-bpe` in the baseline run first");
  fs::create_directories(run_dir);
  const auto opts = fs::copy_options::recursive | fs::copy_options::overwrite_existing;
  fs::copy(base.corpus_prefix().parent_path(), run.corpus_prefix().parent_path(), opts);
  fs::copy(base.bpe_dir(), run.bpe_dir(), opts);
  fs::copy_file(base.model(), run.baseline_model(), fs::copy_options::overwrite_existing);
}

active::ALState active_learn(const fs::path& run_dir, const config::Config& c, std::ostream& log) {
  const RunLayout layout{run_dir};
  const TextPipeline text(run_dir, c);
  const auto al = config::al_config(c);
  const auto partition = load_partition(run_dir, c);
  const auto dev = text.pairs(load_split(run_dir, corpus::SplitTag::dev));

  if (!fs::exists(layout.baseline_model())) {
    if (fs::exists(layout.model()) && !fs::exists(layout.journal())) {
      fs::copy_file(layout.model(), layout.baseline_model());
    } else {
      throw std::runtime_error(layout.baseline_model().string() +
                               " not found; train with train.on=baseline or pass --from BASELINE_RUN");
    }
  }

  active::RunContext ctx;
  ctx.run_dir = run_dir;
  ctx.codec = text.codec();
  ctx.dev = &dev;
  ctx.train = config::fine_tune_config(c);
  ctx.model_config = config::model_config(c, text.source_vocab(), text.target_vocab());
  ctx.init_seed = derive_seed(root_seed(c), {kInitStream});
  ctx.clean_label = [&text](const std::string& s) { return text.clean_target(s); };
  ctx.on_iteration = [&log](const active::IterationRecord& r) {
    log << "iteration " << r.iteration << ": labeled " << r.labeled_count << ", pool " << r.pool_count
        << ", dev BLEU " << fixed(100 * r.dev_bleu, 2) << ", dev PPL " << fixed(r.dev_ppl, 3) << std::endl;
  };

  auto model = load_checkpoint<float>(layout.baseline_model());
  if (!(model.config() == ctx.model_config))
    throw ConfigError("baseline checkpoint does not match the model.* settings of this run");

  active::ActiveLearner learner(al, ctx, partition.baseline, partition.pool);
  active::ALState state;
  if (al.oracle == active::OracleMode::simulated) {
    active::SimulatedOracle oracle(partition.pool);
    state = learner.run(model, oracle);
  } else {
    service::ServiceOptions opts;
    opts.host = c.get("service.host");
    opts.port = static_cast<int>(c.count("service.port"));
    opts.lease = std::chrono::seconds(c.count("service.lease_seconds"));
    std::optional<std::chrono::milliseconds> timeout;
    if (c.count("service.timeout_seconds") > 0) timeout = std::chrono::seconds(c.count("service.timeout_seconds"));
    service::AnnotationQueue queue(opts.lease);
    service::HttpServer server(queue, [&learner] { return learner.status(); }, opts);
    const int port = server.start();
    log << "annotation service listening on http://" << opts.host << ":" << port << std::endl;
    service::InteractiveOracle oracle(queue, timeout);
    state = learner.run(model, oracle);
    server.stop();
  }
  save_checkpoint(layout.model(), model.config(), model.params());
  write_text(layout.variant(), variant_name(c, true) + "\n");
  return state;
}

void report(const std::vector<fs::path>& runs, const fs::path& out_dir, std::ostream& out, std::ostream& warn) {
  fs::create_directories(out_dir);
  struct Column {
    std::string variant;
    std::string run;
    double bleu = 0;
    double ppl = 0;
  };
  std::vector<Column> columns;
  for (const auto& run : runs) {
    const RunLayout layout{run};
    std::string name = run.filename().string();
    if (name.empty()) name = run.parent_path().filename().string();
    bool any = false;
    if (fs::exists(layout.train_log())) {
      any = true;
      std::string tsv = "step\ttrain_loss\tlr\tdev_ppl\tdev_bleu\n";
      std::istringstream in(read_text(layout.train_log()));
      std::string line;
      while (std::getline(in, line)) {
        const json r = json::parse(line, nullptr, false);
        if (r.is_discarded()) {
          warn << "warning: skipping malformed line in " << layout.train_log().string() << "\n";
          continue;
        }
        tsv += std::to_string(r.at("step").get<std::int64_t>()) + "\t" + fixed(r.at("train_loss").get<double>()) +
               "\t" + fixed(r.at("lr").get<double>(), 10) + "\t" + fixed(r.at("dev_ppl").get<double>()) + "\t" +
               fixed(r.at("dev_bleu").get<double>()) + "\n";
      }
      write_text(out_dir / (name + ".train_curve.tsv"), tsv);
    }
    if (fs::exists(layout.journal())) {
      any = true;
      std::string tsv = "iteration\tlabeled\tpool\tdev_bleu\tdev_ppl\n";
      std::istringstream in(read_text(layout.journal()));
      std::string line;
      while (std::getline(in, line)) {
        const json r = json::parse(line, nullptr, false);
        if (r.is_discarded() || r.value("type", "") != "iteration_end") continue;
        tsv += std::to_string(r.at("iteration").get<std::size_t>()) + "\t" +
               std::to_string(r.at("labeled").get<std::size_t>()) + "\t" +
               std::to_string(r.at("pool").get<std::size_t>()) + "\t" + fixed(r.at("dev_bleu").get<double>()) +
               "\t" + fixed(r.at("dev_ppl").get<double>()) + "\n";
      }
      write_text(out_dir / (name + ".al_curve.tsv"), tsv);
    }
    if (!any) warn << "warning: " << run.string() << " has no training log or journal\n";
    if (!fs::exists(layout.test_report())) {
      warn << "warning: " << run.string() << " has no test_report.json; run `alnmt test` on it\n";
      continue;
    }
    const json t = json::parse(read_text(layout.test_report()), nullptr, false);
    if (t.is_discarded()) {
      warn << "warning: unreadable " << layout.test_report().string() << "\n";
      continue;
    }
    columns.push_back({t.value("variant", name), name, t.value("bleu_percent", 0.0), t.value("perplexity", 0.0)});
  }

  auto rank = [](const std::string& v) {
    static const std::vector<std::string> order = {"Fully Trained", "Baseline", "Margin", "Least Confidence", "Random"};
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), v) - order.begin());
  };
  std::stable_sort(columns.begin(), columns.end(),
                   [&](const Column& a, const Column& b) { return rank(a.variant) < rank(b.variant); });

  std::string tsv = "metric", md = "| Metric |", rule = "|---|", bleu_tsv = "BLEU", ppl_tsv = "PPL",
              bleu_md = "| BLEU |", ppl_md = "| PPL |";
  for (const auto& col : columns) {
    tsv += "\t" + col.variant;
    md += " " + col.variant + " |";
    rule += "---|";
    bleu_tsv += "\t" + fixed(col.bleu, 2);
    ppl_tsv += "\t" + fixed(col.ppl, 2);
    bleu_md += " " + fixed(col.bleu, 2) + " |";
    ppl_md += " " + fixed(col.ppl, 2) + " |";
  }
  write_text(out_dir / "table.tsv", tsv + "\n" + bleu_tsv + "\n" + ppl_tsv + "\n");
  const std::string table = md + "\n" + rule + "\n" + bleu_md + "\n" + ppl_md + "\n";
  write_text(out_dir / "table.md", table);
  out << table;
}

}  // namespace alnmt::pipeline

// alnmt: command-line entry point. See README.md for the workflow.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "alnmt/config.hpp"
#include "alnmt/corpus.hpp"
#include "alnmt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace alnmt;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string run;
  std::string config_file;
  std::vector<std::string> assignments;
  std::string seed, strategy, oracle, port;
  bool retrain_full = false;
  bool raw_product = false;

  std::vector<std::string> all_assignments() const {
    std::vector<std::string> out;
    if (!seed.empty()) out.push_back("run.seed=" + seed);
    if (!strategy.empty()) out.push_back("al.strategy=" + strategy);
    if (!oracle.empty()) out.push_back("al.oracle=" + oracle);
    if (!port.empty()) out.push_back("service.port=" + port);
    if (retrain_full) out.push_back("al.retrain_full=true");
    if (raw_product) out.push_back("al.raw_product=true");
    out.insert(out.end(), assignments.begin(), assignments.end());
    return out;
  }
  std::optional<fs::path> file() const {
    if (config_file.empty()) return std::nullopt;
    return fs::path(config_file);
  }
};

void add_common(CLI::App* app, Common& c, bool run_required = true) {
  auto* run = app->add_option("-r,--run", c.run, "run directory");
  if (run_required) run->required();
  app->add_option("-c,--config", c.config_file, "key = value configuration file")->check(CLI::ExistingFile);
  app->add_option("-s,--set", c.assignments, "override one key, e.g. --set train.epochs=5 (repeatable)");
  app->add_option("--seed", c.seed, "shorthand for run.seed");
}

config::Config resolve(const Common& c, const std::optional<fs::path>& base = {}) {
  return pipeline::resolve_config(c.run, base, c.file(), c.all_assignments());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer NMT with pool-based active learning"};
  app.require_subcommand(1);

  Common common;
  auto* prepare = app.add_subcommand("prepare", "clean, deduplicate and split the corpus into <run>/data");
  add_common(prepare, common);

  auto* learn_bpe = app.add_subcommand("learn-bpe", "learn BPE merges and vocabularies into <run>/bpe");
  add_common(learn_bpe, common);

  auto* train = app.add_subcommand("train", "train a model (train.on = full | baseline)");
  add_common(train, common);

  std::string model_path;
  auto* test = app.add_subcommand("test", "evaluate on the test split and write test_report.json");
  add_common(test, common);
  test->add_option("--model", model_path, "checkpoint to evaluate (default <run>/model.ckpt)");

  std::size_t nbest = 0;
  auto* translate = app.add_subcommand("translate", "translate stdin line by line");
  add_common(translate, common);
  translate->add_option("--model", model_path, "checkpoint to use (default <run>/model.ckpt)");
  translate->add_option("--nbest", nbest, "print N hypotheses per line as 'index ||| text ||| score'");

  std::string from;
  auto* active = app.add_subcommand("active-learn", "run or resume the active-learning loop");
  add_common(active, common);
  active->add_option("--from", from, "baseline run whose data, BPE and model.ckpt seed this run");
  active->add_option("--strategy", common.strategy, "least_confidence | margin | random");
  active->add_option("--oracle", common.oracle, "simulated | interactive");
  active->add_flag("--retrain-full", common.retrain_full, "retrain from scratch each iteration");
  active->add_flag("--raw-product", common.raw_product, "unnormalized sequence probability");

  auto* serve = app.add_subcommand("serve-annotation", "active learning with the annotation service (interactive oracle)");
  add_common(serve, common);
  serve->add_option("--from", from, "baseline run whose data, BPE and model.ckpt seed this run");
  serve->add_option("--strategy", common.strategy, "least_confidence | margin | random");
  serve->add_option("--port", common.port, "shorthand for service.port");

  std::vector<std::string> report_runs;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "learning curves and a comparison table for finished runs");
  report->add_option("runs", report_runs, "run directories")->required();
  report->add_option("-o,--out", report_out, "output directory");

  auto* keys = app.add_subcommand("config-keys", "print every configuration key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*keys) {
      std::cout << config::reference_table();
      return 0;
    }
    if (*report) {
      std::vector<fs::path> runs(report_runs.begin(), report_runs.end());
      pipeline::report(runs, report_out, std::cout, std::cerr);
      return 0;
    }

    const fs::path run = common.run;
    std::optional<fs::path> base;
    if (!from.empty()) base = fs::path(from);
    config::Config cfg = resolve(common, base);
    if (*serve) cfg.set("al.oracle", "interactive");
    config::validate(cfg);
    pipeline::RunLock lock(run);
    pipeline::write_snapshot(run, cfg);

    if (*prepare) {
      const auto s = pipeline::prepare(run, cfg);
      std::cerr << "lines " << s.stats.lines << ", rejected source " << s.stats.rejected_source
                << ", rejected target " << s.stats.rejected_target << ", duplicates " << s.stats.duplicates << "\n"
                << "train " << s.train << " (baseline " << s.baseline << ", pool " << s.pool << "), dev " << s.dev
                << ", test " << s.test << "\n";
    } else if (*learn_bpe) {
      pipeline::learn_bpe(run, cfg);
    } else if (*train) {
      const auto r = pipeline::train(run, cfg);
      std::cerr << "trained " << r.epochs_run << " epochs, " << r.state.step << " steps; best dev ppl "
                << r.state.best_ppl << " at step " << r.state.best_step << (r.stopped_early ? " (early stop)" : "")
                << "\n";
    } else if (*test) {
      std::optional<fs::path> m;
      if (!model_path.empty()) m = fs::path(model_path);
      const auto r = pipeline::test(run, cfg, m);
      std::cout << metrics::format_report(r.bleu, r.ppl) << "\n";
    } else if (*translate) {
      std::optional<fs::path> m;
      if (!model_path.empty()) m = fs::path(model_path);
      pipeline::translate(run, cfg, std::cin, std::cout, nbest, m);
    } else if (*active || *serve) {
      if (base) pipeline::adopt_baseline(run, *base);
      const auto state = pipeline::active_learn(run, cfg, std::cerr);
      std::cerr << "finished after " << state.iteration << " iterations; labeled " << state.labeled_ids.size()
                << ", pool " << state.pool_ids.size() << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "alnmt/acquisition.hpp"
#include "alnmt/bpe.hpp"
#include "alnmt/config.hpp"
#include "alnmt/corpus.hpp"
#include "alnmt/decoder.hpp"
#include "alnmt/metrics.hpp"
#include "alnmt/pipeline.hpp"
#include "alnmt/toy.hpp"
#include "alnmt/transformer.hpp"

namespace py = pybind11;
using namespace alnmt;

namespace {

config::Config resolve(const std::filesystem::path& run, const std::map<std::string, std::string>& overrides,
                       const std::optional<std::filesystem::path>& file) {
  std::vector<std::string> assignments;
  for (const auto& [k, v] : overrides) assignments.push_back(k + "=" + v);
  auto c = pipeline::resolve_config(run, std::nullopt, file, assignments);
  config::validate(c);
  return c;
}

py::dict bleu_dict(const metrics::BleuReport& r) {
  py::dict d;
  d["bleu"] = r.bleu;
  d["precisions"] = r.precisions;
  d["brevity_penalty"] = r.brevity_penalty;
  d["candidate_length"] = r.candidate_length;
  d["reference_length"] = r.reference_length;
  return d;
}

/// A trained checkpoint with id-level decoding.
class Model {
 public:
  explicit Model(const std::filesystem::path& path) : model_(load_checkpoint<float>(path)), step_(model_) {}

  std::vector<int> greedy(const std::vector<int>& src) const {
    py::gil_scoped_release release;
    return decoding::greedy(step_, src).content();
  }

  std::vector<std::pair<std::vector<int>, double>> beam(const std::vector<int>& src, std::size_t beam,
                                                         std::size_t n_best) const {
    py::gil_scoped_release release;
    std::vector<std::pair<std::vector<int>, double>> out;
    const auto list = decoding::beam_search(step_, src, beam, n_best);
    for (const auto& h : list.hypotheses) out.push_back({h.content(), h.score});
    return out;
  }

  std::size_t source_vocab() const { return model_.config().src_vocab; }
  std::size_t target_vocab() const { return model_.config().trg_vocab; }

 private:
  Transformer<float> model_;
  decoding::TransformerStepModel<float> step_;
};

}  // namespace

PYBIND11_MODULE(_alnmt, m) {
  m.doc() = "Transformer NMT with pool-based active learning";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "corpus_bleu",
      [](const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
        std::vector<metrics::Tokens> c, r;
        for (const auto& s : candidates) c.push_back(bpe::split_words(s));
        for (const auto& s : references) r.push_back(bpe::split_words(s));
        return bleu_dict(metrics::corpus_bleu(c, r));
      },
      py::arg("candidates"), py::arg("references"), "Corpus BLEU of whitespace-tokenized sentences.");
  m.def("brevity_penalty", &metrics::brevity_penalty, py::arg("candidate_length"), py::arg("reference_length"));
  m.def(
      "perplexity",
      [](const std::vector<double>& logprobs) { return metrics::perplexity_from_logprobs(logprobs).perplexity; },
      py::arg("token_logprobs"), "Perplexity from natural-log token probabilities.");

  m.def(
      "learn_bpe",
      [](const std::vector<std::string>& sentences, std::size_t merges) {
        std::vector<std::pair<std::string, std::string>> out;
        const auto model = bpe::learn_bpe(sentences, merges);
        for (const auto& p : model.merges()) out.push_back({p.first, p.second});
        return out;
      },
      py::arg("sentences"), py::arg("merges"));
  m.def(
      "apply_bpe",
      [](const std::vector<std::pair<std::string, std::string>>& merges, const std::string& sentence) {
        std::vector<bpe::SymbolPair> pairs;
        for (const auto& [a, b] : merges) pairs.push_back({a, b});
        return bpe::apply_bpe(bpe::BpeModel(pairs), sentence);
      },
      py::arg("merges"), py::arg("sentence"));
  m.def("detokenize", &bpe::detokenize, py::arg("tokens"));

  m.def("least_confidence", &acquisition::least_confidence_value, py::arg("p_best"));
  m.def("margin", &acquisition::margin_value, py::arg("p_first"), py::arg("p_second"));

  m.def(
      "toy_pairs",
      [](const std::string& task, std::size_t count, std::size_t alphabet, std::uint64_t seed) {
        toy::ToyConfig c;
        if (task == "copy")
          c.task = toy::Task::copy;
        else if (task != "reverse")
          throw ConfigError("toy task must be copy or reverse");
        c.alphabet = alphabet;
        c.seed = seed;
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& p : toy::generate(c, count)) out.push_back({p.source, p.target});
        return out;
      },
      py::arg("task") = "reverse", py::arg("count") = 100, py::arg("alphabet") = 20, py::arg("seed") = 7);

  m.def(
      "config_defaults",
      [] {
        std::map<std::string, std::string> out;
        for (const auto& k : config::known_keys()) out[k.key] = k.default_value;
        return out;
      },
      "Every configuration key with its default value.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("greedy", &Model::greedy, py::arg("source_ids"))
      .def("beam", &Model::beam, py::arg("source_ids"), py::arg("beam") = 5, py::arg("n_best") = 1)
      .def_property_readonly("source_vocab", &Model::source_vocab)
      .def_property_readonly("target_vocab", &Model::target_vocab);

  using Overrides = std::map<std::string, std::string>;
  using File = std::optional<std::filesystem::path>;
  m.def(
      "prepare",
      [](const std::filesystem::path& run, const Overrides& o, const File& f) {
        auto c = resolve(run, o, f);
        pipeline::write_snapshot(run, c);
        const auto s = pipeline::prepare(run, c);
        return py::dict(py::arg("train") = s.train, py::arg("dev") = s.dev, py::arg("test") = s.test,
                        py::arg("baseline") = s.baseline, py::arg("pool") = s.pool);
      },
      py::arg("run_dir"), py::arg("overrides") = Overrides{}, py::arg("config_file") = File{});
  m.def(
      "learn_run_bpe",
      [](const std::filesystem::path& run, const Overrides& o) { pipeline::learn_bpe(run, resolve(run, o, {})); },
      py::arg("run_dir"), py::arg("overrides") = Overrides{});
  m.def(
      "train",
      [](const std::filesystem::path& run, const Overrides& o) {
        auto c = resolve(run, o, {});
        pipeline::write_snapshot(run, c);
        py::gil_scoped_release release;
        const auto r = pipeline::train(run, c);
        return std::make_pair(r.epochs_run, r.state.best_ppl);
      },
      py::arg("run_dir"), py::arg("overrides") = Overrides{}, "Returns (epochs run, best dev perplexity).");
  m.def(
      "test",
      [](const std::filesystem::path& run) {
        const auto r = pipeline::test(run, resolve(run, {}, {}));
        py::dict d = bleu_dict(r.bleu);
        d["perplexity"] = r.ppl.perplexity;
        d["exact_match"] = r.exact_match;
        d["variant"] = r.variant;
        return d;
      },
      py::arg("run_dir"));
  m.def(
      "translate",
      [](const std::filesystem::path& run, const std::vector<std::string>& lines, std::size_t nbest) {
        std::string joined;
        for (const auto& l : lines) joined += l + "\n";
        std::istringstream in(joined);
        std::ostringstream out;
        pipeline::translate(run, resolve(run, {}, {}), in, out, nbest);
        std::vector<std::string> result;
        std::istringstream lines_out(out.str());
        for (std::string l; std::getline(lines_out, l);) result.push_back(l);
        return result;
      },
      py::arg("run_dir"), py::arg("lines"), py::arg("nbest") = 0);
}

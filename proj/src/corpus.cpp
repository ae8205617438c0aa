#include "alnmt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "alnmt/rng.hpp"
#include "alnmt/utf8.hpp"

namespace alnmt::corpus {

bool ScriptSet::contains(char32_t cp) const {
  return std::any_of(ranges.begin(), ranges.end(),
                     [cp](const CodepointRange& r) { return cp >= r.first && cp <= r.last; });
}

ScriptSet ScriptSet::printable_ascii() { return {{{0x20, 0x7E}}}; }

ScriptSet ScriptSet::devanagari_latin() {
  return {{{0x20, 0x7E},
           {0x0900, 0x097F},    // Devanagari
           {0xA8E0, 0xA8FF},    // Devanagari Extended
           {0x200C, 0x200D},    // ZWNJ / ZWJ, used in conjuncts
           {0x2018, 0x201D}}};  // curly quotes
}

ScriptSet ScriptSet::parse(std::string_view name) {
  if (name == "ascii") return printable_ascii();
  if (name == "devanagari+latin") return devanagari_latin();
  ScriptSet out;
  std::string s(name);
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) {
        const auto cp = static_cast<char32_t>(std::stoul(item, nullptr, 16));
        out.ranges.push_back({cp, cp});
      } else {
        out.ranges.push_back({static_cast<char32_t>(std::stoul(item.substr(0, dash), nullptr, 16)),
                              static_cast<char32_t>(std::stoul(item.substr(dash + 1), nullptr, 16))});
      }
    } catch (const std::exception&) {
      throw ConfigError("bad script range '" + item + "'");
    }
  }
  if (out.ranges.empty()) throw ConfigError("empty script set '" + s + "'");
  return out;
}

std::string to_string(RejectReason r) {
  switch (r) {
    case RejectReason::empty: return "empty";
    case RejectReason::foreign_script: return "foreign-script";
  }
  return "unknown";
}

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::dev: return "dev";
    case SplitTag::test: return "test";
  }
  return "unknown";
}

namespace {

bool is_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\v' || cp == U'\f' ||
         cp == 0x00A0 || cp == 0x3000 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x202F;
}

bool is_junk(char32_t cp) {
  if (cp < 0x20 || (cp >= 0x7F && cp < 0xA0)) return true;  // C0 / DEL / C1 controls
  return cp == 0x00AD || cp == 0x200B || cp == 0x200E || cp == 0x200F || cp == 0xFEFF ||
         cp == 0xFFFD || (cp >= 0x202A && cp <= 0x202E) || (cp >= 0x2060 && cp <= 0x2064);
}

char32_t to_lower(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 32;
  if ((cp >= 0xC0 && cp <= 0xDE) && cp != 0xD7) return cp + 32;
  return cp;
}

}  // namespace

CleanResult clean(std::string_view raw, const CleanConfig& config) {
  const std::u32string cps = utf8::decode(raw);
  std::u32string out;
  out.reserve(cps.size());
  bool pending_space = false;
  for (char32_t cp : cps) {
    if (is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (is_junk(cp)) continue;
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(to_lower(cp));
  }
  CleanResult result;
  for (char32_t cp : out) {
    if (cp != U' ' && !config.script.contains(cp)) {
      result.rejection = RejectReason::foreign_script;
      return result;
    }
  }
  std::string text = utf8::encode(out);
  if (config.remove_stop_words && !config.stop_words.empty()) {
    std::istringstream words(text);
    std::string w;
    std::string kept;
    while (words >> w) {
      if (config.stop_words.count(w)) continue;
      if (!kept.empty()) kept += ' ';
      kept += w;
    }
    text = std::move(kept);
  }
  if (text.empty()) {
    result.rejection = RejectReason::empty;
    return result;
  }
  result.text = std::move(text);
  return result;
}

std::vector<std::string> ParallelCorpus::sources() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.source);
  return out;
}

std::vector<std::string> ParallelCorpus::targets() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.target);
  return out;
}

IngestResult ingest(const std::vector<std::string>& source_lines,
                    const std::vector<std::string>& target_lines, const CleanConfig& source_config,
                    const CleanConfig& target_config) {
  if (source_lines.size() != target_lines.size()) {
    throw ConfigError("source and target have different line counts (" +
                      std::to_string(source_lines.size()) + " vs " +
                      std::to_string(target_lines.size()) + ")");
  }
  IngestResult result;
  result.stats.lines = source_lines.size();
  std::set<std::pair<std::string, std::string>> seen;
  std::int64_t next_id = 0;
  for (std::size_t i = 0; i < source_lines.size(); ++i) {
    CleanResult s = clean(source_lines[i], source_config);
    CleanResult t = clean(target_lines[i], target_config);
    if (!s.accepted()) {
      ++result.stats.rejected_source;
      ++result.stats.reasons["source:" + to_string(*s.rejection)];
    }
    if (!t.accepted()) {
      ++result.stats.rejected_target;
      ++result.stats.reasons["target:" + to_string(*t.rejection)];
    }
    if (!s.accepted() || !t.accepted()) continue;
    if (!seen.emplace(s.text, t.text).second) {
      ++result.stats.duplicates;
      continue;
    }
    result.corpus.pairs.push_back({std::move(s.text), std::move(t.text), next_id++});
  }
  return result;
}

SplitResult split(const ParallelCorpus& corpus, std::size_t dev_size, std::size_t test_size,
                  std::uint64_t seed) {
  const std::size_t n = corpus.size();
  if (dev_size + test_size > 0 && dev_size + test_size >= n) {
    throw ConfigError("dev_size + test_size (" + std::to_string(dev_size + test_size) +
                      ") must be smaller than the corpus size (" + std::to_string(n) + ")");
  }
  std::unordered_map<std::string, std::size_t> source_count;
  for (const auto& p : corpus.pairs) ++source_count[p.source];

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  SplitResult out;
  out.train.tag = SplitTag::train;
  out.dev.tag = SplitTag::dev;
  out.test.tag = SplitTag::test;
  for (std::size_t i : order) {
    const SentencePair& p = corpus.pairs[i];
    const bool unique = source_count[p.source] == 1;
    if (unique && out.test.size() < test_size) {
      out.test.pairs.push_back(p);
    } else if (unique && out.dev.size() < dev_size) {
      out.dev.pairs.push_back(p);
    } else {
      out.train.pairs.push_back(p);
    }
  }
  if (out.test.size() != test_size || out.dev.size() != dev_size) {
    throw ConfigError("not enough pairs with unique source text to fill dev/test without leakage");
  }
  return out;
}

void MonolingualPool::add(std::int64_t id, std::string source,
                          std::optional<std::string> hidden_reference) {
  if (index_.count(id)) throw std::invalid_argument("duplicate pool id " + std::to_string(id));
  index_.emplace(id, entries_.size());
  entries_.push_back({id, std::move(source)});
  if (hidden_reference) hidden_.emplace(id, std::move(*hidden_reference));
}

const PoolEntry& MonolingualPool::entry(std::int64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("no pool entry with id " + std::to_string(id));
  return entries_[it->second];
}

const std::string& MonolingualPool::reveal(std::int64_t id, RevealKey) const {
  auto it = hidden_.find(id);
  if (it == hidden_.end()) {
    throw std::runtime_error("pool entry " + std::to_string(id) + " has no hidden reference");
  }
  return it->second;
}

std::size_t baseline_count(std::size_t n, double baseline_fraction) {
  if (!(baseline_fraction > 0.0 && baseline_fraction < 1.0)) {
    throw ConfigError("baseline fraction must lie in (0, 1)");
  }
  const double exact = static_cast<double>(n) * baseline_fraction;
  // Guard against representation error pushing an integral product upward.
  auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::min(count, n);
}

AlPartition partition_for_al(const ParallelCorpus& train, double baseline_fraction,
                             std::uint64_t seed) {
  const std::size_t keep = baseline_count(train.size(), baseline_fraction);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> base(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(keep), order.end());
  // Keep ingestion order inside each part.
  std::sort(base.begin(), base.end());
  std::sort(rest.begin(), rest.end());

  AlPartition out;
  out.baseline.tag = SplitTag::train;
  for (std::size_t i : base) out.baseline.pairs.push_back(train.pairs[i]);
  for (std::size_t i : rest) {
    const auto& p = train.pairs[i];
    out.pool.add(p.id, p.source, p.target);
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void write_split(const std::string& prefix, const SplitResult& split) {
  const std::pair<const char*, const ParallelCorpus*> parts[] = {
      {"train", &split.train}, {"dev", &split.dev}, {"test", &split.test}};
  for (const auto& [name, part] : parts) {
    write_lines(prefix + "." + name + ".src", part->sources());
    write_lines(prefix + "." + name + ".trg", part->targets());
  }
}

ParallelCorpus read_parallel(const std::string& prefix, const std::string& name, SplitTag tag,
                             std::int64_t id_offset) {
  const auto src = read_lines(prefix + "." + name + ".src");
  const auto trg = read_lines(prefix + "." + name + ".trg");
  if (src.size() != trg.size()) {
    throw ConfigError("misaligned corpus " + prefix + "." + name);
  }
  ParallelCorpus out;
  out.tag = tag;
  for (std::size_t i = 0; i < src.size(); ++i)
    out.pairs.push_back({src[i], trg[i], id_offset + static_cast<std::int64_t>(i)});
  return out;
}

}  // namespace alnmt::corpus

#include <algorithm>
#include <set>

#include "alnmt/corpus.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace alnmt;
using namespace alnmt::corpus;

namespace {

ParallelCorpus numbered(std::size_t n) {
  std::vector<std::string> src, trg;
  for (std::size_t i = 0; i < n; ++i) {
    src.push_back("source " + std::to_string(i));
    trg.push_back("target " + std::to_string(i));
  }
  return ingest(src, trg).corpus;
}

std::multiset<std::string> keys(const ParallelCorpus& c) {
  std::multiset<std::string> out;
  for (const auto& p : c.pairs) out.insert(p.source + "\t" + p.target);
  return out;
}

}  // namespace

TEST_CASE("clean lowercases and collapses whitespace") {
  auto r = clean("Hello\t  World");
  REQUIRE(r.accepted());
  CHECK(r.text == "hello world");
  CHECK(clean("  leading and trailing  ").text == "leading and trailing");
  CHECK(clean("bell\x07 char").text == "bell char");
}

TEST_CASE("clean rejects empty lines and foreign scripts") {
  CHECK(clean("").rejection == RejectReason::empty);
  CHECK(clean(" \t ").rejection == RejectReason::empty);

  CleanConfig hindi;
  hindi.script = ScriptSet::devanagari_latin();
  CHECK(clean("नमस्ते world", hindi).accepted());
  // U+0628 ARABIC LETTER BEH, as found in Urdu text.
  const auto urdu = clean("नमस्ते \xD8\xA8", hindi);
  CHECK(urdu.rejection == RejectReason::foreign_script);
  CHECK(clean("caf\xC3\xA9").rejection == RejectReason::foreign_script);
}

TEST_CASE("clean is idempotent on accepted lines") {
  for (const char* raw : {"Hello\t  World", "A  B\tC", "  x  ", "MiXeD CaSe 123"}) {
    const auto once = clean(raw);
    REQUIRE(once.accepted());
    const auto twice = clean(once.text);
    REQUIRE(twice.accepted());
    CHECK(twice.text == once.text);
  }
}

TEST_CASE("custom script ranges parse and bad ranges are configuration errors") {
  const auto s = ScriptSet::parse("0061-0063");
  CHECK(s.contains(U'b'));
  CHECK_FALSE(s.contains(U'd'));
  CHECK_THROWS_AS(ScriptSet::parse("not-a-range"), ConfigError);
}

TEST_CASE("ingest removes duplicate pairs but keeps same-source different-target pairs") {
  const auto r = ingest({"a", "A", "a", "b", ""}, {"x", "x", "y", "z", "w"});
  CHECK(r.corpus.size() == 3);
  CHECK(r.stats.duplicates == 1);
  CHECK(r.stats.rejected_source == 1);
  for (std::size_t i = 0; i < r.corpus.size(); ++i) CHECK(r.corpus.pairs[i].id == static_cast<std::int64_t>(i));
  CHECK_THROWS(ingest({"a"}, {"x", "y"}));
}

TEST_CASE("identity split keeps the corpus") {
  const auto c = numbered(10);
  const auto s = split(c, 0, 0, 1);
  CHECK(s.train.size() == 10);
  CHECK(s.dev.size() == 0);
  CHECK(s.test.size() == 0);
  CHECK(keys(s.train) == keys(c));
}

TEST_CASE("split is exact, deterministic, and leak free") {
  const auto c = numbered(100);
  const auto a = split(c, 15, 10, 42);
  const auto b = split(c, 15, 10, 42);
  CHECK(a.train.size() == 75);
  CHECK(a.dev.size() == 15);
  CHECK(a.test.size() == 10);
  CHECK(a.train.pairs == b.train.pairs);
  CHECK(a.dev.pairs == b.dev.pairs);
  CHECK(a.test.pairs == b.test.pairs);

  std::multiset<std::string> all = keys(a.train);
  for (const auto& k : keys(a.dev)) all.insert(k);
  for (const auto& k : keys(a.test)) all.insert(k);
  CHECK(all == keys(c));

  const auto other = split(c, 15, 10, 43);
  CHECK(other.dev.pairs != a.dev.pairs);
  CHECK_THROWS_AS(split(c, 60, 40, 1), ConfigError);
}

TEST_CASE("no source sentence crosses splits even when sources repeat") {
  std::vector<std::string> src, trg;
  for (int i = 0; i < 60; ++i) {
    src.push_back("s" + std::to_string(i % 20));
    trg.push_back("t" + std::to_string(i));
  }
  for (int i = 0; i < 15; ++i) {
    src.push_back("unique " + std::to_string(i));
    trg.push_back("u" + std::to_string(i));
  }
  const auto c = ingest(src, trg).corpus;
  const auto s = split(c, 5, 5, 3);
  std::set<std::string> train_src, dev_src, test_src;
  for (const auto& p : s.train.pairs) train_src.insert(p.source);
  for (const auto& p : s.dev.pairs) dev_src.insert(p.source);
  for (const auto& p : s.test.pairs) test_src.insert(p.source);
  for (const auto& x : dev_src) {
    CHECK(train_src.count(x) == 0);
    CHECK(test_src.count(x) == 0);
  }
  for (const auto& x : test_src) CHECK(train_src.count(x) == 0);
}

TEST_CASE("baseline share uses the ceiling of n times the fraction") {
  CHECK(baseline_count(1552563, 0.7) == 1086795);
  CHECK(1552563 - baseline_count(1552563, 0.7) == 465768);
  CHECK(baseline_count(10, 0.7) == 7);
}

TEST_CASE("partition for active learning") {
  const auto train = numbered(10);
  const auto p = partition_for_al(train, 0.7, 5);
  CHECK(p.baseline.size() == 7);
  CHECK(p.pool.size() == 3);
  std::set<std::int64_t> ids;
  for (const auto& x : p.baseline.pairs) ids.insert(x.id);
  for (const auto& e : p.pool.entries()) {
    CHECK(ids.count(e.id) == 0);
    ids.insert(e.id);
  }
  CHECK(ids.size() == 10);

  // baseline plus revealed pool reproduces the training set
  std::multiset<std::string> rebuilt = keys(p.baseline);
  for (const auto& e : p.pool.entries()) rebuilt.insert(e.source + "\t" + p.pool.reveal(e.id, OracleAccess::key()));
  CHECK(rebuilt == keys(train));

  const auto again = partition_for_al(train, 0.7, 5);
  CHECK(again.baseline.pairs == p.baseline.pairs);
  CHECK_THROWS_AS(partition_for_al(train, 1.0, 5), ConfigError);
  CHECK_THROWS_AS(partition_for_al(train, 0.0, 5), ConfigError);
}

TEST_CASE("split files round-trip") {
  const auto dir = oracle::temp_dir("corpus");
  const auto c = numbered(30);
  const auto s = split(c, 5, 5, 9);
  const std::string prefix = (dir / "corpus").string();
  write_split(prefix, s);
  const auto dev = read_parallel(prefix, "dev", SplitTag::dev);
  REQUIRE(dev.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(dev.pairs[i].source == s.dev.pairs[i].source);
    CHECK(dev.pairs[i].target == s.dev.pairs[i].target);
  }
  std::filesystem::remove_all(dir);
}

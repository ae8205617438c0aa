#include "alnmt/toy.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "alnmt/rng.hpp"

namespace alnmt::toy {

std::string task_name(Task t) { return t == Task::copy ? "copy" : "reverse"; }

std::vector<ToyPair> generate(const ToyConfig& config, std::size_t count) {
  if (config.alphabet == 0 || config.alphabet > 26) throw std::invalid_argument("toy alphabet must be 1..26");
  if (config.min_length == 0 || config.min_length > config.max_length)
    throw std::invalid_argument("toy lengths must satisfy 0 < min <= max");
  Rng rng(config.seed);
  const std::size_t span = config.max_length - config.min_length + 1;
  const std::size_t short_span = (span + 1) / 2;

  std::set<std::string> seen;
  std::vector<ToyPair> out;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > count * 1000 + 10000) throw std::runtime_error("toy generator cannot find enough distinct pairs");
    std::size_t len;
    if (span == 1) {
      len = config.min_length;
    } else if (rng.uniform() < config.short_mass) {
      len = config.min_length + rng.index(short_span);
    } else {
      len = config.min_length + short_span + rng.index(span - short_span);
    }
    std::vector<std::string> words;
    for (std::size_t i = 0; i < len; ++i) words.emplace_back(1, static_cast<char>('a' + rng.index(config.alphabet)));
    auto join = [](const std::vector<std::string>& w) {
      std::string s;
      for (const auto& x : w) {
        if (!s.empty()) s += ' ';
        s += x;
      }
      return s;
    };
    std::string src = join(words);
    if (!seen.insert(src).second) continue;
    if (config.task == Task::reverse) std::reverse(words.begin(), words.end());
    out.push_back({std::move(src), join(words)});
  }
  return out;
}

}  // namespace alnmt::toy

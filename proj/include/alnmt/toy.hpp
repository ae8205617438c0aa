#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace alnmt::toy {

enum class Task { copy, reverse };

struct ToyConfig {
  Task task = Task::reverse;
  std::size_t alphabet = 20;  // words are the letters a, b, c, ...
  std::size_t min_length = 2;
  std::size_t max_length = 12;
  /// Probability mass of the short half of the length range. Values above
  /// 0.5 make long sentences rare.
  double short_mass = 0.5;
  std::uint64_t seed = 7;
};

struct ToyPair {
  std::string source;
  std::string target;
};

/// `count` distinct pairs of space-separated letter sentences.
std::vector<ToyPair> generate(const ToyConfig& config, std::size_t count);

std::string task_name(Task t);

}  // namespace alnmt::toy

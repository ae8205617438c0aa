#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "alnmt/active_loop.hpp"
#include "alnmt/trainer.hpp"
#include "alnmt/transformer.hpp"

namespace alnmt::config {

/// One recognised key with its default value and a one-line description.
struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every key the tool understands, in documentation order.
const std::vector<KeySpec>& known_keys();

/// Flat `section.key = value` settings. Starts from the defaults; files and
/// assignments override them and unknown keys are rejected with ConfigError.
class Config {
 public:
  Config();

  /// Lines of `key = value`; `#` starts a comment; blank lines are ignored.
  void parse(std::string_view text, const std::string& origin = "<text>");
  void load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  /// Parses "key=value".
  void assign(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  std::string text(const std::string& key) const { return get(key); }
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// All keys, sorted, one `key = value` per line. Loading it reproduces
  /// this configuration.
  std::string snapshot() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Model shape from `model.*` plus vocabulary sizes.
ModelConfig model_config(const Config& c, std::size_t src_vocab, std::size_t trg_vocab);
/// `train.*` (seeded from `run.seed`).
training::TrainConfig train_config(const Config& c);
/// `al.*` (seeded from `run.seed`).
active::ALConfig al_config(const Config& c);
/// Fine-tuning settings used inside the active-learning loop.
training::TrainConfig fine_tune_config(const Config& c);

/// Parses every typed key and checks the derived configs, so bad values
/// fail before any work starts.
void validate(const Config& c);

/// Markdown table of every key, default and description.
std::string reference_table();

}  // namespace alnmt::config

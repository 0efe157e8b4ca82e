#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selfore/corpus.hpp"
#include "selfore/encoder.hpp"
#include "selfore/pipeline.hpp"

namespace selfore {

struct SettingSpec {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every recognized key with its default, in display order.
const std::vector<SettingSpec>& setting_specs();

enum class SettingSource { default_value, environment, file, command_line };

/// Flat key=value settings. Later sources override earlier ones only if they
/// rank higher: command line > file > environment > default.
class Settings {
 public:
  Settings();

  /// Throws UsageError for unknown keys.
  void set(const std::string& key, const std::string& value, SettingSource source);
  /// Reads `key = value` lines; `#` starts a comment. Throws UsageError with
  /// the line number on malformed lines or unknown keys.
  void load_file(const std::filesystem::path& path);
  /// Applies SELFORE_SEED when the seed was not given explicitly.
  void apply_environment();

  const std::string& get(const std::string& key) const;
  std::string text(const std::string& key) const { return get(key); }
  long long integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const;
  SettingSource source(const std::string& key) const;

  LoopConfig loop_config() const;
  BuiltinEncoderConfig encoder_config() const;
  IngestOptions ingest_options() const;

  /// Every key=value pair in registry order.
  std::string render() const;

 private:
  struct Entry {
    std::string value;
    SettingSource source = SettingSource::default_value;
  };
  std::map<std::string, Entry> values_;
};

/// Aligned help listing of all keys and defaults.
std::string settings_help();

}  // namespace selfore

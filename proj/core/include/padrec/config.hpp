#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "padrec/data.hpp"
#include "padrec/model.hpp"
#include "padrec/pipeline.hpp"
#include "padrec/text_embeddings.hpp"

namespace padrec {

/// Invalid configuration: unknown key, malformed value or failed validation.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::filesystem::path run_dir = "run";
  std::filesystem::path interactions;
  std::filesystem::path text_embeddings;
  std::filesystem::path text_index;
  PreprocessOptions preprocess;
  MissingText missing_text = MissingText::strict;
  ModelConfig model;  // vocab is filled from the data; text_dim 0 means "from the file"
  TrainConfig train;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

struct ConfigKeyInfo {
  std::string key;
  std::string description;
};

/// Every accepted key, in documentation order.
std::vector<ConfigKeyInfo> config_keys();

/// Sets one key from its textual form. Lists are comma separated.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Applies a document on top of `config`. A document whose first non-blank
/// character is '{' is JSON (flat dotted keys or nested objects); anything else
/// is `key = value` lines with '#' comments.
void apply_config_text(RunConfig& config, std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Flat JSON object with every key, defaults included, sorted by key.
std::string resolved_config_json(const RunConfig& config);

}  // namespace padrec

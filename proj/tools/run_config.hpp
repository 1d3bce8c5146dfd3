#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "newscast/corpus.hpp"
#include "newscast/embed.hpp"
#include "newscast/features.hpp"
#include "newscast/runner.hpp"

namespace newscast::cli {

struct MarketFile {
  std::filesystem::path path;
  MarketSchema schema;
};

// One JSON document per experiment. Relative paths resolve against the
// directory holding the config file.
struct RunConfig {
  std::filesystem::path headlines;
  std::vector<MarketFile> market;  // first entry is the calendar anchor
  std::filesystem::path cache = "cache/embeddings.jsonl";
  std::filesystem::path output = "out";
  std::filesystem::path results = "results";

  std::set<std::string> whitelist = default_category_whitelist();
  std::uint64_t corpus_seed = 0;

  std::vector<ColumnSelection> columns;  // empty: every field, target first and flagged as price
  double prune_threshold = 0.95;

  ProviderConfig provider;
  GridConfig grid = GridConfig::defaults();
};

// Parses and applies defaults. Unknown keys and malformed values throw ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Referenced inputs must exist; a missing one throws DataError naming the path.
void require_inputs(const RunConfig& config);

std::vector<ColumnSelection> effective_columns(const RunConfig& config, const std::vector<MarketSeries>& series);

}  // namespace newscast::cli

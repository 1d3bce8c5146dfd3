#include "run_config.hpp"

#include <fstream>

#include "newscast/error.hpp"

namespace newscast::cli {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

Date read_date(const json& obj, const char* key, Date fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  Date d;
  if (!obj.at(key).is_string() || !Date::try_parse(obj.at(key).get<std::string>(), d)) {
    throw ConfigError(where + "." + key + ": expected YYYY-MM-DD");
  }
  return d;
}

void parse_paths(const json& j, const std::filesystem::path& base, RunConfig& c) {
  check_keys(j, "paths", {"headlines", "market", "cache", "output", "results"});
  const auto path_field = [&](const char* key, std::filesystem::path& out) {
    std::string s;
    read(j, key, s, "paths");
    if (!s.empty()) out = resolve(base, s);
  };
  path_field("headlines", c.headlines);
  path_field("cache", c.cache);
  path_field("output", c.output);
  path_field("results", c.results);
  if (!j.contains("market")) return;
  if (!j.at("market").is_array()) throw ConfigError("paths.market: expected an array");
  for (const auto& m : j.at("market")) {
    check_keys(m, "paths.market[]", {"name", "path", "columns"});
    MarketFile f;
    std::string p;
    read(m, "name", f.schema.name, "paths.market[]");
    read(m, "path", p, "paths.market[]");
    read(m, "columns", f.schema.columns, "paths.market[]");
    if (f.schema.name.empty() || p.empty() || f.schema.columns.empty()) {
      throw ConfigError("paths.market[]: name, path and columns are required");
    }
    f.path = resolve(base, p);
    c.market.push_back(std::move(f));
  }
}

void parse_corpus(const json& j, RunConfig& c) {
  check_keys(j, "corpus", {"whitelist", "seed"});
  if (j.contains("whitelist")) {
    std::vector<std::string> w;
    read(j, "whitelist", w, "corpus");
    if (w.empty()) throw ConfigError("corpus.whitelist: must not be empty");
    c.whitelist = {w.begin(), w.end()};
  }
  read(j, "seed", c.corpus_seed, "corpus");
}

void parse_features(const json& j, RunConfig& c) {
  check_keys(j, "features", {"window", "horizon", "target", "prune_threshold", "columns", "splits"});
  auto& v = c.grid.variant;
  read(j, "window", v.window, "features");
  read(j, "horizon", v.horizon, "features");
  read(j, "target", v.target_column, "features");
  read(j, "prune_threshold", c.prune_threshold, "features");
  if (!(c.prune_threshold > 0.0 && c.prune_threshold <= 1.0)) {
    throw ConfigError("features.prune_threshold: must be in (0, 1]");
  }
  if (j.contains("columns")) {
    for (const auto& col : j.at("columns")) {
      check_keys(col, "features.columns[]", {"series", "field", "normalize", "price"});
      ColumnSelection s;
      read(col, "series", s.series, "features.columns[]");
      read(col, "field", s.field, "features.columns[]");
      read(col, "normalize", s.normalize, "features.columns[]");
      read(col, "price", s.price, "features.columns[]");
      c.columns.push_back(s);
    }
  }
  if (j.contains("splits")) {
    const auto& s = j.at("splits");
    check_keys(s, "features.splits",
               {"train_start", "train_end", "test_start", "test_end", "holdout_start", "holdout_end"});
    auto& r = v.splits;
    r.train_start = read_date(s, "train_start", r.train_start, "features.splits");
    r.train_end = read_date(s, "train_end", r.train_end, "features.splits");
    r.test_start = read_date(s, "test_start", r.test_start, "features.splits");
    r.test_end = read_date(s, "test_end", r.test_end, "features.splits");
    r.holdout_start = read_date(s, "holdout_start", r.holdout_start, "features.splits");
    r.holdout_end = read_date(s, "holdout_end", r.holdout_end, "features.splits");
    if (!(r.train_start <= r.train_end && r.train_end < r.test_start && r.test_start <= r.test_end &&
          r.test_end < r.holdout_start && r.holdout_start <= r.holdout_end)) {
      throw ConfigError("features.splits: ranges must be ordered and disjoint");
    }
  }
}

void parse_provider(const json& j, RunConfig& c) {
  check_keys(j, "provider", {"kind", "seed", "endpoint", "token_env", "timeout_ms", "request_batch", "workers",
                             "writers", "flush_threshold", "max_attempts", "backoff_ms", "simulated_latency_us"});
  auto& p = c.provider;
  std::string kind = "offline";
  read(j, "kind", kind, "provider");
  if (kind == "offline") {
    p.kind = ProviderKind::Offline;
  } else if (kind == "remote") {
    p.kind = ProviderKind::Remote;
  } else {
    throw ConfigError("provider.kind: expected 'offline' or 'remote'");
  }
  read(j, "seed", p.seed, "provider");
  read(j, "endpoint", p.endpoint, "provider");
  read(j, "token_env", p.token_env, "provider");
  read(j, "request_batch", p.request_batch, "provider");
  read(j, "workers", p.workers, "provider");
  read(j, "writers", p.writer_count, "provider");
  read(j, "flush_threshold", p.flush_threshold, "provider");
  read(j, "max_attempts", p.max_attempts, "provider");
  std::int64_t ms = p.timeout.count();
  read(j, "timeout_ms", ms, "provider");
  p.timeout = std::chrono::milliseconds(ms);
  ms = p.backoff.count();
  read(j, "backoff_ms", ms, "provider");
  p.backoff = std::chrono::milliseconds(ms);
  std::int64_t us = p.simulated_latency.count();
  read(j, "simulated_latency_us", us, "provider");
  p.simulated_latency = std::chrono::microseconds(us);
}

void parse_spec(const json& j, ModelSpec& s) {
  check_keys(j, "grid.base", {"hidden_dim", "num_hidden_layers", "dropout", "learning_rate", "batch_size",
                              "kernel_size", "num_blocks", "dilation_base", "num_states"});
  read(j, "hidden_dim", s.hidden_dim, "grid.base");
  read(j, "num_hidden_layers", s.num_hidden_layers, "grid.base");
  read(j, "dropout", s.dropout, "grid.base");
  read(j, "learning_rate", s.learning_rate, "grid.base");
  read(j, "batch_size", s.batch_size, "grid.base");
  read(j, "kernel_size", s.kernel_size, "grid.base");
  read(j, "num_blocks", s.num_blocks, "grid.base");
  read(j, "dilation_base", s.dilation_base, "grid.base");
  read(j, "num_states", s.num_states, "grid.base");
}

void parse_grid(const json& j, GridConfig& g) {
  check_keys(j, "grid", {"architectures", "transforms", "embeddings", "epochs", "seed", "parallelism",
                         "search_budget", "search_folds", "search_epochs", "base", "space"});
  if (j.contains("architectures")) {
    std::vector<std::string> names;
    read(j, "architectures", names, "grid");
    g.architectures.clear();
    for (const auto& n : names) g.architectures.push_back(parse_arch(n));
  }
  if (j.contains("transforms")) {
    std::vector<std::string> names;
    read(j, "transforms", names, "grid");
    g.transforms.clear();
    for (const auto& n : names) g.transforms.push_back(parse_transform(n));
  }
  if (j.contains("embeddings")) {
    if (!j.at("embeddings").is_array()) throw ConfigError("grid.embeddings: expected an array");
    g.embeddings.clear();
    for (const auto& e : j.at("embeddings")) {
      check_keys(e, "grid.embeddings[]", {"model", "native_dim", "dims"});
      EmbeddingAxis a;
      read(e, "model", a.model_id, "grid.embeddings[]");
      a.native_dim = declared_dimension(a.model_id);
      read(e, "native_dim", a.native_dim, "grid.embeddings[]");
      read(e, "dims", a.dims, "grid.embeddings[]");
      g.embeddings.push_back(std::move(a));
    }
  }
  read(j, "epochs", g.epochs, "grid");
  read(j, "seed", g.seed, "grid");
  read(j, "parallelism", g.parallelism, "grid");
  read(j, "search_budget", g.search_budget, "grid");
  read(j, "search_folds", g.search_folds, "grid");
  if (j.contains("search_epochs") && !j.at("search_epochs").is_null()) {
    std::size_t e = 0;
    read(j, "search_epochs", e, "grid");
    g.search_epochs = e;
  }
  if (j.contains("base")) parse_spec(j.at("base"), g.base);
  if (j.contains("space")) {
    const auto& s = j.at("space");
    check_keys(s, "grid.space", {"hidden_dims", "dropout_min", "dropout_max", "lr_min", "lr_max", "batch_sizes"});
    read(s, "hidden_dims", g.space.hidden_dims, "grid.space");
    read(s, "dropout_min", g.space.dropout_min, "grid.space");
    read(s, "dropout_max", g.space.dropout_max, "grid.space");
    read(s, "lr_min", g.space.lr_min, "grid.space");
    read(s, "lr_max", g.space.lr_max, "grid.space");
    read(s, "batch_sizes", g.space.batch_sizes, "grid.space");
  }
}

}  // namespace

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  check_keys(doc, "config", {"paths", "corpus", "features", "provider", "grid"});
  RunConfig c;
  c.cache = base_dir / c.cache;
  c.output = base_dir / c.output;
  c.results = base_dir / c.results;
  if (doc.contains("paths")) parse_paths(doc.at("paths"), base_dir, c);
  if (doc.contains("corpus")) parse_corpus(doc.at("corpus"), c);
  if (doc.contains("features")) parse_features(doc.at("features"), c);
  if (doc.contains("provider")) parse_provider(doc.at("provider"), c);
  if (doc.contains("grid")) parse_grid(doc.at("grid"), c.grid);
  c.grid.validate();
  c.provider.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc, path.parent_path());
}

void require_inputs(const RunConfig& c) {
  if (c.headlines.empty()) throw ConfigError("paths.headlines is required");
  if (c.market.empty()) throw ConfigError("paths.market must list at least one series");
  if (!std::filesystem::exists(c.headlines)) throw DataError("missing file: " + c.headlines.string());
  for (const auto& m : c.market) {
    if (!std::filesystem::exists(m.path)) throw DataError("missing file: " + m.path.string());
  }
}

std::vector<ColumnSelection> effective_columns(const RunConfig& c, const std::vector<MarketSeries>& series) {
  if (!c.columns.empty()) return c.columns;
  // The target goes first so correlation pruning never drops it in favour of
  // a sibling field.
  std::vector<ColumnSelection> out;
  for (const auto& s : series) {
    for (const auto& f : s.fields()) {
      const bool target = column_name(s.name(), f) == c.grid.variant.target_column;
      const ColumnSelection sel{s.name(), f, !target, target};
      if (target) {
        out.insert(out.begin(), sel);
      } else {
        out.push_back(sel);
      }
    }
  }
  return out;
}

}  // namespace newscast::cli

#include <atomic>
#include <charconv>
#include <fstream>
#include <iostream>
#include <mutex>

#include "CLI11.hpp"
#include "newscast/error.hpp"
#include "newscast/runner.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace newscast;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool dry_run = false;
  std::vector<std::string> filters;
  std::string results_dir;
};

cli::RunConfig load_config(const Options& o) {
  cli::RunConfig c;
  if (!o.config_path.empty()) c = cli::load_run_config(o.config_path);
  if (o.seed) {
    c.grid.seed = *o.seed;
    c.corpus_seed = *o.seed;
  }
  return c;
}

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct Prepared {
  std::vector<HeadlineRecord> records;
  AlignedFrame frame;  // pruned and normalized
  PruneReport prune;
};

Prepared prepare(const cli::RunConfig& c) {
  cli::require_inputs(c);
  Prepared p;
  p.records = load_headlines(c.headlines, c.whitelist);
  std::vector<MarketSeries> series;
  for (const auto& m : c.market) series.push_back(load_market_csv(m.path, m.schema));
  const auto columns = cli::effective_columns(c, series);
  const std::vector<MarketSeries> others(series.begin() + 1, series.end());
  const auto aligned = align_calendar(series.front(), others, columns);
  auto [pruned, report] = prune_correlated(aligned, c.grid.variant.splits, c.prune_threshold);
  p.frame = normalize_with_train_stats(pruned, c.grid.variant.splits);
  p.prune = std::move(report);
  return p;
}

std::string frame_csv(const AlignedFrame& f) {
  std::string out = "date";
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < f.width(); ++c) {
    if (f.meta[c].dropped) continue;
    kept.push_back(c);
    out += "," + f.names[c];
  }
  out += "\n";
  for (std::size_t r = 0; r < f.rows(); ++r) {
    out += f.dates[r].iso();
    for (auto c : kept) out += "," + shortest(f.columns[c][r]);
    out += "\n";
  }
  return out;
}

json frame_meta(const AlignedFrame& f) {
  json cols = json::array();
  for (std::size_t c = 0; c < f.width(); ++c) {
    const auto& m = f.meta[c];
    cols.push_back({{"name", f.names[c]},
                    {"price", m.price},
                    {"normalized", m.normalized},
                    {"train_mean", m.train_mean},
                    {"train_std", m.train_std},
                    {"dropped", m.dropped},
                    {"drop_reason", m.drop_reason}});
  }
  return cols;
}

json prune_json(const PruneReport& r) {
  json drops = json::array();
  for (const auto& d : r.drops) {
    drops.push_back({{"column", d.column}, {"partner", d.partner}, {"correlation", d.correlation}, {"reason", d.reason}});
  }
  return {{"threshold", r.threshold},
          {"fit_rows", r.fit_rows},
          {"fit_last_date", r.fit_rows ? r.fit_last_date.iso() : ""},
          {"drops", drops}};
}

int cmd_ingest(const Options& o) {
  const auto c = load_config(o);
  const auto p = prepare(c);
  const auto& f = p.frame;

  std::size_t with_headline = 0;
  const auto picks = select_daily_headlines(p.records, f.dates, c.corpus_seed);
  for (const auto& d : f.dates) with_headline += picks.count(d);

  write_file(c.output / "frame.csv", frame_csv(f));
  write_file(c.output / "frame_meta.json", frame_meta(f).dump(2) + "\n");
  write_file(c.output / "prune_report.json", prune_json(p.prune).dump(2) + "\n");
  const json summary = {{"headlines", p.records.size()},
                        {"rows", f.rows()},
                        {"columns", f.width()},
                        {"dropped", p.prune.drops.size()},
                        {"days_with_headline", with_headline},
                        {"first_date", f.rows() ? f.dates.front().iso() : ""},
                        {"last_date", f.rows() ? f.dates.back().iso() : ""}};
  write_file(c.output / "corpus_summary.json", summary.dump(2) + "\n");

  std::cout << "headlines: " << p.records.size() << "\n"
            << "rows: " << f.rows() << "\n"
            << "columns: " << f.width() - p.prune.drops.size() << " kept, " << p.prune.drops.size() << " dropped\n"
            << "days with a headline: " << with_headline << "\n";
  for (const auto& d : p.prune.drops) {
    std::cout << "dropped " << d.column;
    if (!d.partner.empty()) std::cout << " (corr " << d.correlation << " with " << d.partner << ")";
    else std::cout << " (" << d.reason << ")";
    std::cout << "\n";
  }
  std::cout << "wrote " << (c.output / "frame.csv").string() << "\n";
  return 0;
}

int cmd_embed(const Options& o) {
  const auto c = load_config(o);
  cli::require_inputs(c);
  const auto records = load_headlines(c.headlines, c.whitelist);
  if (c.cache.has_parent_path()) fs::create_directories(c.cache.parent_path());
  EmbeddingCache cache(c.cache);
  if (cache.skipped_lines()) std::cerr << "cache: skipped " << cache.skipped_lines() << " unreadable lines\n";
  if (c.grid.embeddings.empty()) throw ConfigError("grid.embeddings lists no embedding model");

  for (const auto& axis : c.grid.embeddings) {
    ProviderConfig pc = c.provider;
    pc.model_id = axis.model_id;
    pc.dim = axis.native_dim;
    auto provider = make_provider(pc);
    const auto s = fetch_embeddings(records, *provider, pc, cache);
    const double secs = s.elapsed.count();
    std::cout << axis.model_id << ": " << s.fetched << " fetched, " << s.cached << " cached, " << s.failed
              << " failed in " << secs << " s";
    if (s.fetched && secs > 0) std::cout << " (" << static_cast<double>(s.fetched) / secs << " per s)";
    std::cout << "\n";
  }
  return 0;
}

DataContext load_context(const cli::RunConfig& c) {
  const auto p = prepare(c);
  std::map<std::string, DailyEmbeddings> daily;
  if (!c.grid.embeddings.empty()) {
    if (!fs::exists(c.cache)) throw DataError("missing embedding cache " + c.cache.string() + "; run embed first");
    const EmbeddingCache cache(c.cache);
    const auto picks = select_daily_headlines(p.records, p.frame.dates, c.corpus_seed);
    for (const auto& axis : c.grid.embeddings) {
      auto& d = daily[axis.model_id];
      std::size_t missing = 0;
      for (const auto& [date, hid] : picks) {
        if (auto v = cache.get(hid, axis.model_id)) {
          d.emplace(date, std::move(*v));
        } else {
          ++missing;
        }
      }
      if (missing) {
        throw DataError(std::to_string(missing) + " selected headlines have no " + axis.model_id +
                        " embedding in " + c.cache.string() + "; run embed first");
      }
    }
  }
  return build_context(p.frame, std::move(daily), c.grid);
}

int cmd_grid(const Options& o) {
  const auto c = load_config(o);
  const auto runs = filter_grid(enumerate_grid(c.grid), parse_filter(o.filters));
  if (o.dry_run) {
    std::cout << runs.size() << "\n";
    return 0;
  }
  if (runs.empty()) throw ConfigError("filter selects no runs");

  const auto ctx = load_context(c);
  ExecuteOptions eo;
  eo.results_dir = o.results_dir.empty() ? c.results : fs::path(o.results_dir);
  eo.resume = o.resume;
  std::mutex mu;
  std::atomic<std::size_t> started{0};
  eo.before_run = [&](const RunDescriptor& r) {
    const auto n = ++started;
    std::lock_guard lock(mu);
    std::cerr << "[" << n << "] " << r.id << "\n";
  };
  const auto s = execute_grid(runs, c.grid, ctx, eo);
  for (const auto& r : s.results) {
    if (!r.ok) std::cerr << "failed " << r.run.id << ": " << r.error << "\n";
  }
  std::cout << runs.size() << " runs: " << s.executed << " executed, " << s.reused << " reused, " << s.failed
            << " failed\n"
            << "results in " << eo.results_dir->string() << "\n";
  if (s.failed == runs.size()) throw Error("every run failed");
  return 0;
}

int cmd_report(const Options& o) {
  fs::path dir = o.results_dir;
  if (dir.empty()) dir = load_config(o).results;
  if (!fs::exists(dir / "runs")) throw DataError("no results in " + dir.string());
  const auto results = load_results(dir);
  const auto ok = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.ok; });
  if (ok == 0) throw DataError("no successful runs in " + dir.string());

  const auto board = leaderboard(results);
  const auto by_dim = min_smape_table(min_smape_by_pca(results));
  const auto uplift = headline_uplift(results);
  write_file(dir / "leaderboard.csv", board.to_csv());
  write_file(dir / "min_smape.csv", by_dim.to_csv());
  write_file(dir / "uplift.csv", uplift.to_table().to_csv());

  std::cout << ok << " successful runs of " << results.size() << "\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(board.rows.size(), 10); ++i) {
    const auto& row = board.rows[i];
    std::cout << row[0] << " " << row[1] << " test SMAPE " << row[5] << "\n";
  }
  if (!uplift.rows.empty()) {
    std::cout << "headline uplift: mean " << uplift.mean_uplift << ", min " << uplift.min_uplift << ", max "
              << uplift.max_uplift << " over " << uplift.rows.size() << " pairs\n";
  }
  for (const auto& n : uplift.notes) std::cout << "note: " << n << "\n";
  std::cout << "wrote leaderboard.csv, min_smape.csv, uplift.csv to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Headline-embedding market forecasting pipeline"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "JSON run configuration");
  app.add_option("--seed", o.seed, "Overrides grid and corpus seeds");

  auto* ingest = app.add_subcommand("ingest", "Load, align, prune and normalize inputs");
  auto* embed = app.add_subcommand("embed", "Fetch embeddings for every headline into the cache");
  auto* grid = app.add_subcommand("grid", "Execute the experiment grid");
  grid->add_flag("--resume", o.resume, "Reuse results already in the results directory");
  grid->add_flag("--dry-run", o.dry_run, "Print the number of selected runs and exit");
  grid->add_option("--filter", o.filters, "Axis selectors such as arch=FFNN transform=LOG_RETURN");
  grid->add_option("--results", o.results_dir, "Results directory (overrides the config)");
  auto* report = app.add_subcommand("report", "Write leaderboard, min-SMAPE and uplift reports");
  report->add_option("results", o.results_dir, "Results directory (defaults to the config's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(o);
    if (embed->parsed()) return cmd_embed(o);
    if (grid->parsed()) return cmd_grid(o);
    if (report->parsed()) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 3;
}

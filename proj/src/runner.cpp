#include "newscast/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "newscast/error.hpp"
#include "newscast/hash.hpp"

namespace newscast {

namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> powers_of_two(std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t d = 2; d <= hi; d *= 2) out.push_back(d);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_file_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

GridConfig GridConfig::defaults() {
  GridConfig c;
  EmbeddingAxis small{"text-embedding-3-small", 1536, powers_of_two(1024)};
  small.dims.push_back(1536);
  EmbeddingAxis large{"text-embedding-3-large", 3072, powers_of_two(1024)};
  large.dims.insert(large.dims.end(), {1536, 2048, 3072});
  c.embeddings = {small, large};
  return c;
}

void GridConfig::validate() const {
  if (architectures.empty()) throw ConfigError("grid: no architectures");
  if (transforms.empty()) throw ConfigError("grid: no transforms");
  if (parallelism < 1) throw ConfigError("grid: parallelism must be >= 1");
  if (epochs < 1) throw ConfigError("grid: epochs must be >= 1");
  if (search_budget > 0 && search_folds < 2) throw ConfigError("grid: search needs >= 2 folds");
  std::set<std::string> models;
  for (const auto& e : embeddings) {
    if (e.model_id.empty()) throw ConfigError("grid: embedding model id is empty");
    if (!models.insert(e.model_id).second) throw ConfigError("grid: duplicate embedding model " + e.model_id);
    if (e.native_dim < 1) throw ConfigError("grid: " + e.model_id + " needs a native dimension");
    std::set<std::size_t> seen;
    for (auto d : e.dims) {
      if (d < 1 || d > e.native_dim) {
        throw ConfigError("grid: " + e.model_id + " dimension " + std::to_string(d) + " outside [1, " +
                          std::to_string(e.native_dim) + "]");
      }
      if (!seen.insert(d).second) throw ConfigError("grid: duplicate dimension " + std::to_string(d));
    }
  }
}

std::string dim_label(const RunDescriptor& d) {
  switch (d.kind) {
    case HeadlineKind::None:
      return "none";
    case HeadlineKind::Pca:
      return std::to_string(d.dim);
    case HeadlineKind::Native:
      return "native" + std::to_string(d.dim);
  }
  return "?";
}

std::vector<RunDescriptor> enumerate_grid(const GridConfig& config) {
  config.validate();
  std::vector<RunDescriptor> out;
  for (auto arch : config.architectures) {
    for (auto transform : config.transforms) {
      for (const auto& axis : config.embeddings) {
        std::vector<RunDescriptor> group;
        for (auto d : axis.dims) {
          RunDescriptor r{"", arch, transform, axis.model_id, HeadlineKind::Pca, d};
          if (d == axis.native_dim) r.kind = HeadlineKind::Native;
          group.push_back(r);
        }
        group.push_back({"", arch, transform, axis.model_id, HeadlineKind::None, 0});
        for (auto& r : group) {
          r.id = std::string(to_string(arch)) + "__" + std::string(to_string(transform)) + "__" + axis.model_id + "__" +
                 dim_label(r);
          out.push_back(std::move(r));
        }
      }
    }
  }
  return out;
}

std::size_t expected_grid_size(const GridConfig& config) {
  std::size_t per = 0;
  for (const auto& e : config.embeddings) per += e.dims.size() + 1;
  return config.architectures.size() * config.transforms.size() * per;
}

bool GridFilter::matches(const RunDescriptor& d) const {
  const auto allowed = [](const auto& list, const auto& v) {
    return list.empty() || std::find(list.begin(), list.end(), v) != list.end();
  };
  return allowed(archs, d.arch) && allowed(transforms, d.transform) && allowed(models, d.model_id) &&
         allowed(dims, dim_label(d));
}

GridFilter parse_filter(const std::vector<std::string>& selectors) {
  GridFilter f;
  for (const auto& sel : selectors) {
    const auto eq = sel.find('=');
    if (eq == std::string::npos) throw ConfigError("filter '" + sel + "' is not axis=value");
    const std::string axis = sel.substr(0, eq);
    const auto values = split(sel.substr(eq + 1), ',');
    if (values.empty()) throw ConfigError("filter '" + sel + "' has no values");
    for (const auto& v : values) {
      if (axis == "arch") {
        f.archs.push_back(parse_arch(v));
      } else if (axis == "transform") {
        f.transforms.push_back(parse_transform(v));
      } else if (axis == "model") {
        f.models.push_back(v);
      } else if (axis == "dim") {
        f.dims.push_back(v);
      } else {
        throw ConfigError("unknown filter axis '" + axis + "' (expected arch, transform, model or dim)");
      }
    }
  }
  return f;
}

std::vector<RunDescriptor> filter_grid(const std::vector<RunDescriptor>& runs, const GridFilter& filter) {
  std::vector<RunDescriptor> out;
  std::copy_if(runs.begin(), runs.end(), std::back_inserter(out), [&](const auto& r) { return filter.matches(r); });
  return out;
}

std::uint64_t run_seed(std::uint64_t global_seed, const std::string& run_id) {
  return hash_combine(global_seed, fnv1a64(run_id));
}

// ---------------------------------------------------------------------------

DataContext build_context(AlignedFrame frame, std::map<std::string, DailyEmbeddings> daily, const GridConfig& config) {
  DataContext ctx;
  ctx.frame = std::move(frame);
  const auto& ranges = config.variant.splits;
  for (const auto& axis : config.embeddings) {
    const auto it = daily.find(axis.model_id);
    if (it == daily.end()) throw DataError("no embeddings loaded for model " + axis.model_id);
    std::size_t want = 0;
    for (auto d : axis.dims) {
      if (d != axis.native_dim) want = std::max(want, d);
    }
    if (want > 0) {
      // Training-range frame days only, in date order.
      std::vector<const EmbeddingVector*> rows;
      PcaProvenance prov;
      for (Date d : ctx.frame.dates) {
        if (split_of(ranges, d) != Split::Train) continue;
        const auto e = it->second.find(d);
        if (e == it->second.end()) continue;
        if (e->second.dim() != axis.native_dim) {
          throw DataError(axis.model_id + " embedding for " + d.iso() + " has width " +
                          std::to_string(e->second.dim()) + ", expected " + std::to_string(axis.native_dim));
        }
        if (rows.empty()) prov.first_date = d;
        prov.last_date = d;
        rows.push_back(&e->second);
      }
      prov.fit_rows = rows.size();
      if (rows.size() < 2) throw DataError(axis.model_id + ": fewer than 2 training-range embeddings for PCA");
      Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(axis.native_dim));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) =
            Eigen::Map<const Eigen::RowVectorXd>(rows[r]->values.data(), static_cast<Eigen::Index>(axis.native_dim));
      }
      const std::size_t k = std::min(want, std::min(rows.size() - 1, axis.native_dim));
      ctx.pca.emplace(axis.model_id, fit_pca(x, k));
      ctx.pca_fit.emplace(axis.model_id, prov);
    }
    ctx.daily.emplace(axis.model_id, std::move(it->second));
  }
  return ctx;
}

DatasetVariant variant_for(const RunDescriptor& run, const GridConfig& config, const DataContext& ctx) {
  VariantOptions o = config.variant;
  o.transform = run.transform;
  o.seed = run_seed(config.seed, run.id);
  if (run.kind == HeadlineKind::None) return build_variant(ctx.frame, nullptr, nullptr, "", o);

  const auto daily = ctx.daily.find(run.model_id);
  if (daily == ctx.daily.end()) throw DataError("no embeddings for model " + run.model_id);
  if (run.kind == HeadlineKind::Native) return build_variant(ctx.frame, &daily->second, nullptr, run.model_id, o);

  const auto pca = ctx.pca.find(run.model_id);
  if (pca == ctx.pca.end()) throw DataError("no PCA fitted for model " + run.model_id);
  if (run.dim > pca->second.k()) {
    throw DataError("PCA width " + std::to_string(run.dim) + " exceeds the " + std::to_string(pca->second.k()) +
                    " components available from " + std::to_string(pca->second.fitted_on) + " training embeddings");
  }
  const PcaModel model = pca->second.truncated(run.dim);
  return build_variant(ctx.frame, &daily->second, &model, run.model_id, o);
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const RunResult& r) {
  nlohmann::json j;
  j["id"] = r.run.id;
  j["arch"] = std::string(to_string(r.run.arch));
  j["transform"] = std::string(to_string(r.run.transform));
  j["embedding_model"] = r.run.model_id;
  j["headline"] = r.run.kind == HeadlineKind::None ? "none" : r.run.kind == HeadlineKind::Pca ? "pca" : "native";
  j["dim"] = r.run.dim;
  j["status"] = r.ok ? "ok" : "failed";
  if (!r.ok) j["error"] = r.error;
  j["seed"] = r.seed;
  j["wall_seconds"] = r.wall_seconds;
  if (r.ok) {
    j["spec"] = to_json(r.spec);
    j["metrics"] = to_json(r.metrics);
    j["search_score"] = r.search_score;
  }
  return j;
}

RunResult run_result_from_json(const nlohmann::json& j) {
  try {
    RunResult r;
    r.run.id = j.at("id").get<std::string>();
    r.run.arch = parse_arch(j.at("arch").get<std::string>());
    r.run.transform = parse_transform(j.at("transform").get<std::string>());
    r.run.model_id = j.at("embedding_model").get<std::string>();
    const auto kind = j.at("headline").get<std::string>();
    r.run.kind = kind == "none" ? HeadlineKind::None : kind == "pca" ? HeadlineKind::Pca : HeadlineKind::Native;
    if (kind != "none" && kind != "pca" && kind != "native") throw DataError("bad headline kind '" + kind + "'");
    r.run.dim = j.at("dim").get<std::size_t>();
    r.ok = j.at("status").get<std::string>() == "ok";
    r.error = j.value("error", std::string{});
    r.seed = j.at("seed").get<std::uint64_t>();
    r.wall_seconds = j.value("wall_seconds", 0.0);
    if (r.ok) {
      r.spec = model_spec_from_json(j.at("spec"));
      r.metrics = metrics_from_json(j.at("metrics"));
      r.search_score = j.value("search_score", 0.0);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run result: ") + e.what());
  }
}

RunResult execute_run(const RunDescriptor& run, const GridConfig& config, const DataContext& ctx) {
  RunResult r;
  r.run = run;
  r.seed = run_seed(config.seed, run.id);
  const DatasetVariant v = variant_for(run, config, ctx);

  ModelSpec base = config.base;
  base.arch = run.arch;
  base.input_dim = v.features;
  base.window = v.window;
  base.output_dim = 1;
  base.epochs = config.epochs;
  base.seed = r.seed;

  ModelSpec best = base;
  if (config.search_budget > 0) {
    const auto search = hyperparameter_search(base, config.space, config.search_budget, v, r.seed,
                                              config.search_folds, config.search_epochs);
    best = search.best;
    best.epochs = config.epochs;
    r.search_score = search.best_score;
  }
  best.batch_size = std::min(best.batch_size, v.train.size());
  const TrainedModel model = train(best, v);

  std::vector<std::size_t> train_idx = v.train;
  std::sort(train_idx.begin(), train_idx.end());
  std::vector<double> ytr, yte;
  for (auto i : train_idx) ytr.push_back(v.y[i]);
  for (auto i : v.test) yte.push_back(v.y[i]);
  r.metrics = evaluate(ytr, predict_rows(model, v, train_idx), yte, predict_rows(model, v, v.test));
  for (double m : {r.metrics.train_mse, r.metrics.test_mse, r.metrics.train_smape, r.metrics.test_smape,
                   r.metrics.train_r2, r.metrics.test_r2}) {
    if (!std::isfinite(m)) throw NumericError("non-finite metric");
  }
  r.spec = best;
  r.ok = true;
  return r;
}

GridSummary execute_grid(const std::vector<RunDescriptor>& runs, const GridConfig& config, const DataContext& ctx,
                         const ExecuteOptions& options) {
  config.validate();
  {
    std::set<std::string> ids;
    for (const auto& r : runs) {
      if (!ids.insert(r.id).second) throw ConfigError("duplicate run id " + r.id);
    }
  }
  fs::path run_dir;
  if (options.results_dir) {
    run_dir = *options.results_dir / "runs";
    fs::create_directories(run_dir);
  }

  GridSummary summary;
  summary.results.resize(runs.size());
  std::vector<char> reused(runs.size(), 0);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const fs::path file = run_dir / (runs[i].id + ".json");
    if (options.results_dir && options.resume && fs::exists(file)) {
      std::ifstream in(file);
      const auto j = nlohmann::json::parse(in, nullptr, false);
      if (!j.is_discarded()) {
        summary.results[i] = run_result_from_json(j);
        reused[i] = 1;
        continue;
      }
    }
    todo.push_back(i);
  }

  std::atomic<std::size_t> next{0};
  std::mutex sink_mu;
  std::exception_ptr io_error;
  const auto worker = [&] {
    while (true) {
      const std::size_t t = next.fetch_add(1);
      if (t >= todo.size()) return;
      {
        std::lock_guard lock(sink_mu);
        if (io_error) return;
      }
      const std::size_t i = todo[t];
      const auto started = std::chrono::steady_clock::now();
      RunResult r;
      try {
        if (options.before_run) options.before_run(runs[i]);
        r = execute_run(runs[i], config, ctx);
      } catch (const std::exception& e) {
        r = RunResult{};
        r.run = runs[i];
        r.seed = run_seed(config.seed, runs[i].id);
        r.ok = false;
        r.error = e.what();
      }
      r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      std::lock_guard lock(sink_mu);
      try {
        if (options.results_dir) write_file_atomically(run_dir / (r.run.id + ".json"), to_json(r).dump(2) + "\n");
      } catch (...) {
        if (!io_error) io_error = std::current_exception();
      }
      summary.results[i] = std::move(r);
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(config.parallelism, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (io_error) std::rethrow_exception(io_error);

  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (reused[i]) {
      ++summary.reused;
    } else {
      ++summary.executed;
    }
    if (!summary.results[i].ok) ++summary.failed;
  }
  if (options.results_dir) write_results_csv(summary.results, *options.results_dir / "results.csv");
  return summary;
}

std::vector<RunResult> load_results(const fs::path& results_dir) {
  const fs::path run_dir = results_dir / "runs";
  if (!fs::is_directory(run_dir)) throw DataError("no runs directory in " + results_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunResult> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("unparseable run result " + f.string());
    out.push_back(run_result_from_json(j));
  }
  return out;
}

void write_results_csv(const std::vector<RunResult>& results, const fs::path& path) {
  std::ostringstream out;
  out << "id,arch,transform,embedding_model,dim,status,train_mse,test_mse,train_smape,test_smape,train_r2,test_r2,"
         "hidden_dim,dropout,learning_rate,batch_size,seed,wall_seconds,error\n";
  for (const auto& r : results) {
    out << csv_field(r.run.id) << ',' << to_string(r.run.arch) << ',' << to_string(r.run.transform) << ','
        << csv_field(r.run.model_id) << ',' << dim_label(r.run) << ',' << (r.ok ? "ok" : "failed");
    if (r.ok) {
      const auto& m = r.metrics;
      for (double v : {m.train_mse, m.test_mse, m.train_smape, m.test_smape, m.train_r2, m.test_r2}) out << ',' << fmt(v);
      out << ',' << r.spec.hidden_dim << ',' << fmt(r.spec.dropout) << ',' << r.spec.learning_rate << ','
          << r.spec.batch_size;
    } else {
      out << ",,,,,,,,,,";
    }
    out << ',' << r.seed << ',' << fmt(r.wall_seconds) << ',' << csv_field(r.error) << '\n';
  }
  write_file_atomically(path, out.str());
}

// ---------------------------------------------------------------------------

std::string Table::to_csv() const {
  std::string out;
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      out += csv_field(cells[i]);
    }
    out.push_back('\n');
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

Table leaderboard(const std::vector<RunResult>& results, std::size_t top) {
  std::vector<const RunResult*> ok;
  for (const auto& r : results) {
    if (r.ok) ok.push_back(&r);
  }
  if (ok.empty()) throw DataError("leaderboard: no successful runs");
  std::stable_sort(ok.begin(), ok.end(), [](const RunResult* a, const RunResult* b) {
    if (a->metrics.test_smape != b->metrics.test_smape) return a->metrics.test_smape < b->metrics.test_smape;
    return a->run.id < b->run.id;
  });
  if (top > 0 && ok.size() > top) ok.resize(top);
  Table t;
  t.header = {"Architecture", "PCA Dimension", "Train MSE", "Test MSE", "Train SMAPE", "Test SMAPE", "Train R2", "Test R2"};
  for (const auto* r : ok) {
    const auto& m = r->metrics;
    t.rows.push_back({std::string(to_string(r->run.arch)), dim_label(r->run), fmt(m.train_mse), fmt(m.test_mse),
                      fmt(m.train_smape), fmt(m.test_smape), fmt(m.train_r2), fmt(m.test_r2)});
  }
  return t;
}

std::map<std::string, double> min_smape_by_pca(const std::vector<RunResult>& results) {
  std::map<std::string, double> out;
  for (const auto& r : results) {
    if (!r.ok) continue;
    const auto label = dim_label(r.run);
    const auto it = out.find(label);
    if (it == out.end() || r.metrics.test_smape < it->second) out[label] = r.metrics.test_smape;
  }
  return out;
}

Table min_smape_table(const std::map<std::string, double>& by_dim) {
  std::vector<std::pair<std::string, double>> rows(by_dim.begin(), by_dim.end());
  const auto rank = [](const std::string& label) -> std::pair<int, std::size_t> {
    if (label == "none") return {0, 0};
    if (label.starts_with("native")) return {2, std::stoul(label.substr(6))};
    return {1, std::stoul(label)};
  };
  std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) { return rank(a.first) < rank(b.first); });
  Table t;
  t.header = {"PCA Dimension", "Min Test SMAPE"};
  for (const auto& [label, v] : rows) t.rows.push_back({label, fmt(v)});
  return t;
}

UpliftReport headline_uplift(const std::vector<RunResult>& results) {
  UpliftReport rep;
  std::map<std::pair<Arch, TransformKind>, std::pair<const RunResult*, const RunResult*>> best;  // none, headline
  for (const auto& r : results) {
    if (!r.ok) continue;
    auto& slot = best[{r.run.arch, r.run.transform}];
    auto& cur = r.run.kind == HeadlineKind::None ? slot.first : slot.second;
    if (!cur || r.metrics.test_smape < cur->metrics.test_smape) cur = &r;
  }
  for (const auto& [key, pair] : best) {
    const std::string name = std::string(to_string(key.first)) + "/" + std::string(to_string(key.second));
    if (!pair.first || !pair.second) {
      rep.notes.push_back(name + ": skipped, missing " + (pair.first ? "headline" : "no-headline") + " runs");
      continue;
    }
    const double none = pair.first->metrics.test_smape;
    if (!(none > 0.0)) {
      rep.notes.push_back(name + ": skipped, no-headline SMAPE is zero");
      continue;
    }
    UpliftRow row{key.first, key.second, none, pair.second->metrics.test_smape, pair.second->run.id, 0.0};
    row.uplift = (row.smape_none - row.smape_best_headline) / row.smape_none;
    rep.rows.push_back(row);
  }
  if (!rep.rows.empty()) {
    double sum = 0.0;
    rep.min_uplift = rep.max_uplift = rep.rows.front().uplift;
    for (const auto& r : rep.rows) {
      sum += r.uplift;
      rep.min_uplift = std::min(rep.min_uplift, r.uplift);
      rep.max_uplift = std::max(rep.max_uplift, r.uplift);
    }
    rep.mean_uplift = sum / static_cast<double>(rep.rows.size());
  }
  return rep;
}

Table UpliftReport::to_table() const {
  Table t;
  t.header = {"Architecture", "Transform", "No-headline Test SMAPE", "Best Headline Test SMAPE", "Best Run", "Uplift"};
  for (const auto& r : rows) {
    t.rows.push_back({std::string(to_string(r.arch)), std::string(to_string(r.transform)), fmt(r.smape_none),
                      fmt(r.smape_best_headline), r.best_run, fmt(r.uplift)});
  }
  if (!rows.empty()) t.rows.push_back({"ALL", "mean", "", "", "", fmt(mean_uplift)});
  return t;
}

}  // namespace newscast

// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "newscast/error.hpp"
#include "newscast/metrics.hpp"
#include "newscast/runner.hpp"
#include "testing/oracles.hpp"
#include "testing/synthetic.hpp"

using namespace newscast;
namespace syn = newscast::testing;
namespace fs = std::filesystem;

namespace {

// Collects failed checks; a criterion passes when none were recorded.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return !failed_; }
  std::string summary() const {
    std::string out;
    for (const auto& s : failed_ ? failures_ : notes_) out += (out.empty() ? "" : "; ") + s;
    return out;
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

Eigen::MatrixXd random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  return x;
}

// ---------------------------------------------------------------------------

void metric_oracles(Checks& c) {
  std::mt19937_64 rng(2024);
  double worst_mse = 0, worst_r2 = 0, worst_smape = 0;
  for (int pair = 0; pair < 1000; ++pair) {
    const std::size_t n = 2 + rng() % 200;
    const auto y = random_vector(rng, n, 1.0);
    auto yhat = y;
    const auto noise = random_vector(rng, n, 0.5);
    for (std::size_t i = 0; i < n; ++i) yhat[i] += noise[i];
    worst_mse = std::max(worst_mse, std::abs(mse(y, yhat) - syn::oracle_mse(y, yhat)));
    worst_r2 = std::max(worst_r2, std::abs(r2(y, yhat) - syn::oracle_r2(y, yhat)));
    worst_smape = std::max(worst_smape, std::abs(smape(y, yhat) - syn::oracle_smape(y, yhat)));
  }
  c.expect(worst_mse <= 1e-12, "mse deviation " + fmt(worst_mse));
  c.expect(worst_r2 <= 1e-12, "r2 deviation " + fmt(worst_r2));
  c.expect(worst_smape <= 1e-9, "smape deviation " + fmt(worst_smape));
  const std::vector<double> y{100.0}, yhat{110.0};
  const double s = smape(y, yhat);
  c.expect(std::abs(s - 9.5238) <= 1e-4, "smape(100, 110) = " + fmt(s, 10));
  c.note("max deviations mse " + fmt(worst_mse, 3) + ", r2 " + fmt(worst_r2, 3) + ", smape " + fmt(worst_smape, 3) +
         "; smape(100, 110) = " + fmt(s, 8));
}

void gradient_suite(Checks& c) {
  for (Arch arch : kAllArchs) {
    for (double dropout : {0.0, 0.3}) {
      ModelSpec s;
      s.arch = arch;
      s.input_dim = 2;
      s.window = 3;
      s.hidden_dim = 4;
      s.num_hidden_layers = 2;
      s.num_states = 2;
      s.kernel_size = 2;
      s.num_blocks = 2;
      s.dropout = dropout;
      ParameterSet params = init_params(s);
      std::mt19937_64 rng(5);
      std::uniform_real_distribution<double> u(-0.3, 0.3);
      for (auto& v : params.values) {
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] += u(rng);
      }
      SequenceBatch batch;
      for (std::size_t t = 0; t < s.window; ++t) batch.push_back(random_matrix(5, 2, 17 + t));
      const Eigen::MatrixXd targets = random_matrix(5, 1, 3);
      const Mode mode = dropout > 0 ? Mode::Training : Mode::Inference;
      const auto analytic = loss_and_grad(s, params, batch, targets, mode, 99);
      const auto numeric = syn::finite_difference_gradient(
          params, [&](const ParameterSet& p) { return loss_and_grad(s, p, batch, targets, mode, 99).loss; });
      double worst = 0.0;
      for (std::size_t t = 0; t < numeric.size(); ++t) {
        for (Eigen::Index i = 0; i < numeric[t].size(); ++i) {
          const double a = analytic.grads[t].data()[i], b = numeric[t].data()[i];
          worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}));
        }
      }
      const std::string label = std::string(to_string(arch)) + (dropout > 0 ? "+dropout" : "");
      c.expect(worst < 1e-4, label + " relative error " + fmt(worst, 3));
      c.note(label + " " + fmt(worst, 2));
    }
  }
}

void pca_algebra(Checks& c) {
  double worst_orth = 0, worst_eig = 0, worst_recon = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Eigen::MatrixXd x = random_matrix(50, 20, seed);
    const auto full = fit_pca(x, 20);
    const Eigen::MatrixXd gram = full.components * full.components.transpose();
    worst_orth = std::max(worst_orth, (gram - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff());
    const auto oracle = syn::jacobi_eigen(syn::naive_covariance(x));
    for (int i = 0; i < 20; ++i) {
      worst_eig = std::max(worst_eig, std::abs(full.eigenvalues[i] - oracle.eigenvalues[static_cast<std::size_t>(i)]));
    }
    const Eigen::MatrixXd back = reconstruct_rows(full, project_rows(full, x));
    worst_recon = std::max(worst_recon, (back - x).norm() / x.norm());
  }
  c.expect(worst_orth < 1e-8, "orthonormality " + fmt(worst_orth, 3));
  c.expect(worst_eig < 1e-8, "eigenvalue disagreement " + fmt(worst_eig, 3));
  c.expect(worst_recon < 1e-8, "k=d reconstruction " + fmt(worst_recon, 3));

  // Rank one: every row a multiple of one direction plus a shared offset.
  Eigen::VectorXd dir = random_matrix(6, 1, 99).col(0).normalized();
  const Eigen::VectorXd offset = random_matrix(6, 1, 98).col(0);
  Eigen::MatrixXd r1(30, 6);
  for (int i = 0; i < 30; ++i) r1.row(i) = (offset + (i - 14.5) * 0.3 * dir).transpose();
  const auto m = fit_pca(r1, 1);
  const double align = std::abs(m.components.row(0).dot(dir));
  const double r1_err = (reconstruct_rows(m, project_rows(m, r1)) - r1).cwiseAbs().maxCoeff();
  c.expect(std::abs(align - 1.0) < 1e-10, "rank-1 direction off by " + fmt(1 - align, 3));
  c.expect(r1_err < 1e-10, "rank-1 reconstruction " + fmt(r1_err, 3));
  c.note("orthonormality " + fmt(worst_orth, 2) + ", eigenvalues " + fmt(worst_eig, 2) + ", reconstruction " +
         fmt(worst_recon, 2) + ", rank-1 " + fmt(r1_err, 2));
}

void pruning_oracle(Checks& c) {
  const auto frame = syn::prune_fixture(3000, 0.96, 11);
  const auto [pruned, report] = prune_correlated(frame, SplitRanges{}, 0.95);
  c.expect(frame.width() == 6, "fixture has " + std::to_string(frame.width()) + " columns");
  c.expect(report.drops.size() == 2, std::to_string(report.drops.size()) + " columns dropped");
  std::map<std::string, PruneDrop> by;
  for (const auto& d : report.drops) by[d.column] = d;
  c.expect(by.count("F.dup_a") && by["F.dup_a"].partner == "F.a", "duplicate not dropped against F.a");
  c.expect(by.count("F.corr_b") && by["F.corr_b"].partner == "F.b", "correlated column not dropped against F.b");
  if (by.count("F.dup_a")) c.expect(std::abs(by["F.dup_a"].correlation - 1.0) < 1e-12, "duplicate corr");
  if (by.count("F.corr_b")) c.expect(std::abs(by["F.corr_b"].correlation - 0.96) < 1e-9, "partner corr");
  for (const auto& d : report.drops) c.note(d.column + " -> " + d.partner + " (" + fmt(d.correlation, 6) + ")");
}

std::string run_command(const std::string& cmd, int& code) {
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) throw Error("cannot run " + cmd);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

void grid_count(Checks& c) {
  int code = 0;
  const auto out = run_command(std::string(NEWSCAST_CLI_PATH) + " grid --dry-run", code);
  c.expect(code == 0 && out == "390\n", "dry run printed '" + out + "' with exit " + std::to_string(code));

  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    GridConfig g;
    std::vector<Arch> archs(kAllArchs.begin(), kAllArchs.end());
    std::shuffle(archs.begin(), archs.end(), rng);
    g.architectures.assign(archs.begin(), archs.begin() + 1 + static_cast<std::ptrdiff_t>(rng() % 5));
    g.transforms.assign(kAllTransforms.begin(), kAllTransforms.begin() + 1 + static_cast<std::ptrdiff_t>(rng() % 3));
    std::size_t sum = 0;
    for (std::size_t m = 0, models = rng() % 4; m < models; ++m) {
      EmbeddingAxis axis{"m" + std::to_string(m), 256, {}};
      for (std::size_t d = 2; d <= 256; d *= 2) {
        if (rng() % 3) axis.dims.push_back(d);
      }
      sum += axis.dims.size() + 1;
      g.embeddings.push_back(axis);
    }
    const std::size_t law = g.architectures.size() * g.transforms.size() * sum;
    const auto runs = enumerate_grid(g);
    std::set<std::string> ids;
    for (const auto& r : runs) ids.insert(r.id);
    c.expect(runs.size() == law && ids.size() == law,
             "trial " + std::to_string(trial) + ": " + std::to_string(runs.size()) + " runs, law says " +
                 std::to_string(law));
  }
  c.note("dry run printed " + out.substr(0, out.find('\n')) + "; count law held on 20 random configs");
}

// Planted-signal market data with an embedding model of width `dim`.
DataContext planted_context(const syn::PlantedSignal& p, const GridConfig& config) {
  std::map<std::string, DailyEmbeddings> daily{{p.model_id, p.daily}};
  return build_context(normalize_with_train_stats(p.frame, config.variant.splits), std::move(daily), config);
}

void determinism(Checks& c) {
  const auto p = syn::planted_signal(Date(2012, 1, 1), Date(2017, 12, 31), 16, 21, 0.0005, "planted-16");
  GridConfig g;
  g.architectures = {Arch::FFNN, Arch::GRU};
  g.transforms = {TransformKind::LogReturn, TransformKind::LinearDiff};
  g.embeddings = {{"planted-16", 16, {2, 16}}};
  g.epochs = 15;
  g.search_budget = 2;
  g.search_folds = 2;
  g.search_epochs = 3;
  g.space.hidden_dims = {4, 8};
  g.space.batch_sizes = {32, 64};
  g.seed = 3;
  const auto runs = enumerate_grid(g);
  c.expect(runs.size() == 12, std::to_string(runs.size()) + " runs instead of 12");
  const auto ctx = planted_context(p, g);

  const auto first = execute_grid(runs, g, ctx);
  const auto second = execute_grid(runs, g, ctx);
  g.parallelism = 4;
  const auto parallel = execute_grid(runs, g, ctx);
  std::size_t same = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& a = first.results[i];
    c.expect(a.ok, runs[i].id + " failed: " + a.error);
    const bool eq = a.metrics == second.results[i].metrics && a.metrics == parallel.results[i].metrics &&
                    a.spec == second.results[i].spec && a.spec == parallel.results[i].spec &&
                    a.search_score == parallel.results[i].search_score;
    c.expect(eq, runs[i].id + " differs between executions");
    same += eq;
  }
  c.note(std::to_string(same) + "/12 runs bit-identical across two serial executions and parallelism 4");
}

void synthetic_uplift(Checks& c) {
  const auto p = syn::planted_signal(Date(2010, 1, 1), Date(2019, 12, 31), 32, 7, 0.0005, "planted-32");
  GridConfig g;
  g.architectures = {Arch::FFNN};
  g.transforms = {TransformKind::LogReturn};
  g.embeddings = {{"planted-32", 32, {2, 4, 8, 16, 32}}};
  g.epochs = 150;
  g.search_budget = 4;
  g.search_folds = 3;
  g.search_epochs = 30;
  g.space.hidden_dims = {16, 32};
  g.space.batch_sizes = {32, 64};
  g.seed = 1;
  const auto ctx = planted_context(p, g);
  const auto summary = execute_grid(enumerate_grid(g), g, ctx);
  c.expect(summary.failed == 0, std::to_string(summary.failed) + " runs failed");
  const auto u = headline_uplift(summary.results);
  c.expect(u.rows.size() == 1, "no FFNN/LOG_RETURN pair");
  if (u.rows.empty()) return;
  const auto& row = u.rows.front();
  c.expect(row.uplift >= 0.40, "uplift " + fmt(row.uplift, 4) + " below 0.40");
  c.note("no-headline SMAPE " + fmt(row.smape_none, 5) + ", best " + row.best_run + " SMAPE " +
         fmt(row.smape_best_headline, 5) + ", uplift " + fmt(row.uplift, 4));
}

void training_sanity(Checks& c) {
  const auto problem = syn::linear_variant(800, 200, 5, 0.01, 13);
  ModelSpec s = spec_for(Arch::FFNN, problem.variant);
  s.epochs = 500;
  s.hidden_dim = 32;
  s.dropout = 0.0;
  s.learning_rate = 1e-3;
  s.batch_size = 32;
  s.seed = 5;
  const auto m = train(s, problem.variant);
  std::vector<double> y;
  for (auto r : problem.variant.test) y.push_back(problem.variant.y[r]);
  const double score = r2(y, predict_rows(m, problem.variant, problem.variant.test));
  c.expect(score > 0.95, "test R2 " + fmt(score, 5));
  c.note("test R2 " + fmt(score, 6) + " after 500 epochs");
}

std::vector<HeadlineRecord> numbered_records(std::size_t n) {
  std::vector<HeadlineRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    HeadlineRecord r;
    r.date = Date(2005, 1, 3).plus_days(static_cast<int>(i % 5000));
    r.category = "markets";
    r.text = "Record " + std::to_string(i);
    r.id = headline_id(r.date, r.text);
    out.push_back(r);
  }
  return out;
}

ProviderConfig fetch_config(std::size_t workers, std::size_t writers) {
  ProviderConfig pc;
  pc.model_id = "mock";
  pc.dim = 8;
  pc.workers = workers;
  pc.writer_count = writers;
  pc.flush_threshold = 100;
  pc.backoff = std::chrono::milliseconds(1);
  return pc;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

void concurrency(Checks& c) {
  const auto records = numbered_records(10000);
  syn::TempDir dir;

  EmbeddingCache reference;
  syn::MockLatencyProvider instant("mock", 8, 0, std::chrono::microseconds(0), std::chrono::microseconds(0));
  fetch_embeddings(records, instant, fetch_config(1, 1), reference);
  const auto expected = reference.entries();
  c.expect(expected.size() == 10000, "sequential run stored " + std::to_string(expected.size()));

  double slowest = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto path = dir / ("rep" + std::to_string(rep) + ".jsonl");
    // Delays drawn per call from [5, 15] ms, averaging 10 ms.
    syn::MockLatencyProvider mock("mock", 8, 0, std::chrono::milliseconds(5), std::chrono::milliseconds(15));
    {
      EmbeddingCache cache(path);
      const auto stats = fetch_embeddings(records, mock, fetch_config(200, 4), cache);
      slowest = std::max(slowest, stats.elapsed.count());
      c.expect(stats.fetched == 10000 && stats.failed == 0, "rep " + std::to_string(rep) + " fetched " +
                                                                 std::to_string(stats.fetched));
      c.expect(stats.flushes == 101, "rep " + std::to_string(rep) + " flushes " + std::to_string(stats.flushes));
    }
    c.expect(line_count(path) == 10000, "rep " + std::to_string(rep) + " wrote " + std::to_string(line_count(path)) +
                                            " lines");
    const EmbeddingCache reloaded(path);
    c.expect(reloaded.entries() == expected, "rep " + std::to_string(rep) + " differs from the sequential map");
  }

  // A writer killed between flushes leaves a loadable prefix.
  const auto kill_path = dir / "killed.jsonl";
  const pid_t pid = ::fork();
  if (pid == 0) {
    class KillingStore : public EmbeddingStore {
     public:
      explicit KillingStore(const fs::path& p) : cache(p) {}
      bool contains(HeadlineId h, std::string_view m) const override { return cache.contains(h, m); }
      void append(std::span<const CacheEntry> batch) override {
        cache.append(batch);
        if (++n == 5) ::kill(::getpid(), SIGKILL);
      }
      EmbeddingCache cache;
      int n = 0;
    } store(kill_path);
    syn::MockLatencyProvider mock("mock", 8, 0, std::chrono::microseconds(0), std::chrono::microseconds(200));
    fetch_embeddings(records, mock, fetch_config(200, 4), store);
    ::_exit(0);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  c.expect(WIFSIGNALED(status), "child was not killed");
  EmbeddingCache survivor(kill_path);
  const std::size_t prefix = survivor.size();
  c.expect(prefix == 500 && survivor.skipped_lines() == 0,
           "prefix holds " + std::to_string(prefix) + " entries, " +
               std::to_string(survivor.skipped_lines()) + " skipped");
  for (const auto& [key, v] : survivor.entries()) {
    const auto it = expected.find(key);
    c.expect(it != expected.end() && it->second == v, "prefix entry differs");
  }
  syn::MockLatencyProvider resume("mock", 8, 0, std::chrono::microseconds(0), std::chrono::microseconds(0));
  const auto stats = fetch_embeddings(records, resume, fetch_config(200, 4), survivor);
  c.expect(stats.cached == 500 && stats.fetched == 9500, "resume fetched " + std::to_string(stats.fetched));
  c.expect(EmbeddingCache(kill_path).entries() == expected, "resumed cache differs from the sequential map");
  c.note("20 reps lossless and duplicate-free, slowest " + fmt(slowest, 3) + " s; kill after 5 flushes left " +
         std::to_string(prefix) + " clean entries");
}

void entropy_snr(Checks& c) {
  std::vector<double> values(5800);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.001 * static_cast<double>(i) + 17.0;
  std::shuffle(values.begin(), values.end(), std::mt19937_64(1));
  const double h = shannon_entropy(values);
  c.expect(std::abs(h - 12.50) <= 0.01, "entropy " + fmt(h, 6));
  c.expect(std::abs(h - std::log2(5800.0)) < 1e-9, "entropy differs from log2(5800)");
  std::vector<double> alt(1000);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? -1.0 : 1.0;
  const double s = snr(alt);
  c.expect(s == 0.0, "snr of alternating series " + fmt(s));
  c.note("entropy " + fmt(h, 6) + " bits, snr " + fmt(s));
}

// Independent leakage scan. Every feature in a row must be reproducible from
// frame rows dated no later than the row's anchor, and every statistic must
// be unchanged when post-training data is rewritten.
void leakage_guard(Checks& c) {
  const SplitRanges ranges;
  auto p = syn::planted_signal(Date(2012, 1, 1), Date(2021, 12, 31), 12, 5, 0.0005, "planted-12");
  // Extra columns so pruning and normalization have work to do.
  AlignedFrame raw = p.frame;
  const auto add = [&](const std::string& name, std::vector<double> values) {
    raw.names.push_back(name);
    raw.columns.push_back(std::move(values));
    ColumnMeta m;
    m.source = "X";
    m.field = name.substr(2);
    m.normalize = true;
    raw.meta.push_back(m);
  };
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(raw.rows()), twin(raw.rows());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = normal(rng);
    twin[i] = 2.0 * a[i] + 1.0;
  }
  add("X.a", a);
  add("X.twin", twin);

  // Rewriting every non-training row must leave fitted statistics untouched.
  const auto train_idx = train_rows(raw, ranges);
  const std::set<std::size_t> train_set(train_idx.begin(), train_idx.end());
  AlignedFrame shifted = raw;
  for (std::size_t col = 0; col < shifted.width(); ++col) {
    for (std::size_t r = 0; r < shifted.rows(); ++r) {
      if (!train_set.count(r)) shifted.columns[col][r] = shifted.columns[col][r] * 3.0 + 50.0 + normal(rng);
    }
  }
  const auto [pruned, report] = prune_correlated(raw, ranges);
  const auto [pruned_s, report_s] = prune_correlated(shifted, ranges);
  c.expect(report.fit_rows == train_idx.size() && report.fit_last_date <= ranges.train_end, "prune fit range");
  bool same_drops = report.drops.size() == report_s.drops.size();
  for (std::size_t i = 0; same_drops && i < report.drops.size(); ++i) {
    same_drops = report.drops[i].column == report_s.drops[i].column &&
                 report.drops[i].correlation == report_s.drops[i].correlation;
  }
  c.expect(same_drops, "prune report depends on post-training rows");

  const auto norm = normalize_with_train_stats(pruned, ranges);
  const auto norm_s = normalize_with_train_stats(pruned_s, ranges);
  for (std::size_t col = 0; col < norm.width(); ++col) {
    const auto& m = norm.meta[col];
    c.expect(m.train_mean == norm_s.meta[col].train_mean && m.train_std == norm_s.meta[col].train_std,
             norm.names[col] + " statistics depend on post-training rows");
    if (!m.normalized) continue;
    long double sum = 0, sq = 0;
    for (auto r : train_idx) sum += pruned.columns[col][r];
    const long double mean = sum / static_cast<long double>(train_idx.size());
    for (auto r : train_idx) sq += (pruned.columns[col][r] - mean) * (pruned.columns[col][r] - mean);
    const double sd = static_cast<double>(std::sqrt(sq / static_cast<long double>(train_idx.size())));
    c.expect(std::abs(m.train_mean - static_cast<double>(mean)) <= 1e-9 * (1 + std::abs(m.train_mean)) &&
                 std::abs(m.train_std - sd) <= 1e-9 * sd,
             norm.names[col] + " statistics are not training-range statistics");
  }

  GridConfig g;
  g.embeddings = {{"planted-12", 12, {2, 4, 12}}};
  std::map<std::string, DailyEmbeddings> daily{{"planted-12", p.daily}};
  const auto ctx = build_context(norm, daily, g);
  DailyEmbeddings rewritten = p.daily;
  for (auto& [d, e] : rewritten) {
    if (d > ranges.train_end) std::reverse(e.values.begin(), e.values.end());
  }
  const auto ctx_s = build_context(norm, {{"planted-12", rewritten}}, g);
  const auto& prov = ctx.pca_fit.at("planted-12");
  std::size_t train_days = 0;
  for (auto r : train_idx) train_days += p.daily.count(norm.dates[r]);
  c.expect(prov.fit_rows == train_days && prov.last_date <= ranges.train_end, "PCA fitted outside training range");
  c.expect(ctx.pca.at("planted-12").components == ctx_s.pca.at("planted-12").components,
           "PCA depends on post-training embeddings");

  std::size_t variants = 0, rows = 0;
  for (const auto& run : enumerate_grid(g)) {
    const auto v = variant_for(run, g, ctx);
    ++variants;
    const auto issues = audit_variant(v, ranges);
    c.expect(issues.empty(), run.id + ": " + (issues.empty() ? "" : issues.front()));
    const auto close_f = static_cast<std::size_t>(
        std::find(v.feature_names.begin(), v.feature_names.end(), "SPY.close") - v.feature_names.begin());
    const auto close = norm.column("SPY.close");
    const auto close_raw = norm.raw_column("SPY.close");
    for (std::size_t i = 0; i < v.rows(); ++i, ++rows) {
      c.expect(v.window_start_dates[i] <= v.anchor_dates[i] && v.anchor_dates[i] < v.target_dates[i],
               run.id + " row " + std::to_string(i) + " window reaches its target");
      const auto anchor = static_cast<std::size_t>(
          std::lower_bound(norm.dates.begin(), norm.dates.end(), v.anchor_dates[i]) - norm.dates.begin());
      double expect_last = close[anchor];
      if (run.transform == TransformKind::LogReturn) expect_last = std::log(close_raw[anchor] / close_raw[anchor - 1]);
      if (run.transform == TransformKind::LinearDiff) expect_last = close_raw[anchor] - close_raw[anchor - 1];
      c.expect(std::abs(v.at(i, v.window - 1, close_f) - expect_last) <= 1e-12 * (1 + std::abs(expect_last)),
               run.id + " row " + std::to_string(i) + " last step is not the anchor day");
      if (run.kind != HeadlineKind::None && p.daily.count(v.anchor_dates[i])) {
        const auto& e = p.daily.at(v.anchor_dates[i]).values;
        double expect_emb = e[0];
        if (run.kind == HeadlineKind::Pca) {
          const auto& pca = ctx.pca.at("planted-12");
          expect_emb = pca.components.row(0).dot(Eigen::Map<const Eigen::VectorXd>(e.data(), 12) - pca.mean);
        }
        const auto emb0 = static_cast<std::size_t>(
            std::find(v.feature_names.begin(), v.feature_names.end(), "emb0") - v.feature_names.begin());
        c.expect(std::abs(v.at(i, v.window - 1, emb0) - expect_emb) <= 1e-12,
                 run.id + " row " + std::to_string(i) + " embedding is not the anchor day's");
      }
    }
  }

  // The scan must catch a planted violation.
  auto tampered = variant_for(enumerate_grid(g).front(), g, ctx);
  tampered.target_dates[3] = tampered.anchor_dates[3];
  c.expect(!audit_variant(tampered, ranges).empty(), "audit missed a planted violation");
  c.note(std::to_string(variants) + " variants, " + std::to_string(rows) +
         " rows clean; prune, normalization and PCA invariant to post-training rewrites");
}

struct Criterion {
  int number;
  std::string name;
  double budget_seconds;
  std::function<void(Checks&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "metric oracles", 1, metric_oracles},
      {2, "gradient suite", 60, gradient_suite},
      {3, "PCA algebra", 10, pca_algebra},
      {4, "pruning oracle", 1, pruning_oracle},
      {5, "grid count", 1, grid_count},
      {6, "determinism", 600, determinism},
      {7, "synthetic headline uplift", 600, synthetic_uplift},
      {8, "training sanity", 60, training_sanity},
      {9, "concurrency", 300, concurrency},
      {10, "entropy and SNR conventions", 1, entropy_snr},
      {11, "leakage guard", 60, leakage_guard},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Checks checks;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    checks.expect(secs < cr.budget_seconds, "took " + fmt(secs, 3) + " s, budget " + fmt(cr.budget_seconds) + " s");
    const bool ok = checks.ok();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " [" << cr.number << "] " << cr.name << " (" << fmt(secs, 3) << " s): "
              << checks.summary() << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}

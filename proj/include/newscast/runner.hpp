#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "newscast/features.hpp"
#include "newscast/metrics.hpp"
#include "newscast/models.hpp"
#include "newscast/pca.hpp"

namespace newscast {

// One embedding model and the PCA widths tried with it. A width equal to
// native_dim means the raw vectors are used without projection.
struct EmbeddingAxis {
  std::string model_id;
  std::size_t native_dim = 0;
  std::vector<std::size_t> dims;
};

struct GridConfig {
  std::vector<Arch> architectures{kAllArchs.begin(), kAllArchs.end()};
  std::vector<TransformKind> transforms{kAllTransforms.begin(), kAllTransforms.end()};
  std::vector<EmbeddingAxis> embeddings;
  VariantOptions variant;  // window, horizon, target, splits; transform and seed are set per run
  ModelSpec base;          // architecture-independent defaults (layers, TCN and mixture sizes)
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  std::size_t search_budget = 10;  // 0 trains `base` directly
  std::size_t search_folds = 5;
  std::optional<std::size_t> search_epochs;
  SearchSpace space;

  // Five architectures, three transforms, small model {2..1024, native 1536}
  // and large model {2..1024, 1536, 2048, native 3072}.
  static GridConfig defaults();
  void validate() const;
};

enum class HeadlineKind { None, Pca, Native };

struct RunDescriptor {
  std::string id;
  Arch arch = Arch::FFNN;
  TransformKind transform = TransformKind::LogReturn;
  std::string model_id;  // embedding axis this run belongs to
  HeadlineKind kind = HeadlineKind::None;
  std::size_t dim = 0;  // projected width, or native width; 0 for None

  friend bool operator==(const RunDescriptor&, const RunDescriptor&) = default;
};

// "none", the PCA width, or "native<width>".
std::string dim_label(const RunDescriptor& d);

// Architectures x transforms x (per model: dims + no-headline), in that
// nesting order. Ids are stable functions of the descriptor fields.
std::vector<RunDescriptor> enumerate_grid(const GridConfig& config);
std::size_t expected_grid_size(const GridConfig& config);

// Axis selectors such as "arch=FFNN", "transform=LOG_RETURN,LINEAR_DIFF",
// "model=text-embedding-3-small", "dim=none,64,native1536".
struct GridFilter {
  std::vector<Arch> archs;
  std::vector<TransformKind> transforms;
  std::vector<std::string> models;
  std::vector<std::string> dims;

  bool matches(const RunDescriptor& d) const;
};
GridFilter parse_filter(const std::vector<std::string>& selectors);
std::vector<RunDescriptor> filter_grid(const std::vector<RunDescriptor>& runs, const GridFilter& filter);

// Per-run seed derived from the global seed and the run id.
std::uint64_t run_seed(std::uint64_t global_seed, const std::string& run_id);

// ---------------------------------------------------------------------------
// Data context

struct PcaProvenance {
  std::size_t fit_rows = 0;
  Date first_date;
  Date last_date;
};

struct DataContext {
  AlignedFrame frame;  // pruned and normalized
  std::map<std::string, DailyEmbeddings> daily;
  std::map<std::string, PcaModel> pca;  // widest requested projection per model
  std::map<std::string, PcaProvenance> pca_fit;
};

// Fits one PCA per embedding model on the training-range days' vectors, as
// wide as the largest requested non-native width allows.
DataContext build_context(AlignedFrame frame, std::map<std::string, DailyEmbeddings> daily, const GridConfig& config);

// Builds the dataset variant a run trains on.
DatasetVariant variant_for(const RunDescriptor& run, const GridConfig& config, const DataContext& ctx);

// ---------------------------------------------------------------------------
// Execution

struct RunResult {
  RunDescriptor run;
  bool ok = false;
  std::string error;
  ModelSpec spec;
  MetricsReport metrics;
  double search_score = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::json& j);

struct ExecuteOptions {
  std::optional<std::filesystem::path> results_dir;  // runs/<id>.json and results.csv
  bool resume = false;  // reuse any existing runs/<id>.json, successful or failed
  // Called at the start of every run; an exception marks that run failed.
  std::function<void(const RunDescriptor&)> before_run;
};

struct GridSummary {
  std::vector<RunResult> results;  // in descriptor order
  std::size_t executed = 0;
  std::size_t reused = 0;
  std::size_t failed = 0;
};

GridSummary execute_grid(const std::vector<RunDescriptor>& runs, const GridConfig& config, const DataContext& ctx,
                         const ExecuteOptions& options = {});

RunResult execute_run(const RunDescriptor& run, const GridConfig& config, const DataContext& ctx);

std::vector<RunResult> load_results(const std::filesystem::path& results_dir);
void write_results_csv(const std::vector<RunResult>& results, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reports

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
};

// Architecture, PCA dimension, then train/test MSE, SMAPE and R2; ascending
// test SMAPE over successful runs. `top` of 0 keeps every row.
Table leaderboard(const std::vector<RunResult>& results, std::size_t top = 0);

// Minimum test SMAPE per dimension label across architectures and transforms.
std::map<std::string, double> min_smape_by_pca(const std::vector<RunResult>& results);
// "none" first, then widths ascending, then native widths.
Table min_smape_table(const std::map<std::string, double>& by_dim);

struct UpliftRow {
  Arch arch;
  TransformKind transform;
  double smape_none = 0.0;
  double smape_best_headline = 0.0;
  std::string best_run;
  double uplift = 0.0;  // (none - best) / none
};

struct UpliftReport {
  std::vector<UpliftRow> rows;
  std::vector<std::string> notes;  // pairs skipped for a missing bucket
  double mean_uplift = 0.0;
  double min_uplift = 0.0;
  double max_uplift = 0.0;

  Table to_table() const;
};

UpliftReport headline_uplift(const std::vector<RunResult>& results);

}  // namespace newscast

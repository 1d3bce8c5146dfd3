#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "newscast/corpus.hpp"
#include "newscast/embed.hpp"
#include "newscast/pca.hpp"

namespace newscast {

enum class TransformKind { TimeDependent, LogReturn, LinearDiff };

inline constexpr std::array<TransformKind, 3> kAllTransforms{TransformKind::TimeDependent, TransformKind::LogReturn,
                                                             TransformKind::LinearDiff};

std::string_view to_string(TransformKind t);
TransformKind parse_transform(std::string_view s);

// Sequence order is preserved only for the time-dependent variant.
constexpr bool shuffles_train(TransformKind t) { return t != TransformKind::TimeDependent; }

double log_return(double p_prev, double p_t);
double linear_diff(double p_prev, double p_t);

// Date ranges are inclusive.
struct SplitRanges {
  Date train_start = Date(1998, 1, 1);
  Date train_end = Date(2015, 12, 31);
  Date test_start = Date(2016, 1, 1);
  Date test_end = Date(2019, 12, 31);
  Date holdout_start = Date(2020, 1, 1);
  Date holdout_end = Date(2021, 12, 31);
};

enum class Split { Train, Test, Holdout, Outside };
Split split_of(const SplitRanges& ranges, Date d);

// Frame row indices whose date falls in the training range.
std::vector<std::size_t> train_rows(const AlignedFrame& frame, const SplitRanges& ranges);

// ---------------------------------------------------------------------------
// Correlation pruning and normalization

struct PruneDrop {
  std::string column;
  std::string partner;  // empty for zero-variance drops
  double correlation = 0.0;
  std::string reason;
};

struct PruneReport {
  double threshold = 0.95;
  std::size_t fit_rows = 0;
  Date fit_last_date;
  std::vector<PruneDrop> drops;
};

// Scans the lower triangle of the training-range Pearson correlation matrix in
// declared column order. A column whose |corr| with any retained earlier column
// exceeds the threshold is flagged dropped; its partner is the retained earlier
// column with the largest |corr|. Zero-variance columns are dropped separately.
std::pair<AlignedFrame, PruneReport> prune_correlated(const AlignedFrame& frame, const SplitRanges& ranges,
                                                      double threshold = 0.95);

// Z-scores every non-dropped column flagged `normalize`, using training-range
// mean and population standard deviation for all rows.
AlignedFrame normalize_with_train_stats(const AlignedFrame& frame, const SplitRanges& ranges);

// ---------------------------------------------------------------------------
// Dataset variants

struct EmbeddingSlot {
  std::string model_id;
  std::size_t pca_dim = 0;  // width fed to the model; equals native width when no PCA
  bool native = false;      // raw vectors, no projection
};

using DailyEmbeddings = std::unordered_map<Date, EmbeddingVector>;

struct VariantOptions {
  TransformKind transform = TransformKind::LogReturn;
  std::size_t window = 5;
  std::size_t horizon = 1;
  std::string target_column = "SPY.close";
  SplitRanges splits;
  std::uint64_t seed = 0;
};

struct DatasetVariant {
  TransformKind transform = TransformKind::LogReturn;
  std::optional<EmbeddingSlot> embedding;
  std::size_t window = 0;
  std::size_t horizon = 1;
  std::size_t features = 0;
  std::vector<std::string> feature_names;
  std::vector<double> X;  // rows x window x features, row-major
  std::vector<double> y;
  std::vector<Date> anchor_dates;  // last day inside each row's window
  std::vector<Date> window_start_dates;
  std::vector<Date> target_dates;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> holdout;
  bool shuffle_train = false;

  std::size_t rows() const { return y.size(); }
  std::size_t row_width() const { return window * features; }
  std::span<const double> row(std::size_t i) const { return {X.data() + i * row_width(), row_width()}; }
  double at(std::size_t i, std::size_t t, std::size_t f) const { return X[(i * window + t) * features + f]; }
};

// `daily` is null for the no-headline variant. With embeddings, `pca` null
// means raw vectors are used. Anchor rows lacking a full window or a target
// are skipped.
DatasetVariant build_variant(const AlignedFrame& frame, const DailyEmbeddings* daily, const PcaModel* pca,
                             const std::string& embedding_model, const VariantOptions& options);

// Human-readable violations of the no-leakage rules; empty when clean.
std::vector<std::string> audit_variant(const DatasetVariant& v, const SplitRanges& ranges);

struct Fold {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> validate;
};

// Validation folds partition `rows`; sizes differ by at most one. Contiguous
// blocks in the given order when `contiguous`, otherwise a seeded random partition.
std::vector<Fold> kfold_split(std::span<const std::size_t> rows, std::size_t k, std::uint64_t seed,
                              bool contiguous);

void save_variant(const DatasetVariant& v, const std::filesystem::path& path);
DatasetVariant load_variant(const std::filesystem::path& path);

}  // namespace newscast

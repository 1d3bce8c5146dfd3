#include "newscast/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "newscast/error.hpp"

namespace newscast {

std::string_view to_string(TransformKind t) {
  switch (t) {
    case TransformKind::TimeDependent:
      return "TIME_DEPENDENT";
    case TransformKind::LogReturn:
      return "LOG_RETURN";
    case TransformKind::LinearDiff:
      return "LINEAR_DIFF";
  }
  return "?";
}

TransformKind parse_transform(std::string_view s) {
  for (auto t : kAllTransforms) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown transform '" + std::string(s) + "'");
}

double log_return(double p_prev, double p_t) {
  if (!(p_prev > 0.0) || !(p_t > 0.0)) throw ParameterError("log_return: prices must be positive");
  return std::log(p_t / p_prev);
}

double linear_diff(double p_prev, double p_t) { return p_t - p_prev; }

Split split_of(const SplitRanges& r, Date d) {
  if (r.train_start <= d && d <= r.train_end) return Split::Train;
  if (r.test_start <= d && d <= r.test_end) return Split::Test;
  if (r.holdout_start <= d && d <= r.holdout_end) return Split::Holdout;
  return Split::Outside;
}

std::vector<std::size_t> train_rows(const AlignedFrame& frame, const SplitRanges& ranges) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < frame.rows(); ++i) {
    if (split_of(ranges, frame.dates[i]) == Split::Train) rows.push_back(i);
  }
  return rows;
}

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // population
};

Moments moments(const std::vector<double>& col, std::span<const std::size_t> rows) {
  Moments m;
  for (auto r : rows) m.mean += col[r];
  m.mean /= static_cast<double>(rows.size());
  for (auto r : rows) m.var += (col[r] - m.mean) * (col[r] - m.mean);
  m.var /= static_cast<double>(rows.size());
  return m;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b, std::span<const std::size_t> rows) {
  const Moments ma = moments(a, rows);
  const Moments mb = moments(b, rows);
  double cov = 0.0;
  for (auto r : rows) cov += (a[r] - ma.mean) * (b[r] - mb.mean);
  cov /= static_cast<double>(rows.size());
  return cov / std::sqrt(ma.var * mb.var);
}

}  // namespace

std::pair<AlignedFrame, PruneReport> prune_correlated(const AlignedFrame& frame, const SplitRanges& ranges,
                                                      double threshold) {
  if (frame.width() < 2) throw ParameterError("prune_correlated needs at least 2 columns");
  const auto rows = train_rows(frame, ranges);
  if (rows.size() < 2) throw DataError("prune_correlated: fewer than 2 training rows");

  AlignedFrame out = frame;
  PruneReport report;
  report.threshold = threshold;
  report.fit_rows = rows.size();
  report.fit_last_date = frame.dates[rows.back()];

  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < out.width(); ++j) {
    if (out.meta[j].dropped) continue;
    if (moments(out.columns[j], rows).var == 0.0) {
      out.meta[j].dropped = true;
      out.meta[j].drop_reason = "zero variance";
      report.drops.push_back({out.names[j], "", 0.0, "zero variance"});
      continue;
    }
    std::optional<std::size_t> partner;
    double partner_corr = 0.0;
    for (auto i : kept) {
      const double c = pearson(out.columns[i], out.columns[j], rows);
      if (std::abs(c) > threshold && (!partner || std::abs(c) > std::abs(partner_corr))) {
        partner = i;
        partner_corr = c;
      }
    }
    if (partner) {
      out.meta[j].dropped = true;
      out.meta[j].drop_reason = "correlated with " + out.names[*partner];
      report.drops.push_back({out.names[j], out.names[*partner], partner_corr, "correlation"});
    } else {
      kept.push_back(j);
    }
  }
  return {std::move(out), std::move(report)};
}

AlignedFrame normalize_with_train_stats(const AlignedFrame& frame, const SplitRanges& ranges) {
  const auto rows = train_rows(frame, ranges);
  AlignedFrame out = frame;
  for (std::size_t c = 0; c < out.width(); ++c) {
    auto& m = out.meta[c];
    if (!m.normalize || m.dropped) continue;
    if (m.normalized) throw ParameterError("column " + out.names[c] + " is already normalized");
    if (rows.empty()) throw DataError("normalize: no training rows");
    const Moments st = moments(out.columns[c], rows);
    if (!(st.var > 0.0)) throw DataError("normalize: column " + out.names[c] + " has zero training variance");
    m.train_mean = st.mean;
    m.train_std = std::sqrt(st.var);
    m.normalized = true;
    for (double& v : out.columns[c]) v = (v - m.train_mean) / m.train_std;
  }
  return out;
}

// ---------------------------------------------------------------------------

DatasetVariant build_variant(const AlignedFrame& frame, const DailyEmbeddings* daily, const PcaModel* pca,
                             const std::string& embedding_model, const VariantOptions& opt) {
  if (opt.window < 1) throw ParameterError("build_variant: window must be >= 1");
  if (opt.horizon < 1) throw ParameterError("build_variant: horizon must be >= 1");
  if (!daily && pca) throw ParameterError("build_variant: PCA given without embeddings");

  const auto target_idx = frame.index_of(opt.target_column);
  if (!target_idx) throw ConfigError("target column '" + opt.target_column + "' not in frame");
  const std::vector<double> target_raw = frame.raw_column(opt.target_column);
  const bool returns = opt.transform != TransformKind::TimeDependent;

  DatasetVariant v;
  v.transform = opt.transform;
  v.window = opt.window;
  v.horizon = opt.horizon;
  v.shuffle_train = shuffles_train(opt.transform);

  struct Source {
    std::size_t col;
    bool as_return;
    std::vector<double> raw;
  };
  std::vector<Source> sources;
  for (std::size_t c = 0; c < frame.width(); ++c) {
    if (frame.meta[c].dropped) continue;
    Source s{c, returns && frame.meta[c].price, {}};
    if (s.as_return) s.raw = frame.raw_column(frame.names[c]);
    sources.push_back(std::move(s));
    v.feature_names.push_back(frame.names[c]);
  }

  std::size_t slot = 0;
  if (daily) {
    EmbeddingSlot es;
    es.model_id = embedding_model;
    if (pca) {
      es.pca_dim = pca->k();
    } else {
      es.native = true;
      for (const auto& [_, e] : *daily) {
        es.pca_dim = e.dim();
        break;
      }
      if (es.pca_dim == 0) throw DataError("build_variant: no embeddings supplied");
    }
    slot = es.pca_dim;
    for (std::size_t i = 0; i < slot; ++i) v.feature_names.push_back("emb" + std::to_string(i));
    v.feature_names.push_back("has_headline");
    v.embedding = es;
  }
  v.features = v.feature_names.size();
  if (v.features == 0) throw DataError("build_variant: no feature columns");

  // Per-day embedding slot, computed once per frame row.
  std::vector<std::vector<double>> day_slot;
  std::vector<char> has_headline;
  if (daily) {
    day_slot.assign(frame.rows(), std::vector<double>(slot, 0.0));
    has_headline.assign(frame.rows(), 0);
    for (std::size_t r = 0; r < frame.rows(); ++r) {
      const auto it = daily->find(frame.dates[r]);
      if (it == daily->end()) continue;
      const auto& e = it->second;
      if (pca) {
        const Eigen::VectorXd z =
            project(*pca, Eigen::Map<const Eigen::VectorXd>(e.values.data(), static_cast<Eigen::Index>(e.dim())));
        std::copy(z.data(), z.data() + z.size(), day_slot[r].begin());
      } else {
        if (e.dim() != slot) throw DataError("build_variant: inconsistent embedding widths");
        day_slot[r] = e.values;
      }
      has_headline[r] = 1;
    }
  }

  const std::size_t first = opt.window - 1 + (returns ? 1 : 0);
  for (std::size_t t = first; t + opt.horizon < frame.rows(); ++t) {
    const std::size_t target_row = t + opt.horizon;
    double y = 0.0;
    switch (opt.transform) {
      case TransformKind::TimeDependent:
        y = frame.columns[*target_idx][target_row];
        break;
      case TransformKind::LogReturn:
        y = log_return(target_raw[t], target_raw[target_row]);
        break;
      case TransformKind::LinearDiff:
        y = linear_diff(target_raw[t], target_raw[target_row]);
        break;
    }
    for (std::size_t s = t + 1 - opt.window; s <= t; ++s) {
      for (const auto& src : sources) {
        if (!src.as_return) {
          v.X.push_back(frame.columns[src.col][s]);
        } else if (opt.transform == TransformKind::LogReturn) {
          v.X.push_back(log_return(src.raw[s - 1], src.raw[s]));
        } else {
          v.X.push_back(linear_diff(src.raw[s - 1], src.raw[s]));
        }
      }
      if (daily) {
        v.X.insert(v.X.end(), day_slot[s].begin(), day_slot[s].end());
        v.X.push_back(has_headline[s]);
      }
    }
    const std::size_t row = v.y.size();
    v.y.push_back(y);
    v.anchor_dates.push_back(frame.dates[t]);
    v.window_start_dates.push_back(frame.dates[t + 1 - opt.window]);
    v.target_dates.push_back(frame.dates[target_row]);
    switch (split_of(opt.splits, frame.dates[t])) {
      case Split::Train:
        v.train.push_back(row);
        break;
      case Split::Test:
        v.test.push_back(row);
        break;
      case Split::Holdout:
        v.holdout.push_back(row);
        break;
      case Split::Outside:
        break;
    }
  }
  if (v.train.empty()) throw DataError("build_variant: empty train split");
  if (v.test.empty()) throw DataError("build_variant: empty test split");

  if (v.shuffle_train) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(v.train.begin(), v.train.end(), rng);
  }
  return v;
}

std::vector<std::string> audit_variant(const DatasetVariant& v, const SplitRanges& ranges) {
  std::vector<std::string> issues;
  for (std::size_t i = 0; i < v.rows(); ++i) {
    if (!(v.anchor_dates[i] < v.target_dates[i])) {
      issues.push_back("row " + std::to_string(i) + ": window ends " + v.anchor_dates[i].iso() +
                       ", not before target " + v.target_dates[i].iso());
    }
    if (v.window_start_dates[i] > v.anchor_dates[i]) {
      issues.push_back("row " + std::to_string(i) + ": window start after window end");
    }
  }
  const auto check = [&](const std::vector<std::size_t>& set, Split want, const char* name) {
    for (auto r : set) {
      if (r >= v.rows()) {
        issues.push_back(std::string(name) + " index out of range");
      } else if (split_of(ranges, v.anchor_dates[r]) != want) {
        issues.push_back(std::string(name) + " row " + std::to_string(r) + " dated " + v.anchor_dates[r].iso() +
                         " outside its range");
      }
    }
  };
  check(v.train, Split::Train, "train");
  check(v.test, Split::Test, "test");
  check(v.holdout, Split::Holdout, "holdout");
  std::vector<std::size_t> all;
  all.insert(all.end(), v.train.begin(), v.train.end());
  all.insert(all.end(), v.test.begin(), v.test.end());
  all.insert(all.end(), v.holdout.begin(), v.holdout.end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) issues.push_back("split sets overlap");
  if (v.shuffle_train != shuffles_train(v.transform)) issues.push_back("shuffle flag inconsistent with transform");
  return issues;
}

std::vector<Fold> kfold_split(std::span<const std::size_t> rows, std::size_t k, std::uint64_t seed,
                              bool contiguous) {
  if (k < 2 || k > rows.size()) {
    throw ParameterError("kfold_split: K=" + std::to_string(k) + " outside [2, " + std::to_string(rows.size()) +
                         "]");
  }
  std::vector<std::size_t> order(rows.begin(), rows.end());
  if (!contiguous) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  const std::size_t base = order.size() / k;
  const std::size_t extra = order.size() % k;
  std::vector<Fold> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].validate.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                             order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    folds[f].fit.reserve(order.size() - len);
    folds[f].fit.insert(folds[f].fit.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pos));
    folds[f].fit.insert(folds[f].fit.end(), order.begin() + static_cast<std::ptrdiff_t>(pos + len), order.end());
    pos += len;
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Binary dump: "NCVARNT\0" magic, u32 version, then length-prefixed fields.

namespace {

constexpr char kMagic[8] = {'N', 'C', 'V', 'A', 'R', 'N', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename T>
  void vec(const std::vector<T>& v) {
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
  void dates(const std::vector<Date>& d) {
    std::vector<std::int32_t> s;
    for (auto x : d) s.push_back(x.serial());
    vec(s);
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  explicit Reader(std::ifstream& in) : in_(in) {}
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw DataError("variant dump truncated");
    return v;
  }
  std::string str() {
    std::string s(checked_len(1), '\0');
    in_.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!in_) throw DataError("variant dump truncated");
    return s;
  }
  template <typename T>
  std::vector<T> vec() {
    std::vector<T> v(checked_len(sizeof(T)));
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    if (!in_) throw DataError("variant dump truncated");
    return v;
  }
  std::vector<Date> dates() {
    std::vector<Date> out;
    for (auto s : vec<std::int32_t>()) out.push_back(Date::from_serial(s));
    return out;
  }

 private:
  std::size_t checked_len(std::size_t elem) {
    const auto n = pod<std::uint64_t>();
    if (n > (std::uint64_t{1} << 40) / elem) throw DataError("variant dump: implausible length");
    return static_cast<std::size_t>(n);
  }
  std::ifstream& in_;
};

}  // namespace

void save_variant(const DatasetVariant& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  Writer w(out);
  w.pod(kVersion);
  w.pod<std::int32_t>(static_cast<std::int32_t>(v.transform));
  w.pod<std::uint8_t>(v.embedding ? 1 : 0);
  if (v.embedding) {
    w.str(v.embedding->model_id);
    w.pod<std::uint64_t>(v.embedding->pca_dim);
    w.pod<std::uint8_t>(v.embedding->native ? 1 : 0);
  }
  w.pod<std::uint64_t>(v.window);
  w.pod<std::uint64_t>(v.horizon);
  w.pod<std::uint64_t>(v.features);
  w.pod<std::uint64_t>(v.feature_names.size());
  for (const auto& n : v.feature_names) w.str(n);
  w.vec(v.X);
  w.vec(v.y);
  w.dates(v.anchor_dates);
  w.dates(v.window_start_dates);
  w.dates(v.target_dates);
  w.vec(v.train);
  w.vec(v.test);
  w.vec(v.holdout);
  w.pod<std::uint8_t>(v.shuffle_train ? 1 : 0);
  if (!out) throw DataError("write failed for " + path.string());
}

DatasetVariant load_variant(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("not a variant dump: " + path.string());
  Reader r(in);
  if (const auto ver = r.pod<std::uint32_t>(); ver != kVersion) {
    throw DataError("unsupported variant dump version " + std::to_string(ver));
  }
  DatasetVariant v;
  v.transform = static_cast<TransformKind>(r.pod<std::int32_t>());
  if (r.pod<std::uint8_t>()) {
    EmbeddingSlot e;
    e.model_id = r.str();
    e.pca_dim = r.pod<std::uint64_t>();
    e.native = r.pod<std::uint8_t>() != 0;
    v.embedding = e;
  }
  v.window = r.pod<std::uint64_t>();
  v.horizon = r.pod<std::uint64_t>();
  v.features = r.pod<std::uint64_t>();
  const auto names = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < names; ++i) v.feature_names.push_back(r.str());
  v.X = r.vec<double>();
  v.y = r.vec<double>();
  v.anchor_dates = r.dates();
  v.window_start_dates = r.dates();
  v.target_dates = r.dates();
  v.train = r.vec<std::size_t>();
  v.test = r.vec<std::size_t>();
  v.holdout = r.vec<std::size_t>();
  v.shuffle_train = r.pod<std::uint8_t>() != 0;
  if (v.X.size() != v.y.size() * v.window * v.features) throw DataError("variant dump: inconsistent shapes");
  return v;
}

}  // namespace newscast

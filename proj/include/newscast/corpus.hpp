#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "newscast/date.hpp"

namespace newscast {

using HeadlineId = std::uint64_t;

struct HeadlineRecord {
  HeadlineId id = 0;
  Date date;
  std::string category;
  std::string text;
};

// Whitespace-trimmed, NFC-normalized text. Hashing and caching key off this.
std::string canonical_text(std::string_view text);

// Pure function of (date, canonical text).
HeadlineId headline_id(Date date, std::string_view text);

std::set<std::string> default_category_whitelist();

// Accepts a JSON array of {date, category, text} objects or the same objects
// one per line. Returns whitelisted records sorted by (date, id) with
// duplicates of the same id removed.
std::vector<HeadlineRecord> parse_headlines(std::string_view content,
                                            const std::set<std::string>& category_whitelist);
std::vector<HeadlineRecord> load_headlines(const std::filesystem::path& path,
                                           const std::set<std::string>& category_whitelist);

// Picks one headline dated `date` uniformly at random, using a stream keyed by
// (rng_seed, date). `records` must be sorted by (date, id).
std::optional<HeadlineRecord> select_daily_headline(std::span<const HeadlineRecord> records,
                                                    Date date, std::uint64_t rng_seed);

// select_daily_headline applied to each date; days with no candidate are absent.
std::unordered_map<Date, HeadlineId> select_daily_headlines(std::span<const HeadlineRecord> records,
                                                            std::span<const Date> dates,
                                                            std::uint64_t rng_seed);

// ---------------------------------------------------------------------------
// Market data

struct MarketSchema {
  std::string name;                  // series label, e.g. "SPY"
  std::vector<std::string> columns;  // required numeric columns after the date column
};

class MarketSeries {
 public:
  MarketSeries() = default;
  MarketSeries(std::string name, std::vector<std::string> fields);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& fields() const { return fields_; }
  const std::vector<Date>& dates() const { return dates_; }
  std::size_t size() const { return dates_.size(); }
  bool empty() const { return dates_.empty(); }

  std::optional<std::size_t> field_index(std::string_view field) const;
  double value(std::size_t row, std::size_t field) const { return values_[row * fields_.size() + field]; }
  std::optional<std::size_t> row_of(Date d) const;

  // Rows must arrive with strictly increasing dates and finite values.
  void append(Date date, std::span<const double> values);

 private:
  std::string name_;
  std::vector<std::string> fields_;
  std::vector<Date> dates_;
  std::vector<double> values_;  // row-major
};

MarketSeries parse_market_csv(std::istream& in, const MarketSchema& schema);
MarketSeries load_market_csv(const std::filesystem::path& path, const MarketSchema& schema);

// ---------------------------------------------------------------------------
// Aligned frame

struct ColumnMeta {
  std::string source;  // series name
  std::string field;
  bool normalize = false;
  bool price = false;  // level series that return transforms apply to
  bool dropped = false;
  std::string drop_reason;
  // Set by normalize_with_train_stats.
  bool normalized = false;
  double train_mean = 0.0;
  double train_std = 1.0;
};

struct ColumnSelection {
  std::string series;
  std::string field;
  bool normalize = false;
  bool price = false;
};

struct AlignedFrame {
  std::vector<Date> dates;
  std::vector<std::string> names;  // "<series>.<field>"
  std::vector<std::vector<double>> columns;
  std::vector<ColumnMeta> meta;

  std::size_t rows() const { return dates.size(); }
  std::size_t width() const { return names.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  const std::vector<double>& column(std::string_view name) const;
  // Column values in original units (undoes normalization).
  std::vector<double> raw_column(std::string_view name) const;
  // Treat the frame as a series, e.g. to re-align it against other sources.
  MarketSeries as_series(std::string name) const;
};

std::string column_name(std::string_view series, std::string_view field);

// Inner join on the anchor's dates. With an empty selection every field of
// every series is kept, unflagged.
AlignedFrame align_calendar(const MarketSeries& anchor, std::span<const MarketSeries> others,
                            std::span<const ColumnSelection> selection = {});

}  // namespace newscast

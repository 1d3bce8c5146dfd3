#include "newscast/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "json.hpp"

#include "newscast/error.hpp"
#include "newscast/hash.hpp"

namespace newscast {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

HeadlineRecord record_from_json(const nlohmann::json& j, std::size_t index) {
  if (!j.is_object()) throw ParseError("headline record " + std::to_string(index) + " is not an object", index);
  for (const char* key : {"date", "category", "text"}) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw ParseError("headline record " + std::to_string(index) + ": missing string field '" + key + "'",
                       index);
    }
  }
  HeadlineRecord r;
  const auto date = j["date"].get<std::string>();
  if (!Date::try_parse(date, r.date)) {
    throw ParseError("headline record " + std::to_string(index) + ": bad date '" + date + "'", index);
  }
  r.category = j["category"].get<std::string>();
  r.text = canonical_text(j["text"].get<std::string>());
  if (r.text.empty()) {
    throw ParseError("headline record " + std::to_string(index) + ": empty text", index);
  }
  r.id = headline_id(r.date, r.text);
  return r;
}

}  // namespace

std::string canonical_text(std::string_view text) {
  const auto trimmed = trim(text);
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) return std::string(trimmed);
  const auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(trimmed.data(),
                                                                  static_cast<int32_t>(trimmed.size())));
  const icu::UnicodeString normalized = nfc->normalize(src, status);
  if (U_FAILURE(status)) return std::string(trimmed);
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

HeadlineId headline_id(Date date, std::string_view text) {
  std::string key = date.iso();
  key.push_back('\x1f');
  key += canonical_text(text);
  return fnv1a64(key);
}

std::set<std::string> default_category_whitelist() {
  return {"finance", "business", "markets", "economy"};
}

std::vector<HeadlineRecord> parse_headlines(std::string_view content,
                                            const std::set<std::string>& category_whitelist) {
  if (category_whitelist.empty()) throw ConfigError("headline category whitelist is empty");
  std::set<std::string> allowed;
  for (const auto& c : category_whitelist) allowed.insert(lower(c));

  std::vector<HeadlineRecord> all;
  const auto body = trim(content);
  if (!body.empty() && body.front() == '[') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("headline file: ") + e.what(), e.byte);
    }
    std::size_t index = 0;
    for (const auto& item : doc) all.push_back(record_from_json(item, index++));
  } else {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
      const auto end = std::min(content.find('\n', pos), content.size());
      const auto line = trim(content.substr(pos, end - pos));
      ++line_no;
      pos = end + 1;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("headline file line " + std::to_string(line_no) + ": " + e.what(), line_no);
      }
      all.push_back(record_from_json(j, line_no));
    }
  }

  std::vector<HeadlineRecord> kept;
  kept.reserve(all.size());
  for (auto& r : all) {
    if (allowed.count(lower(r.category))) kept.push_back(std::move(r));
  }
  std::sort(kept.begin(), kept.end(), [](const HeadlineRecord& a, const HeadlineRecord& b) {
    return a.date != b.date ? a.date < b.date : a.id < b.id;
  });
  kept.erase(std::unique(kept.begin(), kept.end(),
                         [](const HeadlineRecord& a, const HeadlineRecord& b) { return a.id == b.id; }),
             kept.end());
  return kept;
}

std::vector<HeadlineRecord> load_headlines(const std::filesystem::path& path,
                                           const std::set<std::string>& category_whitelist) {
  if (category_whitelist.empty()) throw ConfigError("headline category whitelist is empty");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open headline file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_headlines(buf.str(), category_whitelist);
}

std::optional<HeadlineRecord> select_daily_headline(std::span<const HeadlineRecord> records, Date date,
                                                    std::uint64_t rng_seed) {
  const auto lo = std::lower_bound(records.begin(), records.end(), date,
                                   [](const HeadlineRecord& r, Date d) { return r.date < d; });
  const auto hi = std::upper_bound(lo, records.end(), date,
                                   [](Date d, const HeadlineRecord& r) { return d < r.date; });
  const auto n = static_cast<std::uint64_t>(hi - lo);
  if (n == 0) return std::nullopt;
  const std::uint64_t bits =
      splitmix64(hash_combine(rng_seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(date.serial()))));
  const auto pick = static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits) * n) >> 64);
  return *(lo + static_cast<std::ptrdiff_t>(pick));
}

std::unordered_map<Date, HeadlineId> select_daily_headlines(std::span<const HeadlineRecord> records,
                                                            std::span<const Date> dates,
                                                            std::uint64_t rng_seed) {
  std::unordered_map<Date, HeadlineId> out;
  for (Date d : dates) {
    if (auto r = select_daily_headline(records, d, rng_seed)) out.emplace(d, r->id);
  }
  return out;
}

// ---------------------------------------------------------------------------

MarketSeries::MarketSeries(std::string name, std::vector<std::string> fields)
    : name_(std::move(name)), fields_(std::move(fields)) {}

std::optional<std::size_t> MarketSeries::field_index(std::string_view field) const {
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (fields_[i] == field) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> MarketSeries::row_of(Date d) const {
  const auto it = std::lower_bound(dates_.begin(), dates_.end(), d);
  if (it == dates_.end() || *it != d) return std::nullopt;
  return static_cast<std::size_t>(it - dates_.begin());
}

void MarketSeries::append(Date date, std::span<const double> values) {
  if (values.size() != fields_.size()) throw ParameterError("row width does not match series fields");
  if (!dates_.empty() && !(dates_.back() < date)) {
    throw DataError(name_ + ": dates not strictly increasing at " + date.iso());
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError(name_ + ": non-finite value at " + date.iso());
  }
  dates_.push_back(date);
  values_.insert(values_.end(), values.begin(), values.end());
}

MarketSeries parse_market_csv(std::istream& in, const MarketSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(schema.name + ": empty market file", 1);

  const auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.emplace_back(trim(cell));
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };

  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  std::vector<std::size_t> source_col;
  for (const auto& want : schema.columns) {
    const auto it = std::find(header.begin() + (header.empty() ? 0 : 1), header.end(), want);
    if (header.empty() || it == header.end()) {
      throw DataError(schema.name + ": missing column '" + want + "' in header");
    }
    source_col.push_back(static_cast<std::size_t>(it - header.begin()));
  }

  struct Row {
    Date date;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    Row row;
    if (!Date::try_parse(cells.empty() ? std::string_view{} : std::string_view(cells[0]), row.date)) {
      throw ParseError(schema.name + ": row " + std::to_string(line_no) + ", column 1: unparseable date '" +
                           (cells.empty() ? std::string{} : cells[0]) + "'",
                       line_no, 1);
    }
    for (std::size_t k = 0; k < source_col.size(); ++k) {
      const std::size_t c = source_col[k];
      const std::string cell = c < cells.size() ? cells[c] : std::string{};
      double v = 0.0;
      std::size_t used = 0;
      bool ok = !cell.empty();
      if (ok) {
        try {
          v = std::stod(cell, &used);
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (!ok || used != cell.size() || !std::isfinite(v)) {
        throw ParseError(schema.name + ": row " + std::to_string(line_no) + ", column " +
                             std::to_string(c + 1) + " (" + schema.columns[k] + "): non-numeric cell '" + cell +
                             "'",
                         line_no, c + 1);
      }
      row.values.push_back(v);
    }
    rows.push_back(std::move(row));
  }

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].date == rows[i - 1].date) {
      throw DataError(schema.name + ": duplicate date " + rows[i].date.iso());
    }
  }
  MarketSeries series(schema.name, schema.columns);
  for (const auto& r : rows) series.append(r.date, r.values);
  return series;
}

MarketSeries load_market_csv(const std::filesystem::path& path, const MarketSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open market file " + path.string());
  return parse_market_csv(in, schema);
}

// ---------------------------------------------------------------------------

std::string column_name(std::string_view series, std::string_view field) {
  std::string s(series);
  s.push_back('.');
  s += field;
  return s;
}

std::optional<std::size_t> AlignedFrame::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  return std::nullopt;
}

const std::vector<double>& AlignedFrame::column(std::string_view name) const {
  const auto i = index_of(name);
  if (!i) throw ParameterError("no column '" + std::string(name) + "' in frame");
  return columns[*i];
}

std::vector<double> AlignedFrame::raw_column(std::string_view name) const {
  const auto i = index_of(name);
  if (!i) throw ParameterError("no column '" + std::string(name) + "' in frame");
  std::vector<double> out = columns[*i];
  const auto& m = meta[*i];
  if (m.normalized) {
    for (double& v : out) v = v * m.train_std + m.train_mean;
  }
  return out;
}

MarketSeries AlignedFrame::as_series(std::string name) const {
  MarketSeries s(std::move(name), names);
  std::vector<double> row(names.size());
  for (std::size_t r = 0; r < dates.size(); ++r) {
    for (std::size_t c = 0; c < names.size(); ++c) row[c] = columns[c][r];
    s.append(dates[r], row);
  }
  return s;
}

AlignedFrame align_calendar(const MarketSeries& anchor, std::span<const MarketSeries> others,
                            std::span<const ColumnSelection> selection) {
  if (anchor.empty()) throw AlignmentError("anchor series '" + anchor.name() + "' is empty");

  std::vector<Date> dates = anchor.dates();
  for (const auto& other : others) {
    std::vector<Date> kept;
    std::set_intersection(dates.begin(), dates.end(), other.dates().begin(), other.dates().end(),
                          std::back_inserter(kept));
    if (kept.empty()) {
      throw AlignmentError("calendar intersection is empty: '" + other.name() + "' shares no dates with '" +
                           anchor.name() + "' after earlier joins (" + std::to_string(dates.size()) +
                           " candidate dates)");
    }
    dates = std::move(kept);
  }

  std::vector<const MarketSeries*> sources{&anchor};
  for (const auto& o : others) sources.push_back(&o);
  const auto find_series = [&](const std::string& name) -> const MarketSeries* {
    for (const auto* s : sources) {
      if (s->name() == name) return s;
    }
    throw ConfigError("column selection names unknown series '" + name + "'");
  };

  std::vector<ColumnSelection> cols(selection.begin(), selection.end());
  if (cols.empty()) {
    for (const auto* s : sources) {
      for (const auto& f : s->fields()) cols.push_back({s->name(), f, false, false});
    }
  }

  AlignedFrame frame;
  frame.dates = dates;
  for (const auto& sel : cols) {
    const MarketSeries* s = find_series(sel.series);
    const auto fi = s->field_index(sel.field);
    if (!fi) throw ConfigError("series '" + sel.series + "' has no field '" + sel.field + "'");
    std::vector<double> values;
    values.reserve(dates.size());
    std::size_t row = 0;
    for (Date d : dates) {
      while (s->dates()[row] < d) ++row;
      values.push_back(s->value(row, *fi));
    }
    frame.names.push_back(column_name(sel.series, sel.field));
    frame.columns.push_back(std::move(values));
    ColumnMeta m;
    m.source = sel.series;
    m.field = sel.field;
    m.normalize = sel.normalize;
    m.price = sel.price;
    frame.meta.push_back(std::move(m));
  }
  return frame;
}

}  // namespace newscast

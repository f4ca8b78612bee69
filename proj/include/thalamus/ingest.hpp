#pragma once

// Dataset ingestion (CSV / JSON) and paced replay of recorded streams.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "thalamus/model.hpp"
#include "thalamus/wire.hpp"

namespace thalamus::ingest {

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io_error", msg) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line_no, std::string column, const std::string& reason)
      : Error("parse_error", "line " + std::to_string(line_no) +
                                 (column.empty() ? "" : " column " + column) + ": " + reason),
        line_no_(line_no),
        column_(std::move(column)),
        reason_(reason) {}
  std::size_t line_no() const noexcept { return line_no_; }
  const std::string& column() const noexcept { return column_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t line_no_;
  std::string column_;
  std::string reason_;
};

class DuplicateTimestamp : public Error {
 public:
  explicit DuplicateTimestamp(Timestamp t)
      : Error("duplicate_timestamp", "t=" + std::to_string(t)), t_(t) {}
  Timestamp t() const noexcept { return t_; }

 private:
  Timestamp t_;
};

class EmptyStream : public Error {
 public:
  EmptyStream() : Error("empty_stream", "stream has no samples") {}
};

struct RecordedStream {
  SignalDescriptor descriptor;
  std::vector<Timestamp> timestamps;  // strictly increasing
  std::vector<Values> rows;           // aligned 1:1 with timestamps

  std::size_t size() const noexcept { return timestamps.size(); }
  bool empty() const noexcept { return timestamps.empty(); }

  Sample sample(std::size_t i) const {
    return Sample{descriptor.device_id, descriptor.signal, timestamps[i], rows[i]};
  }

  friend bool operator==(const RecordedStream&, const RecordedStream&) = default;
};

struct LoadResult {
  RecordedStream stream;
  bool reordered = false;  // input rows were not already in time order
};

struct CsvMapping {
  std::string timestamp_column = "t";
  std::vector<std::string> value_columns;  // empty = every non-timestamp column
  std::vector<std::string> na_tokens = {"NA", "NaN", ""};
};

// ---------------------------------------------------------------------------
// Timestamps

namespace detail {

// Howard Hinnant's days_from_civil.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline bool read_digits(std::string_view s, std::size_t& pos, std::size_t n, int& out) {
  if (pos + n > s.size()) return false;
  int v = 0;
  for (std::size_t i = 0; i < n; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  pos += n;
  out = v;
  return true;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Parses "YYYY-MM-DDTHH:MM:SS[.fff...][Z|+hh:mm|-hh:mm]" (a space is
/// accepted instead of 'T'; no suffix means UTC). Digits past milliseconds
/// are truncated.
inline std::optional<Timestamp> parse_iso8601(std::string_view s) {
  using detail::read_digits;
  std::size_t pos = 0;
  int year, month, day, hour, minute, second;
  if (!read_digits(s, pos, 4, year) || pos >= s.size() || s[pos++] != '-') return std::nullopt;
  if (!read_digits(s, pos, 2, month) || pos >= s.size() || s[pos++] != '-') return std::nullopt;
  if (!read_digits(s, pos, 2, day) || pos >= s.size()) return std::nullopt;
  if (s[pos] != 'T' && s[pos] != 't' && s[pos] != ' ') return std::nullopt;
  ++pos;
  if (!read_digits(s, pos, 2, hour) || pos >= s.size() || s[pos++] != ':') return std::nullopt;
  if (!read_digits(s, pos, 2, minute) || pos >= s.size() || s[pos++] != ':') return std::nullopt;
  if (!read_digits(s, pos, 2, second)) return std::nullopt;
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 60)
    return std::nullopt;

  std::int64_t millis = 0;
  if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {
    ++pos;
    int digits = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (digits < 3) millis = millis * 10 + (s[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) return std::nullopt;
    for (int i = digits; i < 3; ++i) millis *= 10;
  }

  std::int64_t offset_min = 0;
  if (pos < s.size()) {
    char c = s[pos++];
    if (c == 'Z' || c == 'z') {
      // UTC
    } else if (c == '+' || c == '-') {
      int oh, om = 0;
      if (!read_digits(s, pos, 2, oh)) return std::nullopt;
      if (pos < s.size() && s[pos] == ':') ++pos;
      if (pos < s.size() && !read_digits(s, pos, 2, om)) return std::nullopt;
      offset_min = (oh * 60 + om) * (c == '+' ? 1 : -1);
    } else {
      return std::nullopt;
    }
  }
  if (pos != s.size()) return std::nullopt;

  std::int64_t days = detail::days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  std::int64_t secs = days * 86400 + hour * 3600 + minute * 60 + second - offset_min * 60;
  Timestamp t = secs * 1000 + millis;
  if (t < 0) return std::nullopt;
  return t;
}

/// Integer epoch milliseconds or ISO-8601 UTC.
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  s = detail::trim(s);
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc{} && p == s.data() + s.size()) {
    if (v < 0) return std::nullopt;
    return v;
  }
  return parse_iso8601(s);
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

/// Splits CSV text into records. Quoted fields may contain commas, doubled
/// quotes and line breaks. Each record carries the 1-based line it starts on.
struct CsvRecord {
  std::size_t line_no = 0;
  std::vector<std::string> fields;
};

inline std::vector<CsvRecord> parse_csv(std::string_view text) {
  std::vector<CsvRecord> records;
  CsvRecord rec;
  std::string field;
  bool in_quotes = false;
  bool field_quoted = false;
  std::size_t line = 1;
  rec.line_no = 1;

  auto end_field = [&] {
    rec.fields.push_back(field_quoted ? field : std::string(detail::trim(field)));
    field.clear();
    field_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    bool blank = rec.fields.size() == 1 && rec.fields[0].empty();
    if (!blank) records.push_back(std::move(rec));
    rec = CsvRecord{};
    rec.line_no = line;
  };

  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (detail::trim(field).empty()) {
          field.clear();
          in_quotes = true;
          field_quoted = true;
        } else {
          throw ParseError(line, "", "unexpected quote");
        }
        break;
      case ',': end_field(); break;
      case '\r': break;
      case '\n':
        ++line;
        end_record();
        break;
      default:
        if (field_quoted) throw ParseError(line, "", "text after closing quote");
        field += c;
    }
  }
  if (in_quotes) throw ParseError(line, "", "unterminated quoted field");
  if (!field.empty() || field_quoted || !rec.fields.empty()) end_record();
  return records;
}

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return ss.str();
}

struct Row {
  std::size_t line_no;
  Timestamp t;
  Values values;
};

/// Sorts rows by time, rejects duplicates and assembles the stream.
inline LoadResult finish(std::vector<Row> rows, const SignalDescriptor& descriptor) {
  LoadResult out;
  out.stream.descriptor = descriptor;
  out.reordered = !std::is_sorted(rows.begin(), rows.end(),
                                  [](const Row& a, const Row& b) { return a.t < b.t; });
  if (out.reordered)
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].t == rows[i - 1].t) throw DuplicateTimestamp(rows[i].t);
  out.stream.timestamps.reserve(rows.size());
  out.stream.rows.reserve(rows.size());
  for (auto& r : rows) {
    out.stream.timestamps.push_back(r.t);
    out.stream.rows.push_back(std::move(r.values));
  }
  return out;
}

inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses CSV text already in memory. If `descriptor.channels` does not
/// match the number of value columns a ValidationError is thrown.
inline LoadResult load_csv_text(std::string_view text, const CsvMapping& mapping,
                                const SignalDescriptor& descriptor) {
  auto records = parse_csv(text);
  if (records.empty()) throw ParseError(1, "", "missing header row");
  const auto& header = records.front().fields;

  auto column_index = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError(records.front().line_no, name, "column not found in header");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t t_col = column_index(mapping.timestamp_column);
  std::vector<std::size_t> v_cols;
  std::vector<std::string> v_names = mapping.value_columns;
  if (v_names.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (i != t_col) v_names.push_back(header[i]);
  }
  for (const auto& name : v_names) v_cols.push_back(column_index(name));
  if (static_cast<int>(v_cols.size()) != descriptor.channels)
    throw ValidationError("channels", "descriptor declares " + std::to_string(descriptor.channels) +
                                          " channel(s) but mapping selects " + std::to_string(v_cols.size()));

  std::vector<detail::Row> rows;
  rows.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != header.size())
      throw ParseError(rec.line_no, "", "expected " + std::to_string(header.size()) + " fields, got " +
                                            std::to_string(rec.fields.size()));
    auto t = parse_timestamp(rec.fields[t_col]);
    if (!t) throw ParseError(rec.line_no, header[t_col], "invalid timestamp '" + rec.fields[t_col] + "'");
    detail::Row row{rec.line_no, *t, {}};
    row.values.reserve(v_cols.size());
    for (std::size_t k = 0; k < v_cols.size(); ++k) {
      const std::string& cell = rec.fields[v_cols[k]];
      if (std::find(mapping.na_tokens.begin(), mapping.na_tokens.end(), cell) != mapping.na_tokens.end()) {
        row.values.push_back(SampleValue::missing());
        continue;
      }
      auto v = detail::parse_number(cell);
      if (!v) throw ParseError(rec.line_no, header[v_cols[k]], "invalid number '" + cell + "'");
      row.values.emplace_back(*v);
    }
    rows.push_back(std::move(row));
  }
  return detail::finish(std::move(rows), descriptor);
}

inline LoadResult load_csv(const std::filesystem::path& path, const CsvMapping& mapping,
                           const SignalDescriptor& descriptor) {
  return load_csv_text(detail::read_file(path), mapping, descriptor);
}

/// JSON dataset: an array of {"t": <ms or ISO-8601>, "values": [number|"NA", ...]}.
inline LoadResult load_json_text(std::string_view text, const SignalDescriptor& descriptor) {
  using json = nlohmann::json;
  json root = json::parse(text.begin(), text.end(), nullptr, false);
  if (root.is_discarded()) throw ParseError(1, "", "malformed JSON");
  if (!root.is_array()) throw ParseError(1, "", "root must be an array");
  std::vector<detail::Row> rows;
  rows.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    const json& item = root[i];
    const std::size_t rec_no = i + 1;  // position in the array, 1-based
    if (!item.is_object()) throw ParseError(rec_no, "", "record must be an object");
    auto t_it = item.find("t");
    if (t_it == item.end()) throw ParseError(rec_no, "t", "missing");
    std::optional<Timestamp> t;
    if (t_it->is_number_integer() || t_it->is_number_unsigned()) {
      try {
        t = wire::detail::integer_value(*t_it, "t");
      } catch (const Error&) {
      }
      if (t && *t < 0) t.reset();
    } else if (t_it->is_string()) {
      t = parse_timestamp(t_it->get<std::string>());
    }
    if (!t) throw ParseError(rec_no, "t", "invalid timestamp");
    auto v_it = item.find("values");
    if (v_it == item.end()) throw ParseError(rec_no, "values", "missing");
    Values values;
    try {
      values = wire::values_from_json(*v_it);
    } catch (const Error& e) {
      throw ParseError(rec_no, "values", e.what());
    }
    if (static_cast<int>(values.size()) != descriptor.channels)
      throw ParseError(rec_no, "values", "expected " + std::to_string(descriptor.channels) +
                                             " value(s), got " + std::to_string(values.size()));
    rows.push_back({rec_no, *t, std::move(values)});
  }
  return detail::finish(std::move(rows), descriptor);
}

inline LoadResult load_json(const std::filesystem::path& path, const SignalDescriptor& descriptor) {
  return load_json_text(detail::read_file(path), descriptor);
}

/// Serializes a stream in the JSON dataset schema (one record per line).
inline std::string to_json_dataset(const RecordedStream& s) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += "{\"t\":" + std::to_string(s.timestamps[i]) + ",\"values\":" + wire::values_to_json(s.rows[i]).dump() + "}";
    out += i + 1 < s.size() ? ",\n" : "\n";
  }
  out += "]\n";
  return out;
}

/// Shifts every timestamp by a constant so the first one lands on t_start.
inline RecordedStream rebase_timestamps(const RecordedStream& s, Timestamp t_start) {
  if (s.empty()) throw EmptyStream();
  RecordedStream out = s;
  const Timestamp shift = t_start - s.timestamps.front();
  for (auto& t : out.timestamps) t += shift;
  return out;
}

// ---------------------------------------------------------------------------
// Replay

struct ReplayPlan {
  std::vector<RecordedStream> streams;
  double speed = 1.0;
  bool rebase = true;  // emit timestamps shifted to the replay start
  bool loop = false;
};

inline void validate(const ReplayPlan& plan) {
  if (!(plan.speed > 0) || !std::isfinite(plan.speed)) throw ValidationError("speed", "must be > 0");
}

/// Single-owner replay position. The epoch is fixed by the first
/// replay_next call unless set explicitly.
struct ReplayCursor {
  std::optional<Timestamp> epoch;
  std::vector<std::size_t> next;  // per stream
  Timestamp loop_offset = 0;      // added to source times after each wrap
  std::uint64_t emitted = 0;
};

struct ReplayItem {
  Timestamp due = 0;
  Sample sample;
};

namespace detail {

inline std::optional<Timestamp> first_time(const ReplayPlan& plan) {
  std::optional<Timestamp> lo;
  for (const auto& s : plan.streams)
    if (!s.empty()) lo = lo ? std::min(*lo, s.timestamps.front()) : s.timestamps.front();
  return lo;
}

inline std::optional<Timestamp> last_time(const ReplayPlan& plan) {
  std::optional<Timestamp> hi;
  for (const auto& s : plan.streams)
    if (!s.empty()) hi = hi ? std::max(*hi, s.timestamps.back()) : s.timestamps.back();
  return hi;
}

}  // namespace detail

/// Source-time span covered by one pass of the plan, including one
/// nominal sample period so a looped pass starts strictly after the last.
inline Timestamp loop_period(const ReplayPlan& plan) {
  auto lo = detail::first_time(plan);
  auto hi = detail::last_time(plan);
  if (!lo) return 0;
  double rate = 0;
  for (const auto& s : plan.streams) rate = std::max(rate, s.descriptor.rate_hz);
  Timestamp gap = rate > 0 ? std::max<Timestamp>(1, std::llround(1000.0 / rate)) : 1;
  return *hi - *lo + gap;
}

/// Earliest not-yet-emitted sample across the plan and the wall-clock
/// instant it is due: epoch + (t - first_t) / speed. Ties between streams
/// go to the stream listed first. Returns nullopt when exhausted (never
/// when looping over a non-empty plan).
inline std::optional<ReplayItem> replay_next(const ReplayPlan& plan, ReplayCursor& cursor, Timestamp now) {
  auto first = detail::first_time(plan);
  if (!first) return std::nullopt;
  if (!cursor.epoch) cursor.epoch = now;
  if (cursor.next.size() != plan.streams.size()) cursor.next.assign(plan.streams.size(), 0);

  auto pick = [&]() -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < plan.streams.size(); ++i) {
      const auto& s = plan.streams[i];
      if (cursor.next[i] >= s.size()) continue;
      if (!best || s.timestamps[cursor.next[i]] < plan.streams[*best].timestamps[cursor.next[*best]]) best = i;
    }
    return best;
  };

  auto idx = pick();
  if (!idx) {
    if (!plan.loop) return std::nullopt;
    cursor.loop_offset += loop_period(plan);
    std::fill(cursor.next.begin(), cursor.next.end(), 0);
    idx = pick();
  }
  const auto& s = plan.streams[*idx];
  const std::size_t row = cursor.next[*idx]++;
  const Timestamp source_t = s.timestamps[row] + cursor.loop_offset;
  const Timestamp elapsed = source_t - *first;

  ReplayItem item;
  item.due = *cursor.epoch + static_cast<Timestamp>(std::llround(static_cast<double>(elapsed) / plan.speed));
  item.sample = Sample{s.descriptor.device_id, s.descriptor.signal,
                       plan.rebase ? *cursor.epoch + elapsed : source_t, s.rows[row]};
  ++cursor.emitted;
  return item;
}

}  // namespace thalamus::ingest

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "tsadv/error.hpp"

namespace tsadv {

/// Univariate series of finite observations in dataset-native units.
/// Timestamps, when present, are seconds since the epoch (or the raw numeric
/// value if the column was numeric) and strictly increasing.
class TimeSeries {
public:
    explicit TimeSeries(std::vector<double> values, std::string name = {},
                        std::optional<std::vector<double>> timestamps = std::nullopt)
        : values_(std::move(values)), name_(std::move(name)), timestamps_(std::move(timestamps)) {
        detail::require(!values_.empty(), ErrorCode::EmptySeries, "series '" + name_ + "' is empty");
        for (std::size_t i = 0; i < values_.size(); ++i) {
            detail::require(std::isfinite(values_[i]), ErrorCode::InvalidArgument,
                            "non-finite value at index " + std::to_string(i));
        }
        if (timestamps_) {
            detail::require(timestamps_->size() == values_.size(), ErrorCode::InvalidArgument,
                            "timestamp count differs from value count");
            for (std::size_t i = 1; i < timestamps_->size(); ++i) {
                detail::require((*timestamps_)[i] > (*timestamps_)[i - 1], ErrorCode::InvalidArgument,
                                "timestamps not strictly increasing at index " + std::to_string(i));
            }
        }
    }

    std::span<const double> values() const noexcept { return values_; }
    const std::string& name() const noexcept { return name_; }
    const std::optional<std::vector<double>>& timestamps() const noexcept { return timestamps_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Contiguous sub-range [begin, begin + count) as a new series.
    TimeSeries slice(std::size_t begin, std::size_t count) const {
        std::vector<double> v(values_.begin() + static_cast<std::ptrdiff_t>(begin),
                              values_.begin() + static_cast<std::ptrdiff_t>(begin + count));
        std::optional<std::vector<double>> ts;
        if (timestamps_) {
            ts.emplace(timestamps_->begin() + static_cast<std::ptrdiff_t>(begin),
                       timestamps_->begin() + static_cast<std::ptrdiff_t>(begin + count));
        }
        return TimeSeries(std::move(v), name_, std::move(ts));
    }

private:
    std::vector<double> values_;
    std::string name_;
    std::optional<std::vector<double>> timestamps_;
};

/// History X (length T) and held-out truth Y (length tau). Only evaluation
/// code reads `truth`.
struct WindowPair {
    std::vector<double> history;
    std::vector<double> truth;
    std::size_t origin_index = 0;
};

struct SplitSpec {
    double train_fraction = 0.5;
    double validation_fraction = 0.25;
    double test_fraction = 0.25;

    void validate() const {
        for (double f : {train_fraction, validation_fraction, test_fraction}) {
            detail::require(f > 0.0 && f < 1.0, ErrorCode::InvalidArgument,
                            "split fractions must lie in (0, 1)");
        }
        detail::require(std::abs(train_fraction + validation_fraction + test_fraction - 1.0) <= 1e-12,
                        ErrorCode::InvalidArgument, "split fractions must sum to 1");
    }
};

struct SeriesStats {
    double mean = 0.0;
    double std = 0.0; // population convention (divide by n)
    double min = 0.0;
    double max = 0.0;
};

struct SplitParts {
    TimeSeries train;
    TimeSeries validation;
    TimeSeries test;
};

/// Column by header name or zero-based index.
using ColumnSelector = std::variant<std::string, std::size_t>;

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                current.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    fields.push_back(std::move(current));
    return fields;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_real(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return std::nullopt;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

/// Numeric timestamps pass through; "YYYY-MM-DD[ HH:MM[:SS]]" becomes UTC seconds.
inline std::optional<double> parse_timestamp(std::string_view text) {
    if (auto v = parse_real(text)) return v;
    std::string s(trim(text));
    if (s.size() > 10 && s[10] == 'T') s[10] = ' ';
    for (const char* fmt : {"%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d"}) {
        std::tm tm{};
        std::istringstream in(s);
        in >> std::get_time(&tm, fmt);
        if (!in.fail()) {
            in >> std::ws;
            if (!in.eof()) continue;
            return static_cast<double>(timegm(&tm));
        }
    }
    return std::nullopt;
}

inline std::size_t resolve_column(const std::vector<std::string>& header, const ColumnSelector& column,
                                  const std::string& path) {
    if (const auto* name = std::get_if<std::string>(&column)) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (trim(header[i]) == *name) return i;
        }
        fail(ErrorCode::ColumnNotFound, "column '" + *name + "' not in header of " + path);
    }
    std::size_t index = std::get<std::size_t>(column);
    require(index < header.size(), ErrorCode::ColumnNotFound,
            "column index " + std::to_string(index) + " out of range for " + path);
    return index;
}

} // namespace detail

/// Interprets a command-line column argument: a header name, or a zero-based
/// index when the text is all digits.
inline ColumnSelector parse_column_selector(std::string_view text) {
    if (!text.empty() && std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        std::size_t index = 0;
        std::from_chars(text.data(), text.data() + text.size(), index);
        return index;
    }
    return std::string(text);
}

/// Reads one column of a headed CSV file. Data rows are numbered from 1 in
/// ParseError; blank lines are skipped, anything else unparseable is an error.
inline TimeSeries load_csv(const std::filesystem::path& path, const ColumnSelector& column,
                           const std::optional<ColumnSelector>& timestamp_column = std::nullopt) {
    std::ifstream in(path);
    detail::require(in.good(), ErrorCode::FileNotFound, "cannot open " + path.string());

    std::string line;
    detail::require(static_cast<bool>(std::getline(in, line)), ErrorCode::EmptySeries,
                    path.string() + " has no header row");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
        static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
        line.erase(0, 3);
    }
    const auto header = detail::split_csv_line(detail::trim(line));
    const std::size_t value_col = detail::resolve_column(header, column, path.string());
    std::optional<std::size_t> time_col;
    if (timestamp_column) time_col = detail::resolve_column(header, *timestamp_column, path.string());

    std::vector<double> values;
    std::vector<double> stamps;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        ++row;
        const auto fields = detail::split_csv_line(detail::trim(line));
        auto raise = [&](const std::string& what) {
            Error err(ErrorCode::ParseError, path.string() + " row " + std::to_string(row) + ": " + what);
            err.row = row;
            throw err;
        };
        if (value_col >= fields.size()) raise("missing value column");
        auto value = detail::parse_real(fields[value_col]);
        if (!value) raise("cannot parse '" + fields[value_col] + "' as a real number");
        values.push_back(*value);
        if (time_col) {
            if (*time_col >= fields.size()) raise("missing timestamp column");
            auto stamp = detail::parse_timestamp(fields[*time_col]);
            if (!stamp) raise("cannot parse timestamp '" + fields[*time_col] + "'");
            stamps.push_back(*stamp);
        }
    }
    detail::require(!values.empty(), ErrorCode::EmptySeries, path.string() + " has no data rows");

    std::string name = std::holds_alternative<std::string>(column) ? std::get<std::string>(column)
                                                                   : std::string(detail::trim(header[value_col]));
    std::optional<std::vector<double>> ts;
    if (time_col) ts = std::move(stamps);
    return TimeSeries(std::move(values), std::move(name), std::move(ts));
}

/// Contiguous train/validation/test parts. Train and validation take
/// floor(n * fraction) points; the remainder goes to test.
inline SplitParts chronological_split(const TimeSeries& series, const SplitSpec& spec = {}) {
    spec.validate();
    const std::size_t n = series.size();
    detail::require(n >= 4, ErrorCode::SeriesTooShort, "split needs at least 4 points, got " + std::to_string(n));
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train_fraction));
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.validation_fraction));
    detail::require(n_train >= 1 && n_val >= 1 && n_train + n_val < n, ErrorCode::SeriesTooShort,
                    "series of length " + std::to_string(n) + " leaves an empty split part");
    return SplitParts{series.slice(0, n_train), series.slice(n_train, n_val),
                      series.slice(n_train + n_val, n - n_train - n_val)};
}

/// Window origins 0, stride, 2*stride, ... while origin + history + horizon <= n.
inline std::vector<std::size_t> window_origins(std::size_t length, std::size_t history, std::size_t horizon,
                                               std::size_t stride) {
    detail::require(history >= 1, ErrorCode::InvalidArgument, "history length must be >= 1");
    detail::require(stride >= 1, ErrorCode::InvalidArgument, "stride must be >= 1");
    detail::require(horizon >= 1 && horizon <= history, ErrorCode::InvalidHorizon,
                    "horizon " + std::to_string(horizon) + " must lie in [1, " + std::to_string(history) + "]");
    detail::require(length >= history + horizon, ErrorCode::SeriesTooShort,
                    "series of length " + std::to_string(length) + " cannot hold history " +
                        std::to_string(history) + " + horizon " + std::to_string(horizon));
    std::vector<std::size_t> origins;
    for (std::size_t origin = 0; origin + history + horizon <= length; origin += stride) origins.push_back(origin);
    return origins;
}

inline std::vector<WindowPair> make_windows(const TimeSeries& series, std::size_t history, std::size_t horizon,
                                            std::size_t stride) {
    const auto values = series.values();
    std::vector<WindowPair> windows;
    for (std::size_t origin : window_origins(values.size(), history, horizon, stride)) {
        auto first = values.begin() + static_cast<std::ptrdiff_t>(origin);
        auto split = first + static_cast<std::ptrdiff_t>(history);
        windows.push_back(WindowPair{std::vector<double>(first, split),
                                     std::vector<double>(split, split + static_cast<std::ptrdiff_t>(horizon)),
                                     origin});
    }
    return windows;
}

inline SeriesStats series_stats(std::span<const double> values) {
    detail::require(!values.empty(), ErrorCode::EmptyInput, "statistics of an empty sequence");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    // clamp guards min <= mean <= max against summation rounding
    return SeriesStats{std::clamp(mean, *lo, *hi), std::sqrt(ss / n), *lo, *hi};
}

} // namespace tsadv

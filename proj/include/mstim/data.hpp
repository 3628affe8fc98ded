#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mstim/container.hpp"
#include "mstim/tensor.hpp"

namespace mstim::data {

// ---------------------------------------------------------------------------
// Raw records
// ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 9> kColumns{
    "holiday", "temp", "rain_1h", "snow_1h", "clouds_all", "weather_main", "weather_description", "date_time", "traffic_volume"};

struct RawRecord {
    std::string holiday;
    double temp = 0.0;        // kelvin
    double rain_1h = 0.0;     // mm
    double snow_1h = 0.0;     // mm
    double clouds_all = 0.0;  // percent
    std::string weather_main;
    std::string weather_description;
    std::int64_t timestamp = 0;  // seconds since 1970-01-01 00:00, wall clock taken as-is
    std::int64_t traffic_volume = 0;
    std::size_t line = 0;  // 1-based line in the source file

    bool is_holiday() const { return !holiday.empty() && holiday != "None"; }
};

struct Reject {
    std::size_t line = 0;
    std::string reason;
};

struct ParseResult {
    std::vector<RawRecord> records;
    std::vector<Reject> rejects;
    std::size_t data_rows = 0;  // non-empty lines after the header
};

/// Parses "YYYY-MM-DD HH:MM[:SS]" into seconds since the epoch.
inline std::optional<std::int64_t> parse_timestamp(std::string_view text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    const auto num = [&](std::size_t pos, std::size_t len, int& out) {
        if (pos + len > text.size()) return false;
        const auto* first = text.data() + pos;
        auto [ptr, ec] = std::from_chars(first, first + len, out);
        return ec == std::errc() && ptr == first + len;
    };
    if (text.size() != 16 && text.size() != 19) return std::nullopt;
    if (text[4] != '-' || text[7] != '-' || text[10] != ' ' || text[13] != ':') return std::nullopt;
    if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d) || !num(11, 2, h) || !num(14, 2, mi)) return std::nullopt;
    if (text.size() == 19 && (text[16] != ':' || !num(17, 2, s))) return std::nullopt;
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59) return std::nullopt;
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

inline std::string format_timestamp(std::int64_t seconds) {
    using namespace std::chrono;
    const auto days = static_cast<int>(seconds >= 0 ? seconds / 86400 : (seconds - 86399) / 86400);
    const std::int64_t rem = seconds - static_cast<std::int64_t>(days) * 86400;
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                  static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60));
    return buf;
}

/// 0..23
inline int hour_of_day(std::int64_t seconds) { return static_cast<int>(((seconds % 86400) + 86400) % 86400 / 3600); }

/// 0 = Monday .. 6 = Sunday
inline int day_of_week(std::int64_t seconds) {
    const auto days = static_cast<int>(seconds >= 0 ? seconds / 86400 : (seconds - 86399) / 86400);
    const std::chrono::weekday wd{std::chrono::sys_days{std::chrono::days{days}}};
    return static_cast<int>((wd.c_encoding() + 6) % 7);
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                current += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(current));
            current.clear();
        } else {
            current += c;
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

inline std::optional<double> parse_real(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::optional<std::int64_t> parse_integer(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

} // namespace detail

/// Reads the Metro Interstate Traffic Volume CSV layout. Malformed rows are
/// collected in `rejects` with their line numbers.
inline ParseResult parse_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("CSV is empty: missing header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = detail::split_csv_line(detail::trim(line));

    std::array<std::size_t, kColumns.size()> column_of{};
    std::vector<bool> seen(kColumns.size(), false);
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto name = detail::trim(header[i]);
        const auto it = std::find(kColumns.begin(), kColumns.end(), name);
        if (it == kColumns.end()) throw SchemaError("unknown CSV column '" + std::string(name) + "'");
        const auto idx = static_cast<std::size_t>(it - kColumns.begin());
        if (seen[idx]) throw SchemaError("duplicate CSV column '" + std::string(name) + "'");
        seen[idx] = true;
        column_of[idx] = i;
    }
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
        if (!seen[c]) throw SchemaError("missing CSV column '" + std::string(kColumns[c]) + "'");
    }

    ParseResult result;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        ++result.data_rows;
        const auto fields = detail::split_csv_line(detail::trim(line));
        const auto reject = [&](std::string reason) { result.rejects.push_back({line_no, std::move(reason)}); };
        if (fields.size() != kColumns.size()) {
            reject("expected " + std::to_string(kColumns.size()) + " fields, found " + std::to_string(fields.size()));
            continue;
        }
        const auto field = [&](std::size_t c) { return detail::trim(fields[column_of[c]]); };
        RawRecord r;
        r.line = line_no;
        r.holiday = std::string(field(0));
        r.weather_main = std::string(field(5));
        r.weather_description = std::string(field(6));
        const auto temp = detail::parse_real(field(1));
        const auto rain = detail::parse_real(field(2));
        const auto snow = detail::parse_real(field(3));
        const auto clouds = detail::parse_real(field(4));
        const auto ts = parse_timestamp(field(7));
        const auto volume = detail::parse_integer(field(8));
        if (!temp) {
            reject("non-numeric temp '" + std::string(field(1)) + "'");
        } else if (!rain) {
            reject("non-numeric rain_1h '" + std::string(field(2)) + "'");
        } else if (!snow) {
            reject("non-numeric snow_1h '" + std::string(field(3)) + "'");
        } else if (!clouds || *clouds < 0.0 || *clouds > 100.0) {
            reject("clouds_all '" + std::string(field(4)) + "' is not a percentage in [0, 100]");
        } else if (r.weather_main.empty()) {
            reject("empty weather_main");
        } else if (!ts) {
            reject("unparseable date_time '" + std::string(field(7)) + "'");
        } else if (!volume || *volume < 0) {
            reject("traffic_volume '" + std::string(field(8)) + "' is not a non-negative integer");
        } else {
            r.temp = *temp;
            r.rain_1h = *rain;
            r.snow_1h = *snow;
            r.clouds_all = *clouds;
            r.timestamp = *ts;
            r.traffic_volume = *volume;
            result.records.push_back(std::move(r));
        }
    }
    return result;
}

inline ParseResult parse_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open CSV file '" + path + "'");
    return parse_csv(in);
}

// ---------------------------------------------------------------------------
// Cleaning
// ---------------------------------------------------------------------------

inline constexpr double kMinPlausibleTemp = 100.0;  // K; the source data marks missing readings with 0 K
inline constexpr double kMaxPlausibleRain = 300.0;  // mm per hour

struct CleanSummary {
    std::size_t input_records = 0;
    std::size_t duplicates_removed = 0;
    std::size_t dropped_temperature = 0;
    std::size_t dropped_rain = 0;
    std::size_t output_records = 0;

    nlohmann::json to_json() const {
        return {{"input_records", input_records},
                {"duplicates_removed", duplicates_removed},
                {"dropped_temperature", dropped_temperature},
                {"dropped_rain", dropped_rain},
                {"output_records", output_records}};
    }
};

struct CleanResult {
    std::vector<RawRecord> records;
    CleanSummary summary;
};

/// Sorts by timestamp, keeps the first record per timestamp (in input order) and
/// drops physically impossible readings.
inline CleanResult clean(std::vector<RawRecord> records) {
    CleanResult out;
    out.summary.input_records = records.size();
    std::stable_sort(records.begin(), records.end(),
                     [](const RawRecord& a, const RawRecord& b) { return a.timestamp < b.timestamp; });
    for (auto& r : records) {
        if (!out.records.empty() && out.records.back().timestamp == r.timestamp) {
            ++out.summary.duplicates_removed;
            continue;
        }
        out.records.push_back(std::move(r));
    }
    std::vector<RawRecord> kept;
    kept.reserve(out.records.size());
    for (auto& r : out.records) {
        if (r.temp < kMinPlausibleTemp) {
            ++out.summary.dropped_temperature;
        } else if (r.rain_1h > kMaxPlausibleRain) {
            ++out.summary.dropped_rain;
        } else {
            kept.push_back(std::move(r));
        }
    }
    out.records = std::move(kept);
    out.summary.output_records = out.records.size();
    return out;
}

// ---------------------------------------------------------------------------
// Feature encoding
// ---------------------------------------------------------------------------

/// Column layout of an encoded feature row:
///   temp, rain_1h, snow_1h, clouds_all, hour_sin, hour_cos, dow_sin, dow_cos,
///   holiday, weather=<category>..., traffic_volume
struct FeatureLayout {
    std::vector<std::string> vocabulary;  // weather_main categories, sorted

    static constexpr std::size_t kFixedLeading = 9;

    std::size_t width() const { return kFixedLeading + vocabulary.size() + 1; }
    std::size_t target_column() const { return width() - 1; }

    std::vector<std::string> names() const {
        std::vector<std::string> n{"temp",    "rain_1h", "snow_1h", "clouds_all", "hour_sin",
                                   "hour_cos", "dow_sin", "dow_cos", "holiday"};
        for (const auto& v : vocabulary) n.push_back("weather=" + v);
        n.push_back("traffic_volume");
        return n;
    }

    /// Columns that are z-scored: the four meteorological readings and the volume.
    std::vector<std::size_t> standardized_columns() const { return {0, 1, 2, 3, target_column()}; }
};

/// weather_main categories present in the first `train_count` records.
inline std::vector<std::string> build_vocabulary(std::span<const RawRecord> records, std::size_t train_count) {
    std::set<std::string> cats;
    for (std::size_t i = 0; i < std::min(train_count, records.size()); ++i) cats.insert(records[i].weather_main);
    return {cats.begin(), cats.end()};
}

struct EncodedSeries {
    FeatureLayout layout;
    std::vector<std::int64_t> timestamps;
    std::vector<double> values;  // rows x layout.width(), unstandardized
    std::vector<double> volume;  // raw traffic_volume per row

    std::size_t rows() const { return timestamps.size(); }
};

/// Encodes cleaned, sorted records. Categories outside the vocabulary get an all-zero one-hot block.
inline EncodedSeries encode(std::span<const RawRecord> records, const FeatureLayout& layout) {
    EncodedSeries out;
    out.layout = layout;
    const std::size_t w = layout.width();
    out.values.assign(records.size() * w, 0.0);
    out.timestamps.reserve(records.size());
    out.volume.reserve(records.size());
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const RawRecord& r = records[i];
        double* row = out.values.data() + i * w;
        row[0] = r.temp;
        row[1] = r.rain_1h;
        row[2] = r.snow_1h;
        row[3] = r.clouds_all;
        const double hour = hour_of_day(r.timestamp);
        const double dow = day_of_week(r.timestamp);
        row[4] = std::sin(two_pi * hour / 24.0);
        row[5] = std::cos(two_pi * hour / 24.0);
        row[6] = std::sin(two_pi * dow / 7.0);
        row[7] = std::cos(two_pi * dow / 7.0);
        row[8] = r.is_holiday() ? 1.0 : 0.0;
        const auto it = std::lower_bound(layout.vocabulary.begin(), layout.vocabulary.end(), r.weather_main);
        if (it != layout.vocabulary.end() && *it == r.weather_main) {
            row[FeatureLayout::kFixedLeading + static_cast<std::size_t>(it - layout.vocabulary.begin())] = 1.0;
        }
        row[layout.target_column()] = static_cast<double>(r.traffic_volume);
        out.timestamps.push_back(r.timestamp);
        out.volume.push_back(static_cast<double>(r.traffic_volume));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization, splitting and windowing
// ---------------------------------------------------------------------------

struct NormalizationStats {
    std::vector<std::size_t> columns;  // standardized feature columns
    std::vector<double> mean;
    std::vector<double> std;
    std::size_t target_column = 0;

    bool empty() const { return columns.empty(); }

    std::size_t slot_of(std::size_t column) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == column) return i;
        throw UsageError("column " + std::to_string(column) + " is not standardized");
    }

    double normalize(double value, std::size_t column) const {
        const auto s = slot_of(column);
        return (value - mean[s]) / std[s];
    }
    double denormalize(double value, std::size_t column) const {
        const auto s = slot_of(column);
        return value * std[s] + mean[s];
    }

    nlohmann::json to_json() const {
        return {{"columns", columns}, {"mean", mean}, {"std", std}, {"target_column", target_column}};
    }
    static NormalizationStats from_json(const nlohmann::json& j) {
        NormalizationStats s;
        s.columns = j.at("columns").get<std::vector<std::size_t>>();
        s.mean = j.at("mean").get<std::vector<double>>();
        s.std = j.at("std").get<std::vector<double>>();
        s.target_column = j.at("target_column").get<std::size_t>();
        return s;
    }
};

/// Fits per-column mean and population standard deviation on rows [0, rows).
/// Constant columns get std 1 so they map to 0.
inline NormalizationStats fit_stats(std::span<const double> values, std::size_t width, std::size_t rows,
                                    const std::vector<std::size_t>& columns, std::size_t target_column) {
    NormalizationStats s;
    s.columns = columns;
    s.target_column = target_column;
    for (auto c : columns) {
        double total = 0.0;
        for (std::size_t r = 0; r < rows; ++r) total += values[r * width + c];
        const double mu = total / static_cast<double>(rows);
        double sq = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double d = values[r * width + c] - mu;
            sq += d * d;
        }
        double sd = std::sqrt(sq / static_cast<double>(rows));
        if (!(sd > 1e-12)) sd = 1.0;
        s.mean.push_back(mu);
        s.std.push_back(sd);
    }
    return s;
}

/// Maps standardized model outputs back to vehicles/hour: x * std + mean.
inline Tensor denormalize(const Tensor& preds, const NormalizationStats& stats) {
    if (stats.empty()) throw UsageError("denormalize: normalization stats are missing");
    const auto s = stats.slot_of(stats.target_column);
    auto values = preds.to_vector();
    for (auto& v : values) v = v * stats.std[s] + stats.mean[s];
    return Tensor::from(preds.shape(), std::move(values));
}

enum class Split { train, validation, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "unknown";
}

struct SplitRatios {
    double train = 0.7;
    double validation = 0.1;
    double test = 0.2;
};

struct WindowConfig {
    std::size_t window = 24;
    std::size_t horizon = 1;
    SplitRatios ratios;
    std::int64_t max_gap_seconds = 6 * 3600;

    nlohmann::json to_json() const {
        return {{"window", window},
                {"horizon", horizon},
                {"ratios", {ratios.train, ratios.validation, ratios.test}},
                {"max_gap_seconds", max_gap_seconds}};
    }
};

/// Normalized time series shared by all splits.
struct Series {
    std::vector<std::int64_t> timestamps;
    std::vector<double> features;  // rows x width, standardized
    std::vector<double> volume;    // raw traffic_volume
    std::size_t width = 0;

    std::size_t rows() const { return timestamps.size(); }
};

/// Windows of one split: inputs are records [s, s+n), targets the standardized
/// volume at [s+n, s+n+T).
class WindowedDataset {
public:
    WindowedDataset() = default;
    WindowedDataset(std::shared_ptr<const Series> series, std::vector<std::size_t> starts, std::size_t window,
                    std::size_t horizon, std::size_t target_column, Split split)
        : series_(std::move(series)), starts_(std::move(starts)), window_(window), horizon_(horizon),
          target_column_(target_column), split_(split) {}

    std::size_t size() const { return starts_.size(); }
    bool empty() const { return starts_.empty(); }
    std::size_t window() const { return window_; }
    std::size_t horizon() const { return horizon_; }
    std::size_t features() const { return series_->width; }
    Split split() const { return split_; }
    const std::vector<std::size_t>& starts() const { return starts_; }
    const Series& series() const { return *series_; }

    /// [B, n, d] for the given window indices.
    Tensor windows(std::span<const std::size_t> indices) const {
        check(indices);
        const std::size_t d = series_->width;
        std::vector<double> out;
        out.reserve(indices.size() * window_ * d);
        for (auto i : indices) {
            const auto first = series_->features.begin() + static_cast<std::ptrdiff_t>(starts_[i] * d);
            out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(window_ * d));
        }
        return Tensor::from({indices.size(), window_, d}, std::move(out));
    }

    /// [B, T] standardized targets.
    Tensor targets(std::span<const std::size_t> indices) const {
        check(indices);
        const std::size_t d = series_->width;
        std::vector<double> out;
        out.reserve(indices.size() * horizon_);
        for (auto i : indices)
            for (std::size_t h = 0; h < horizon_; ++h) out.push_back(series_->features[(starts_[i] + window_ + h) * d + target_column_]);
        return Tensor::from({indices.size(), horizon_}, std::move(out));
    }

    std::vector<std::size_t> all_indices() const {
        std::vector<std::size_t> idx(size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return idx;
    }

    Tensor windows() const { return windows(all_indices()); }
    Tensor targets() const { return targets(all_indices()); }

    std::int64_t last_input_time(std::size_t i) const { return series_->timestamps[starts_.at(i) + window_ - 1]; }
    std::int64_t first_target_time(std::size_t i) const { return series_->timestamps[starts_.at(i) + window_]; }

    /// Copy restricted to the given windows (same series).
    WindowedDataset subset(std::span<const std::size_t> indices) const {
        check(indices);
        std::vector<std::size_t> starts;
        for (auto i : indices) starts.push_back(starts_[i]);
        return {series_, std::move(starts), window_, horizon_, target_column_, split_};
    }

private:
    void check(std::span<const std::size_t> indices) const {
        if (indices.empty()) throw UsageError("empty window selection");
        for (auto i : indices)
            if (i >= starts_.size()) throw DimensionError("window index " + std::to_string(i) + " out of range");
    }

    std::shared_ptr<const Series> series_;
    std::vector<std::size_t> starts_;
    std::size_t window_ = 0;
    std::size_t horizon_ = 0;
    std::size_t target_column_ = 0;
    Split split_ = Split::train;
};

struct SplitBounds {
    std::size_t train_end = 0;       // records [0, train_end)
    std::size_t validation_end = 0;  // records [train_end, validation_end); test is the rest
};

inline SplitBounds split_bounds(std::size_t rows, const SplitRatios& ratios) {
    const double total = ratios.train + ratios.validation + ratios.test;
    if (ratios.train <= 0.0 || ratios.validation < 0.0 || ratios.test <= 0.0 || std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("split ratios must be non-negative, with positive train/test shares, and sum to 1");
    }
    // The epsilon keeps e.g. (0.7 + 0.1) * 1000 = 799.999... at 800.
    const auto boundary = [&](double share) {
        return std::min(rows, static_cast<std::size_t>(std::floor(share * static_cast<double>(rows) + 1e-9)));
    };
    return {boundary(ratios.train), boundary(ratios.train + ratios.validation)};
}

/// Window starts s in [begin, end) with s+n+T <= end and no gap larger than max_gap inside [s, s+n+T).
inline std::vector<std::size_t> window_starts(std::span<const std::int64_t> timestamps, std::size_t begin, std::size_t end,
                                              std::size_t span, std::int64_t max_gap) {
    std::vector<std::size_t> starts;
    if (end < begin + span) return starts;
    // run[i]: length of the gap-free run of records ending at i (within [begin, end)).
    std::size_t run = 0;
    for (std::size_t i = begin; i < end; ++i) {
        if (i == begin || timestamps[i] - timestamps[i - 1] > max_gap) {
            run = 1;
        } else {
            ++run;
        }
        if (run >= span) starts.push_back(i + 1 - span);
    }
    return starts;
}

struct SplitDatasets {
    NormalizationStats stats;
    SplitBounds bounds;
    std::shared_ptr<const Series> series;
    WindowedDataset train;
    WindowedDataset validation;
    WindowedDataset test;

    const WindowedDataset& get(Split s) const {
        switch (s) {
            case Split::train: return train;
            case Split::validation: return validation;
            case Split::test: return test;
        }
        return test;
    }
};

/// Chronological split, standardization fit on train rows, stride-1 windows
/// that never cross a split boundary or a gap longer than `max_gap_seconds`.
inline SplitDatasets split_and_window(const EncodedSeries& encoded, const WindowConfig& config) {
    if (config.window == 0 || config.horizon == 0) throw ConfigError("window and horizon must be positive");
    const std::size_t rows = encoded.rows();
    const std::size_t span = config.window + config.horizon;
    if (rows < span) {
        throw ConfigError("series of " + std::to_string(rows) + " records is shorter than window + horizon = " +
                          std::to_string(span));
    }
    SplitDatasets out;
    out.bounds = split_bounds(rows, config.ratios);
    if (out.bounds.train_end == 0) throw ConfigError("training split is empty");
    const std::size_t w = encoded.layout.width();
    out.stats = fit_stats(encoded.values, w, out.bounds.train_end, encoded.layout.standardized_columns(),
                          encoded.layout.target_column());

    auto series = std::make_shared<Series>();
    series->timestamps = encoded.timestamps;
    series->volume = encoded.volume;
    series->width = w;
    series->features = encoded.values;
    for (std::size_t slot = 0; slot < out.stats.columns.size(); ++slot) {
        const std::size_t c = out.stats.columns[slot];
        for (std::size_t r = 0; r < rows; ++r) {
            double& v = series->features[r * w + c];
            v = (v - out.stats.mean[slot]) / out.stats.std[slot];
        }
    }
    out.series = series;
    const auto make = [&](std::size_t begin, std::size_t end, Split split) {
        return WindowedDataset(series, window_starts(series->timestamps, begin, end, span, config.max_gap_seconds),
                               config.window, config.horizon, encoded.layout.target_column(), split);
    };
    out.train = make(0, out.bounds.train_end, Split::train);
    out.validation = make(out.bounds.train_end, out.bounds.validation_end, Split::validation);
    out.test = make(out.bounds.validation_end, rows, Split::test);
    return out;
}

// ---------------------------------------------------------------------------
// End-to-end preparation and the dataset cache
// ---------------------------------------------------------------------------

struct PreparedDataset {
    WindowConfig config;
    FeatureLayout layout;
    SplitDatasets splits;
    nlohmann::json summary;

    std::size_t features() const { return layout.width(); }

    /// Identifies the model-facing contract: window, horizon, feature names and normalization.
    std::string fingerprint() const {
        const nlohmann::json basis{{"window", config.window},
                                   {"horizon", config.horizon},
                                   {"features", layout.names()},
                                   {"stats", splits.stats.to_json()}};
        const std::string text = basis.dump();
        std::uint64_t h = 14695981039346656037ull;  // FNV-1a
        for (unsigned char c : text) {
            h ^= c;
            h *= 1099511628211ull;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

inline nlohmann::json window_counts_json(const SplitDatasets& s) {
    return {{"train", s.train.size()}, {"validation", s.validation.size()}, {"test", s.test.size()}};
}

/// parse -> clean -> encode -> split_and_window, with a JSON summary of every stage.
inline PreparedDataset prepare_from_parsed(ParseResult parsed, const WindowConfig& config, const std::string& source) {
    PreparedDataset out;
    out.config = config;
    const std::size_t parsed_count = parsed.records.size();
    auto cleaned = clean(std::move(parsed.records));
    const auto bounds = split_bounds(cleaned.records.size(), config.ratios);
    out.layout.vocabulary = build_vocabulary(cleaned.records, bounds.train_end);
    const auto encoded = encode(cleaned.records, out.layout);
    out.splits = split_and_window(encoded, config);

    nlohmann::json rejects = nlohmann::json::array();
    for (const auto& r : parsed.rejects) rejects.push_back({{"line", r.line}, {"reason", r.reason}});
    const auto& ts = out.splits.series->timestamps;
    out.summary = {
        {"source", source},
        {"data_rows", parsed.data_rows},
        {"parsed_records", parsed_count},
        {"rejected_rows", parsed.rejects.size()},
        {"rejects", rejects},
        {"cleaning", cleaned.summary.to_json()},
        {"vocabulary", out.layout.vocabulary},
        {"features", out.layout.names()},
        {"config", config.to_json()},
        {"split_records",
         {{"train", out.splits.bounds.train_end},
          {"validation", out.splits.bounds.validation_end - out.splits.bounds.train_end},
          {"test", ts.size() - out.splits.bounds.validation_end}}},
        {"window_counts", window_counts_json(out.splits)},
        {"first_timestamp", format_timestamp(ts.front())},
        {"last_timestamp", format_timestamp(ts.back())},
        {"dataset_fingerprint", out.fingerprint()},
    };
    return out;
}

inline PreparedDataset prepare_csv(const std::string& path, const WindowConfig& config = {}) {
    return prepare_from_parsed(parse_csv(path), config, path);
}

inline constexpr std::string_view kDatasetMagic = "MSTIMDAT";

namespace detail {

inline std::vector<double> to_doubles(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

inline std::vector<std::size_t> to_sizes(const std::vector<double>& v) {
    std::vector<std::size_t> out;
    out.reserve(v.size());
    for (double x : v) out.push_back(static_cast<std::size_t>(x));
    return out;
}

} // namespace detail

inline void save_dataset(const std::string& path, const PreparedDataset& ds) {
    const auto& s = *ds.splits.series;
    nlohmann::json meta{{"config", ds.config.to_json()},
                        {"vocabulary", ds.layout.vocabulary},
                        {"features", ds.layout.names()},
                        {"stats", ds.splits.stats.to_json()},
                        {"bounds", {ds.splits.bounds.train_end, ds.splits.bounds.validation_end}},
                        {"fingerprint", ds.fingerprint()},
                        {"summary", ds.summary}};
    std::vector<double> ts(s.timestamps.begin(), s.timestamps.end());
    std::vector<container::NamedArray> arrays{
        {"timestamps", {s.rows()}, std::move(ts)},
        {"features", {s.rows(), s.width}, s.features},
        {"volume", {s.rows()}, s.volume},
        {"train_starts", {ds.splits.train.size()}, detail::to_doubles(ds.splits.train.starts())},
        {"validation_starts", {ds.splits.validation.size()}, detail::to_doubles(ds.splits.validation.starts())},
        {"test_starts", {ds.splits.test.size()}, detail::to_doubles(ds.splits.test.starts())},
    };
    container::write_file(path, kDatasetMagic, meta, arrays);
}

inline PreparedDataset load_dataset(const std::string& path) {
    const auto contents = container::read_file(path, kDatasetMagic);
    PreparedDataset ds;
    try {
        const auto& meta = contents.meta;
        const auto& cfg = meta.at("config");
        ds.config.window = cfg.at("window").get<std::size_t>();
        ds.config.horizon = cfg.at("horizon").get<std::size_t>();
        const auto ratios = cfg.at("ratios").get<std::vector<double>>();
        ds.config.ratios = {ratios.at(0), ratios.at(1), ratios.at(2)};
        ds.config.max_gap_seconds = cfg.at("max_gap_seconds").get<std::int64_t>();
        ds.layout.vocabulary = meta.at("vocabulary").get<std::vector<std::string>>();
        ds.splits.stats = NormalizationStats::from_json(meta.at("stats"));
        const auto bounds = meta.at("bounds").get<std::vector<std::size_t>>();
        ds.splits.bounds = {bounds.at(0), bounds.at(1)};
        ds.summary = meta.at("summary");
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("dataset cache '" + path + "' has a malformed header: " + e.what());
    }
    auto series = std::make_shared<Series>();
    for (double t : contents.find("timestamps").values) series->timestamps.push_back(static_cast<std::int64_t>(t));
    const auto& features = contents.find("features");
    series->features = features.values;
    series->width = features.shape.size() == 2 ? features.shape[1] : 0;
    series->volume = contents.find("volume").values;
    if (series->width != ds.layout.width()) throw SchemaError("dataset cache '" + path + "' feature width mismatch");
    ds.splits.series = series;
    const auto target = ds.layout.target_column();
    const auto make = [&](const char* name, Split split) {
        return WindowedDataset(series, detail::to_sizes(contents.find(name).values), ds.config.window, ds.config.horizon,
                               target, split);
    };
    ds.splits.train = make("train_starts", Split::train);
    ds.splits.validation = make("validation_starts", Split::validation);
    ds.splits.test = make("test_starts", Split::test);
    return ds;
}

} // namespace mstim::data

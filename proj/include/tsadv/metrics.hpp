#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/series.hpp"
#include "tsadv/text.hpp"

namespace tsadv {

struct MetricPair {
    double mse = 0.0;
    double mae = 0.0;
};

struct AcfCurve {
    std::vector<std::size_t> lags;
    std::vector<double> values;
};

struct HistogramSummary {
    std::vector<double> bin_edges; // bins + 1 ascending edges
    std::vector<std::size_t> counts;
    double mean = 0.0;
    double std = 0.0;
};

namespace detail {

inline void check_pair(std::span<const double> pred, std::span<const double> truth) {
    require(pred.size() == truth.size(), ErrorCode::LengthMismatch,
            "prediction length " + std::to_string(pred.size()) + " differs from truth length " +
                std::to_string(truth.size()));
    require(!pred.empty(), ErrorCode::EmptyInput, "metric over empty sequences");
}

} // namespace detail

inline double mse(std::span<const double> pred, std::span<const double> truth) {
    detail::check_pair(pred, truth);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return acc / static_cast<double>(pred.size());
}

inline double mae(std::span<const double> pred, std::span<const double> truth) {
    detail::check_pair(pred, truth);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
    return acc / static_cast<double>(pred.size());
}

inline MetricPair evaluate(std::span<const double> pred, std::span<const double> truth) {
    return MetricPair{mse(pred, truth), mae(pred, truth)};
}

/// (attacked - clean) / clean; negative when the perturbation helped.
inline double normalized_mae_increase(double clean_mae, double attacked_mae) {
    detail::require(clean_mae > 0.0, ErrorCode::ZeroBaseline, "clean MAE must be positive");
    return (attacked_mae - clean_mae) / clean_mae;
}

/// Biased estimator r_k = sum_{t<n-k} (x_t - m)(x_{t+k} - m) / sum_t (x_t - m)^2.
inline AcfCurve acf(std::span<const double> series, std::size_t max_lag) {
    const std::size_t n = series.size();
    detail::require(n >= max_lag + 2, ErrorCode::TooShort,
                    "ACF up to lag " + std::to_string(max_lag) + " needs " + std::to_string(max_lag + 2) +
                        " points, got " + std::to_string(n));
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(n);
    double denom = 0.0;
    double scale = 0.0;
    for (double v : series) {
        denom += (v - mean) * (v - mean);
        scale = std::max(scale, std::abs(v));
    }
    // relative test: a constant series leaves only rounding residue in denom
    detail::require(denom > static_cast<double>(n) * 1e-24 * scale * scale && denom > 0.0, ErrorCode::ConstantSeries,
                    "ACF of a constant series is undefined");

    AcfCurve curve;
    curve.lags.resize(max_lag + 1);
    curve.values.resize(max_lag + 1);
    for (std::size_t k = 0; k <= max_lag; ++k) {
        double num = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) num += (series[t] - mean) * (series[t + k] - mean);
        curve.lags[k] = k;
        curve.values[k] = k == 0 ? 1.0 : std::clamp(num / denom, -1.0, 1.0);
    }
    return curve;
}

/// Equal-width bins over [min, max], last edge inclusive. A constant input
/// gets the unit-wide range [v - 0.5, v + 0.5].
inline HistogramSummary histogram(std::span<const double> values, std::size_t bins) {
    detail::require(!values.empty(), ErrorCode::EmptyInput, "histogram of an empty sequence");
    detail::require(bins >= 1, ErrorCode::InvalidArgument, "histogram needs at least one bin");
    const SeriesStats stats = series_stats(values);
    double lo = stats.min;
    double hi = stats.max;
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double width = (hi - lo) / static_cast<double>(bins);

    HistogramSummary h;
    h.mean = stats.mean;
    h.std = stats.std;
    h.bin_edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) h.bin_edges[b] = lo + width * static_cast<double>(b);
    h.bin_edges.back() = hi;
    h.counts.assign(bins, 0);
    for (double v : values) {
        auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
        h.counts[std::min(b, bins - 1)] += 1;
    }
    return h;
}

inline void write_csv(std::ostream& out, const AcfCurve& curve) {
    out << "lag,value\n";
    for (std::size_t i = 0; i < curve.values.size(); ++i) {
        out << curve.lags[i] << ',' << format_real(curve.values[i]) << '\n';
    }
}

/// One row per bin, keyed by its lower edge.
inline void write_csv(std::ostream& out, const HistogramSummary& h) {
    out << "edge,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b) out << format_real(h.bin_edges[b]) << ',' << h.counts[b] << '\n';
}

} // namespace tsadv

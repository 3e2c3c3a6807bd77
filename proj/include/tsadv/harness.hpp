#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsadv/attack.hpp"
#include "tsadv/error.hpp"
#include "tsadv/forecasters.hpp"
#include "tsadv/metrics.hpp"
#include "tsadv/random.hpp"
#include "tsadv/remote.hpp"
#include "tsadv/series.hpp"
#include "tsadv/text.hpp"

namespace tsadv {

// ---------------------------------------------------------------------------
// Plan description

/// Seeded long-period sinusoid plus AR(1) noise. Over a 96-step window the
/// sinusoid reads as a local trend, so the window mean lags the next values.
struct SyntheticSpec {
    std::size_t length = 40000;
    double mean = 20.0;
    double amplitude = 5.0;
    double period = 400.0;
    double ar_coefficient = 0.9;
    double noise_sd = 0.3;
    std::uint64_t seed = 7;
};

inline TimeSeries make_synthetic_series(const SyntheticSpec& spec, std::string name = "synthetic") {
    detail::require(spec.length >= 4, ErrorCode::InvalidArgument, "synthetic length must be >= 4");
    detail::require(spec.period > 0.0, ErrorCode::InvalidArgument, "synthetic period must be positive");
    detail::require(std::abs(spec.ar_coefficient) < 1.0, ErrorCode::InvalidArgument,
                    "synthetic AR coefficient must lie in (-1, 1)");
    auto rng = make_rng(spec.seed);
    std::normal_distribution<double> shock(0.0, spec.noise_sd);
    std::vector<double> values(spec.length);
    double noise = spec.noise_sd > 0.0 ? shock(rng) / std::sqrt(1.0 - spec.ar_coefficient * spec.ar_coefficient) : 0.0;
    for (std::size_t t = 0; t < spec.length; ++t) {
        if (t > 0) noise = spec.ar_coefficient * noise + (spec.noise_sd > 0.0 ? shock(rng) : 0.0);
        values[t] = spec.mean +
                    spec.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / spec.period) + noise;
    }
    return TimeSeries(std::move(values), std::move(name));
}

struct DatasetSpec {
    std::string name;
    std::optional<std::string> path;
    ColumnSelector column = std::string("OT");
    std::optional<SyntheticSpec> synthetic;
    SplitSpec split;
    std::size_t history = 96;
    std::size_t horizon = 48;
    std::size_t stride = 48;
};

/// Forecaster by kind: persistence, seasonal-naive:m, ar:p, exp-smoothing:alpha,
/// constant:value, remote[:url].
struct ForecasterSpec {
    std::string kind = "persistence";
    std::size_t order = 2;
    std::size_t season = 24;
    double alpha = 0.8;
    double value = 0.0;
    RemoteConfig remote;

    std::string label() const {
        if (kind == "ar") return "ar:" + std::to_string(order);
        if (kind == "seasonal-naive") return "seasonal-naive:" + std::to_string(season);
        if (kind == "exp-smoothing") return "exp-smoothing:" + format_real(alpha);
        if (kind == "constant") return "constant:" + format_real(value);
        if (kind == "remote") return "remote:" + remote.url;
        return kind;
    }

    static ForecasterSpec parse(std::string_view text) {
        ForecasterSpec spec;
        const auto colon = text.find(':');
        spec.kind = std::string(text.substr(0, colon));
        const std::string arg = colon == std::string_view::npos ? std::string() : std::string(text.substr(colon + 1));
        auto number = [&](std::string_view what) {
            auto v = detail::parse_real(arg);
            detail::require(v.has_value(), ErrorCode::InvalidArgument,
                            "model '" + std::string(text) + "' needs a numeric " + std::string(what));
            return *v;
        };
        auto count = [&](std::string_view what) {
            const double v = number(what);
            detail::require(v >= 1 && std::floor(v) == v, ErrorCode::InvalidArgument,
                            "model '" + std::string(text) + "' needs a positive integer " + std::string(what));
            return static_cast<std::size_t>(v);
        };
        if (spec.kind == "persistence") {
            detail::require(arg.empty(), ErrorCode::InvalidArgument, "persistence takes no argument");
        } else if (spec.kind == "seasonal-naive") {
            if (!arg.empty()) spec.season = count("season length");
        } else if (spec.kind == "ar") {
            if (!arg.empty()) spec.order = count("order");
        } else if (spec.kind == "exp-smoothing") {
            if (!arg.empty()) spec.alpha = number("alpha");
        } else if (spec.kind == "constant") {
            if (!arg.empty()) spec.value = number("value");
        } else if (spec.kind == "remote") {
            spec.remote = RemoteConfig::from_environment();
            if (!arg.empty()) spec.remote.url = arg;
            detail::require(!spec.remote.url.empty(), ErrorCode::InvalidArgument,
                            "remote model needs a URL (remote:<url> or TSADV_REMOTE_URL)");
        } else {
            detail::fail(ErrorCode::InvalidArgument, "unknown model kind '" + spec.kind + "'");
        }
        return spec;
    }
};

/// Builds the oracle. Only AR uses `train`; the attacker never sees it.
inline ForecasterHandle build_forecaster(const ForecasterSpec& spec, std::span<const double> train) {
    if (spec.kind == "persistence") return make_handle<PersistenceForecaster>();
    if (spec.kind == "seasonal-naive") return make_handle<SeasonalNaiveForecaster>(spec.season);
    if (spec.kind == "ar") return make_handle<ARForecaster>(fit_ar(train, spec.order));
    if (spec.kind == "exp-smoothing") return exp_smoothing_forecaster(spec.alpha);
    if (spec.kind == "constant") return make_handle<ConstantForecaster>(spec.value);
    if (spec.kind == "remote") return make_handle<RemoteForecaster>(spec.remote);
    detail::fail(ErrorCode::InvalidArgument, "unknown model kind '" + spec.kind + "'");
}

enum class Variant { Clean, Gwn, Dga };

inline std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::Clean: return "clean";
    case Variant::Gwn: return "gwn";
    case Variant::Dga: return "dga";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "clean") return Variant::Clean;
    if (s == "gwn") return Variant::Gwn;
    if (s == "dga") return Variant::Dga;
    detail::fail(ErrorCode::InvalidArgument, "unknown variant '" + std::string(s) + "'");
}

struct ExperimentPlan {
    std::vector<DatasetSpec> datasets;
    std::vector<ForecasterSpec> forecasters;
    std::vector<Variant> variants{Variant::Clean, Variant::Gwn, Variant::Dga};
    AttackConfig attack;
    std::uint64_t master_seed = 7;
    std::optional<std::size_t> max_windows;
    std::size_t acf_max_lag = 48;
    std::size_t hist_bins = 30;

    void validate() const {
        detail::require(!datasets.empty(), ErrorCode::InvalidPlan, "plan has no datasets");
        detail::require(!forecasters.empty(), ErrorCode::InvalidPlan, "plan has no forecasters");
        detail::require(!variants.empty(), ErrorCode::InvalidPlan, "plan has no variants");
        const bool attacked = std::ranges::find(variants, Variant::Gwn) != variants.end() ||
                              std::ranges::find(variants, Variant::Dga) != variants.end();
        detail::require(!attacked || std::ranges::find(variants, Variant::Clean) != variants.end(),
                        ErrorCode::InvalidPlan, "gwn/dga variants need the clean variant for comparison");
        std::set<std::string> names;
        for (const auto& d : datasets) {
            detail::require(!d.name.empty(), ErrorCode::InvalidPlan, "dataset without a name");
            detail::require(names.insert(d.name).second, ErrorCode::InvalidPlan, "duplicate dataset '" + d.name + "'");
            detail::require(d.path.has_value() != d.synthetic.has_value(), ErrorCode::InvalidPlan,
                            "dataset '" + d.name + "' needs exactly one of path or synthetic");
            detail::require(d.history >= 1 && d.horizon >= 1 && d.horizon <= d.history && d.stride >= 1,
                            ErrorCode::InvalidPlan, "dataset '" + d.name + "' has inconsistent history/horizon/stride");
        }
        detail::require(!max_windows || *max_windows >= 1, ErrorCode::InvalidPlan, "max_windows must be >= 1");
        detail::require(hist_bins >= 1, ErrorCode::InvalidPlan, "hist_bins must be >= 1");
        try {
            attack.validate();
        } catch (const Error& e) {
            detail::fail(ErrorCode::InvalidPlan, e.what());
        }
    }
};

inline nlohmann::ordered_json to_json(const ExperimentPlan& plan) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["master_seed"] = plan.master_seed;
    j["max_windows"] = plan.max_windows ? ordered_json(*plan.max_windows) : ordered_json(nullptr);
    j["variants"] = ordered_json::array();
    for (auto v : plan.variants) j["variants"].push_back(std::string(to_string(v)));
    ordered_json& datasets = j["datasets"] = ordered_json::array();
    for (const auto& d : plan.datasets) {
        ordered_json o;
        o["name"] = d.name;
        if (d.path) {
            o["path"] = *d.path;
            if (const auto* s = std::get_if<std::string>(&d.column)) o["column"] = *s;
            else o["column"] = std::get<std::size_t>(d.column);
        } else {
            const auto& s = *d.synthetic;
            o["synthetic"] = {{"length", s.length},     {"mean", s.mean},
                              {"amplitude", s.amplitude}, {"period", s.period},
                              {"ar_coefficient", s.ar_coefficient}, {"noise_sd", s.noise_sd},
                              {"seed", s.seed}};
        }
        o["split"] = {d.split.train_fraction, d.split.validation_fraction, d.split.test_fraction};
        o["history"] = d.history;
        o["horizon"] = d.horizon;
        o["stride"] = d.stride;
        datasets.push_back(std::move(o));
    }
    j["forecasters"] = ordered_json::array();
    for (const auto& f : plan.forecasters) j["forecasters"].push_back(f.label());
    ordered_json a;
    if (const auto* r = std::get_if<MeanRatioEpsilon>(&plan.attack.epsilon)) a["epsilon_ratio"] = r->ratio;
    else a["epsilon_abs"] = std::get<AbsoluteEpsilon>(plan.attack.epsilon).value;
    a["probe_scale"] = plan.attack.probe_scale;
    a["convention"] = std::string(to_string(plan.attack.convention));
    a["n_directions"] = plan.attack.n_directions;
    a["loss"] = std::string(to_string(plan.attack.loss));
    a["gwn_mode"] = std::string(to_string(plan.attack.gwn_mode));
    j["attack"] = std::move(a);
    j["acf_max_lag"] = plan.acf_max_lag;
    j["hist_bins"] = plan.hist_bins;
    j["metadata"] = {{"window_stride_default", "horizon"},
                     {"metric_units", "raw"},
                     {"epsilon_reference", "dataset mean"},
                     {"target_reference", "input window mean/std"}};
    return j;
}

/// Parses the plan file format written by to_json. Unknown keys are errors.
inline ExperimentPlan plan_from_json(const nlohmann::json& j) {
    ExperimentPlan plan;
    try {
        detail::require(j.is_object(), ErrorCode::InvalidPlan, "plan must be a JSON object");
        static const std::set<std::string> top{"master_seed", "max_windows", "variants", "datasets", "forecasters",
                                               "attack",      "acf_max_lag", "hist_bins", "metadata"};
        for (const auto& [key, _] : j.items()) {
            detail::require(top.contains(key), ErrorCode::InvalidPlan, "unknown plan key '" + key + "'");
        }
        if (j.contains("master_seed")) plan.master_seed = j.at("master_seed").get<std::uint64_t>();
        if (j.contains("max_windows") && !j.at("max_windows").is_null()) {
            plan.max_windows = j.at("max_windows").get<std::size_t>();
        }
        if (j.contains("variants")) {
            plan.variants.clear();
            for (const auto& v : j.at("variants")) plan.variants.push_back(parse_variant(v.get<std::string>()));
        }
        if (j.contains("acf_max_lag")) plan.acf_max_lag = j.at("acf_max_lag").get<std::size_t>();
        if (j.contains("hist_bins")) plan.hist_bins = j.at("hist_bins").get<std::size_t>();
        for (const auto& d : j.value("datasets", nlohmann::json::array())) {
            DatasetSpec ds;
            ds.name = d.at("name").get<std::string>();
            if (d.contains("path")) {
                ds.path = d.at("path").get<std::string>();
                if (d.contains("column")) {
                    const auto& c = d.at("column");
                    ds.column = c.is_number_unsigned() ? ColumnSelector(c.get<std::size_t>())
                                                       : ColumnSelector(c.get<std::string>());
                }
            }
            if (d.contains("synthetic")) {
                const auto& s = d.at("synthetic");
                SyntheticSpec syn;
                syn.length = s.value("length", syn.length);
                syn.mean = s.value("mean", syn.mean);
                syn.amplitude = s.value("amplitude", syn.amplitude);
                syn.period = s.value("period", syn.period);
                syn.ar_coefficient = s.value("ar_coefficient", syn.ar_coefficient);
                syn.noise_sd = s.value("noise_sd", syn.noise_sd);
                syn.seed = s.value("seed", syn.seed);
                ds.synthetic = syn;
            }
            if (d.contains("split")) {
                const auto f = d.at("split").get<std::vector<double>>();
                detail::require(f.size() == 3, ErrorCode::InvalidPlan, "split needs three fractions");
                ds.split = SplitSpec{f[0], f[1], f[2]};
                ds.split.validate();
            }
            ds.history = d.value("history", ds.history);
            ds.horizon = d.value("horizon", ds.horizon);
            ds.stride = d.value("stride", ds.horizon);
            plan.datasets.push_back(std::move(ds));
        }
        for (const auto& f : j.value("forecasters", nlohmann::json::array())) {
            plan.forecasters.push_back(ForecasterSpec::parse(f.get<std::string>()));
        }
        if (j.contains("attack")) {
            const auto& a = j.at("attack");
            if (a.contains("epsilon_abs")) plan.attack.epsilon = AbsoluteEpsilon{a.at("epsilon_abs").get<double>()};
            if (a.contains("epsilon_ratio")) plan.attack.epsilon = MeanRatioEpsilon{a.at("epsilon_ratio").get<double>()};
            plan.attack.probe_scale = a.value("probe_scale", plan.attack.probe_scale);
            if (a.contains("convention")) plan.attack.convention = parse_sign_convention(a.at("convention").get<std::string>());
            plan.attack.n_directions = a.value("n_directions", plan.attack.n_directions);
            if (a.contains("loss")) plan.attack.loss = parse_loss_kind(a.at("loss").get<std::string>());
            if (a.contains("gwn_mode")) plan.attack.gwn_mode = parse_gwn_mode(a.at("gwn_mode").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        detail::fail(ErrorCode::InvalidPlan, e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidPlan) throw;
        detail::fail(ErrorCode::InvalidPlan, e.what());
    }
    plan.validate();
    return plan;
}

inline ExperimentPlan load_plan(const std::filesystem::path& path) {
    std::ifstream in(path);
    detail::require(in.good(), ErrorCode::FileNotFound, "cannot open plan " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    detail::require(!j.is_discarded(), ErrorCode::InvalidPlan, path.string() + " is not valid JSON");
    return plan_from_json(j);
}

/// The bundled plan: synthetic dataset, AR(2) and exponential smoothing targets.
inline ExperimentPlan synthetic_plan() {
    ExperimentPlan plan;
    DatasetSpec ds;
    ds.name = "synthetic";
    ds.synthetic = SyntheticSpec{};
    plan.datasets.push_back(ds);
    plan.forecasters.push_back(ForecasterSpec::parse("ar:2"));
    plan.forecasters.push_back(ForecasterSpec::parse("exp-smoothing:0.8"));
    plan.max_windows = 100;
    return plan;
}

// ---------------------------------------------------------------------------
// Execution

struct ResolvedDataset {
    std::string name;
    TimeSeries series;
    SplitParts parts;
    SeriesStats dataset_stats;  // whole series; epsilon reference
    std::size_t test_offset = 0; // index of the first test point in `series`
    std::vector<std::size_t> origins; // window origins within the test part
    std::size_t history = 96;
    std::size_t horizon = 48;
};

/// Splits and windows an in-memory series using the dataset's split and window settings.
inline ResolvedDataset prepare_dataset(TimeSeries series, const DatasetSpec& spec) {
    SplitParts parts = chronological_split(series, spec.split);
    detail::require(parts.test.size() >= spec.history + spec.horizon, ErrorCode::NoWindows,
                    "test part of '" + spec.name + "' has " + std::to_string(parts.test.size()) +
                        " points, fewer than one window");
    auto origins = window_origins(parts.test.size(), spec.history, spec.horizon, spec.stride);
    const std::size_t offset = parts.train.size() + parts.validation.size();
    const SeriesStats stats = series_stats(series.values());
    return ResolvedDataset{spec.name, std::move(series), std::move(parts), stats, offset, std::move(origins),
                           spec.history, spec.horizon};
}

inline ResolvedDataset resolve_dataset(const DatasetSpec& spec) {
    TimeSeries series = spec.synthetic ? make_synthetic_series(*spec.synthetic, spec.name)
                                       : load_csv(*spec.path, spec.column);
    return prepare_dataset(std::move(series), spec);
}

struct RunRecord {
    std::string dataset;
    std::string forecaster;
    Variant variant = Variant::Clean;
    std::size_t origin_index = 0; // into the full series
    MetricPair metrics;
    std::uint64_t queries = 0; // attack queries only
    std::uint64_t seed = 0;
    double epsilon = 0.0;
    std::vector<double> prediction;
    std::optional<std::string> error;

    bool ok() const noexcept { return !error.has_value(); }
};

enum class WindowEvent { AttackFinalized, TruthRead };

struct RunOptions {
    std::size_t jobs = 1;
    std::optional<std::size_t> max_windows;
    /// Called from worker threads; the callee synchronizes.
    std::function<void(std::size_t origin_index, WindowEvent)> observer;
};

inline std::uint64_t window_seed(std::uint64_t master_seed, std::string_view dataset, Variant variant,
                                 std::size_t origin_index) {
    return derive_seed({master_seed, stable_hash(dataset), static_cast<std::uint64_t>(variant), origin_index});
}

namespace detail {

/// Runs body(i) for i in [0, n) on up to `jobs` threads.
template <typename Body>
void parallel_for(std::size_t n, std::size_t jobs, Body&& body) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    workers.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
        });
    }
}

} // namespace detail

/// One (dataset, forecaster, variant) cell over the test windows. Each window's
/// input is finalized before its truth slice is taken. Window failures are
/// recorded and do not stop the cell.
inline std::vector<RunRecord> run_cell(const ResolvedDataset& data, const ForecasterHandle& handle,
                                       const std::string& forecaster_label, Variant variant,
                                       const AttackConfig& config, std::uint64_t master_seed,
                                       const RunOptions& options = {}) {
    detail::require(!data.origins.empty(), ErrorCode::NoWindows, "dataset '" + data.name + "' has no test windows");
    if (variant != Variant::Clean) config.validate();
    std::size_t count = data.origins.size();
    if (options.max_windows) count = std::min(count, *options.max_windows);

    const auto test = data.parts.test.values();
    const std::size_t jobs = handle.max_concurrency() == 0 ? options.jobs : std::min(options.jobs, handle.max_concurrency());
    std::optional<double> epsilon;
    if (variant != Variant::Clean) epsilon = resolve_epsilon(config.epsilon, data.dataset_stats);

    std::vector<RunRecord> records(count);
    detail::parallel_for(count, jobs, [&](std::size_t w) {
        const std::size_t origin = data.origins[w];
        RunRecord& rec = records[w];
        rec.dataset = data.name;
        rec.forecaster = forecaster_label;
        rec.variant = variant;
        rec.origin_index = data.test_offset + origin;
        rec.seed = window_seed(master_seed, data.name, variant, rec.origin_index);
        rec.epsilon = epsilon.value_or(0.0);
        try {
            const auto history = test.subspan(origin, data.history);
            std::vector<double> input(history.begin(), history.end());
            if (variant == Variant::Gwn) {
                input = gwn_baseline(history, *epsilon, config.gwn_mode, rec.seed).perturbed_history;
            } else if (variant == Variant::Dga) {
                AttackConfig cfg = config;
                cfg.seed = rec.seed;
                const auto ex = dga_attack(handle, history, data.horizon, cfg, data.dataset_stats);
                rec.queries = ex.queries_used;
                input = ex.perturbed_history;
            }
            if (options.observer) options.observer(rec.origin_index, WindowEvent::AttackFinalized);

            rec.prediction = handle.predict(input, data.horizon);
            if (options.observer) options.observer(rec.origin_index, WindowEvent::TruthRead);
            const auto truth = test.subspan(origin + data.history, data.horizon);
            rec.metrics = evaluate(rec.prediction, truth);
        } catch (const std::exception& e) {
            rec.error = e.what();
            rec.prediction.clear();
        }
    });
    return records;
}

struct SignTestResult {
    std::size_t n_pos = 0; // dga worse than gwn
    std::size_t n_neg = 0;
    double p_value = 1.0;
};

/// Exact two-sided sign test under a fair coin; ties are dropped and at
/// least six untied pairs must remain.
inline SignTestResult paired_sign_test(std::span<const double> dga_maes, std::span<const double> gwn_maes) {
    detail::require(dga_maes.size() == gwn_maes.size(), ErrorCode::LengthMismatch, "sign test needs paired samples");
    SignTestResult r;
    for (std::size_t i = 0; i < dga_maes.size(); ++i) {
        if (dga_maes[i] > gwn_maes[i]) ++r.n_pos;
        else if (dga_maes[i] < gwn_maes[i]) ++r.n_neg;
    }
    const std::size_t n = r.n_pos + r.n_neg;
    detail::require(n >= 6, ErrorCode::TooFewPairs,
                    "sign test needs at least 6 untied pairs, got " + std::to_string(n));
    const std::size_t k = std::min(r.n_pos, r.n_neg);
    const double log_half_n = static_cast<double>(n) * std::log(0.5);
    double tail = 0.0;
    for (std::size_t i = 0; i <= k; ++i) {
        const double log_choose = std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(i) + 1.0) -
                                  std::lgamma(static_cast<double>(n - i) + 1.0);
        tail += std::exp(log_choose + log_half_n);
    }
    r.p_value = std::min(1.0, 2.0 * tail);
    return r;
}

struct TableRow {
    std::string dataset;
    std::string forecaster;
    Variant variant = Variant::Clean;
    double mse = 0.0;
    double mae = 0.0;
    std::size_t windows = 0;
    std::size_t failures = 0;
    double norm_mae_increase = 0.0; // vs the clean row of the same group
};

struct SignTestRow {
    std::string dataset;
    std::string forecaster;
    std::optional<SignTestResult> result; // empty when too few untied pairs
};

struct ResultTable {
    std::vector<TableRow> rows;
    std::vector<SignTestRow> sign_tests;
};

struct MatrixResult {
    ResultTable table;
    std::vector<RunRecord> records; // dataset, forecaster, variant, origin order
};

namespace detail {

inline TableRow aggregate_cell(const std::vector<RunRecord>& cell) {
    TableRow row;
    row.dataset = cell.front().dataset;
    row.forecaster = cell.front().forecaster;
    row.variant = cell.front().variant;
    for (const auto& r : cell) {
        if (!r.ok()) {
            ++row.failures;
            continue;
        }
        row.mse += r.metrics.mse;
        row.mae += r.metrics.mae;
        ++row.windows;
    }
    if (row.windows > 0) {
        row.mse /= static_cast<double>(row.windows);
        row.mae /= static_cast<double>(row.windows);
    } else {
        row.mse = row.mae = std::numeric_limits<double>::quiet_NaN();
    }
    return row;
}

/// Per-window MAEs of two cells over the origins where both succeeded.
inline std::pair<std::vector<double>, std::vector<double>> paired_maes(const std::vector<RunRecord>& a,
                                                                       const std::vector<RunRecord>& b) {
    std::map<std::size_t, double> by_origin;
    for (const auto& r : b) {
        if (r.ok()) by_origin[r.origin_index] = r.metrics.mae;
    }
    std::pair<std::vector<double>, std::vector<double>> out;
    for (const auto& r : a) {
        if (!r.ok()) continue;
        if (auto it = by_origin.find(r.origin_index); it != by_origin.end()) {
            out.first.push_back(r.metrics.mae);
            out.second.push_back(it->second);
        }
    }
    return out;
}

inline double relative_increase(double clean, double attacked) {
    if (!(clean > 0.0) || !std::isfinite(attacked)) return std::numeric_limits<double>::quiet_NaN();
    return normalized_mae_increase(clean, attacked);
}

} // namespace detail

/// Runs every (dataset, forecaster, variant) cell and aggregates by arithmetic
/// mean over successful windows. Row order: dataset, forecaster, then clean, gwn, dga.
inline MatrixResult run_matrix(const ExperimentPlan& plan, RunOptions options = {}) {
    plan.validate();
    if (!options.max_windows) options.max_windows = plan.max_windows;
    std::vector<Variant> variants;
    for (Variant v : {Variant::Clean, Variant::Gwn, Variant::Dga}) {
        if (std::ranges::find(plan.variants, v) != plan.variants.end()) variants.push_back(v);
    }

    MatrixResult result;
    for (const auto& dspec : plan.datasets) {
        const ResolvedDataset data = resolve_dataset(dspec);
        for (const auto& fspec : plan.forecasters) {
            const ForecasterHandle handle = build_forecaster(fspec, data.parts.train.values());
            const std::string label = fspec.label();
            std::map<Variant, std::vector<RunRecord>> cells;
            for (Variant v : variants) {
                cells[v] = run_cell(data, handle.child(), label, v, plan.attack, plan.master_seed, options);
            }
            std::optional<double> clean_mae;
            for (Variant v : variants) {
                TableRow row = detail::aggregate_cell(cells[v]);
                if (v == Variant::Clean) clean_mae = row.mae;
                row.norm_mae_increase = detail::relative_increase(*clean_mae, row.mae);
                result.table.rows.push_back(row);
            }
            if (cells.contains(Variant::Dga) && cells.contains(Variant::Gwn)) {
                SignTestRow st{data.name, label, std::nullopt};
                auto [dga, gwn] = detail::paired_maes(cells[Variant::Dga], cells[Variant::Gwn]);
                try {
                    st.result = paired_sign_test(dga, gwn);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::TooFewPairs) throw;
                }
                result.table.sign_tests.push_back(std::move(st));
            }
            for (Variant v : variants) {
                for (auto& r : cells[v]) result.records.push_back(std::move(r));
            }
        }
    }
    return result;
}

struct SweepRow {
    double ratio = 0.0;
    std::string dataset;
    std::string forecaster;
    Variant variant = Variant::Gwn;
    double mae = 0.0;
    std::size_t windows = 0;
    double norm_mae_increase = 0.0;
};

/// GWN and DGA at each MeanRatio(r), reported as normalized MAE increase over
/// the clean run. Each ratio gets its own seed stream.
inline std::vector<SweepRow> sweep_epsilon(const ExperimentPlan& plan, std::span<const double> ratios,
                                           RunOptions options = {}) {
    plan.validate();
    detail::require(!ratios.empty(), ErrorCode::InvalidRatio, "no ratios given");
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        detail::require(ratios[i] > 0.0 && std::isfinite(ratios[i]), ErrorCode::InvalidRatio,
                        "ratio " + format_real(ratios[i]) + " is not positive");
        detail::require(i == 0 || ratios[i] > ratios[i - 1], ErrorCode::InvalidRatio, "ratios must be ascending");
    }
    if (!options.max_windows) options.max_windows = plan.max_windows;

    std::vector<SweepRow> rows;
    for (const auto& dspec : plan.datasets) {
        const ResolvedDataset data = resolve_dataset(dspec);
        for (const auto& fspec : plan.forecasters) {
            const ForecasterHandle handle = build_forecaster(fspec, data.parts.train.values());
            const std::string label = fspec.label();
            const TableRow clean = detail::aggregate_cell(
                run_cell(data, handle.child(), label, Variant::Clean, plan.attack, plan.master_seed, options));
            for (std::size_t i = 0; i < ratios.size(); ++i) {
                AttackConfig cfg = plan.attack;
                cfg.epsilon = MeanRatioEpsilon{ratios[i]};
                const std::uint64_t seed = derive_seed({plan.master_seed, 0x5eedULL, i});
                for (Variant v : {Variant::Gwn, Variant::Dga}) {
                    const TableRow row =
                        detail::aggregate_cell(run_cell(data, handle.child(), label, v, cfg, seed, options));
                    rows.push_back(SweepRow{ratios[i], data.name, label, v, row.mae, row.windows,
                                            detail::relative_increase(clean.mae, row.mae)});
                }
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Export

inline void write_table_csv(std::ostream& out, const ResultTable& table) {
    out << "dataset,forecaster,variant,mse,mae,windows,norm_mae_increase\n";
    for (const auto& r : table.rows) {
        out << r.dataset << ',' << r.forecaster << ',' << to_string(r.variant) << ',' << format_real(r.mse) << ','
            << format_real(r.mae) << ',' << r.windows << ',' << format_real(r.norm_mae_increase) << '\n';
    }
}

inline void write_sign_test_csv(std::ostream& out, const ResultTable& table) {
    out << "dataset,forecaster,n_dga_worse,n_gwn_worse,p_value\n";
    for (const auto& s : table.sign_tests) {
        out << s.dataset << ',' << s.forecaster << ',';
        if (s.result) out << s.result->n_pos << ',' << s.result->n_neg << ',' << format_real(s.result->p_value) << '\n';
        else out << ",,\n";
    }
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "ratio,dataset,forecaster,variant,mae,windows,norm_mae_increase\n";
    for (const auto& r : rows) {
        out << format_real(r.ratio) << ',' << r.dataset << ',' << r.forecaster << ',' << to_string(r.variant) << ','
            << format_real(r.mae) << ',' << r.windows << ',' << format_real(r.norm_mae_increase) << '\n';
    }
}

inline nlohmann::ordered_json to_json(const RunRecord& r) {
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["forecaster"] = r.forecaster;
    j["variant"] = std::string(to_string(r.variant));
    j["origin"] = r.origin_index;
    j["seed"] = r.seed;
    j["epsilon"] = r.epsilon;
    j["queries"] = r.queries;
    if (r.ok()) {
        j["mse"] = r.metrics.mse;
        j["mae"] = r.metrics.mae;
        j["prediction"] = r.prediction;
    } else {
        j["error"] = *r.error;
    }
    return j;
}

enum class ExportKind { Acf, Histogram, Table, Radar };

struct ExportOptions {
    std::size_t acf_max_lag = 48;
    std::size_t hist_bins = 30;
};

namespace detail {

inline std::string file_label(std::string_view text) {
    std::string out;
    for (char c : text) {
        const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                          c == '-' || c == '_';
        out.push_back(keep ? c : '_');
    }
    return out;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot write " + path.string());
    return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    require(out.good(), ErrorCode::IoError, "write to " + path.string() + " failed");
}

} // namespace detail

/// Writes the requested analyses under `dir`: acf/*.csv and hist/*.csv from the
/// origin-ordered concatenation of each cell's predictions, table.csv plus
/// sign_test.csv, and radar.csv with per-group normalized MAE increases.
/// Returns the names of ACF curves skipped because the predictions were constant
/// or too short.
inline std::vector<std::string> export_analysis(const MatrixResult& result, const std::set<ExportKind>& which,
                                                const std::filesystem::path& dir, const ExportOptions& options = {}) {
    detail::require(!result.records.empty(), ErrorCode::EmptyInput, "no records to export");
    std::vector<std::string> skipped;

    std::map<std::tuple<std::string, std::string, int>, std::vector<const RunRecord*>> cells;
    std::vector<std::tuple<std::string, std::string, int>> order;
    for (const auto& r : result.records) {
        auto key = std::make_tuple(r.dataset, r.forecaster, static_cast<int>(r.variant));
        if (!cells.contains(key)) order.push_back(key);
        cells[key].push_back(&r);
    }
    auto concatenated = [&](const auto& key) {
        auto recs = cells.at(key);
        std::ranges::stable_sort(recs, {}, &RunRecord::origin_index);
        std::vector<double> joined;
        for (const auto* r : recs) {
            if (r->ok()) joined.insert(joined.end(), r->prediction.begin(), r->prediction.end());
        }
        return joined;
    };
    auto stem = [](const auto& key) {
        return detail::file_label(std::get<0>(key)) + "__" + detail::file_label(std::get<1>(key)) + "__" +
               std::string(to_string(static_cast<Variant>(std::get<2>(key))));
    };

    if (which.contains(ExportKind::Acf)) {
        for (const auto& key : order) {
            const auto joined = concatenated(key);
            try {
                const auto curve = acf(joined, options.acf_max_lag);
                const auto path = dir / "acf" / (stem(key) + ".csv");
                auto out = detail::open_output(path);
                write_csv(out, curve);
                detail::finish(out, path);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::ConstantSeries && e.code() != ErrorCode::TooShort) throw;
                skipped.push_back(stem(key));
            }
        }
    }
    if (which.contains(ExportKind::Histogram)) {
        for (const auto& key : order) {
            const auto joined = concatenated(key);
            if (joined.empty()) continue;
            const auto path = dir / "hist" / (stem(key) + ".csv");
            auto out = detail::open_output(path);
            write_csv(out, histogram(joined, options.hist_bins));
            detail::finish(out, path);
        }
    }
    if (which.contains(ExportKind::Table)) {
        auto path = dir / "table.csv";
        auto out = detail::open_output(path);
        write_table_csv(out, result.table);
        detail::finish(out, path);
        path = dir / "sign_test.csv";
        auto st = detail::open_output(path);
        write_sign_test_csv(st, result.table);
        detail::finish(st, path);
    }
    if (which.contains(ExportKind::Radar)) {
        const auto path = dir / "radar.csv";
        auto out = detail::open_output(path);
        out << "dataset,forecaster,gwn_norm_mae_increase,dga_norm_mae_increase\n";
        std::map<std::pair<std::string, std::string>, std::pair<double, double>> groups;
        std::vector<std::pair<std::string, std::string>> group_order;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (const auto& row : result.table.rows) {
            auto key = std::make_pair(row.dataset, row.forecaster);
            if (!groups.contains(key)) {
                groups[key] = {nan, nan};
                group_order.push_back(key);
            }
            if (row.variant == Variant::Gwn) groups[key].first = row.norm_mae_increase;
            if (row.variant == Variant::Dga) groups[key].second = row.norm_mae_increase;
        }
        for (const auto& key : group_order) {
            out << key.first << ',' << key.second << ',' << format_real(groups[key].first) << ','
                << format_real(groups[key].second) << '\n';
        }
        detail::finish(out, path);
    }
    return skipped;
}

/// Full run directory: plan.json, records.jsonl, table.csv, sign_test.csv,
/// radar.csv, acf/*.csv, hist/*.csv.
inline std::vector<std::string> write_run_directory(const std::filesystem::path& dir, const ExperimentPlan& plan,
                                                    const MatrixResult& result) {
    auto path = dir / "plan.json";
    auto plan_out = detail::open_output(path);
    plan_out << to_json(plan).dump(2) << '\n';
    detail::finish(plan_out, path);

    path = dir / "records.jsonl";
    auto rec_out = detail::open_output(path);
    for (const auto& r : result.records) rec_out << to_json(r).dump() << '\n';
    detail::finish(rec_out, path);

    return export_analysis(result, {ExportKind::Acf, ExportKind::Histogram, ExportKind::Table, ExportKind::Radar}, dir,
                           ExportOptions{plan.acf_max_lag, plan.hist_bins});
}

} // namespace tsadv

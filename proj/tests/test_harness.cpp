#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "tsadv/harness.hpp"

using namespace tsadv;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected tsadv::Error");
    return ErrorCode::InvalidArgument;
}

DatasetSpec synthetic_spec(std::size_t length = 12000) {
    DatasetSpec ds;
    ds.name = "synthetic";
    ds.synthetic = SyntheticSpec{};
    ds.synthetic->length = length;
    return ds;
}

double mean_mae(const std::vector<RunRecord>& records) {
    double acc = 0.0;
    for (const auto& r : records) acc += r.metrics.mae;
    return acc / static_cast<double>(records.size());
}

ExperimentPlan small_plan() {
    ExperimentPlan plan;
    plan.datasets.push_back(synthetic_spec());
    plan.forecasters.push_back(ForecasterSpec::parse("ar:2"));
    plan.max_windows = 20;
    return plan;
}

/// Fails whenever the last history value exceeds a threshold.
struct Flaky final : Forecaster {
    double threshold;
    explicit Flaky(double t) : threshold(t) {}
    std::vector<double> forecast(std::span<const double> h, std::size_t horizon) const override {
        if (h.back() > threshold) throw Error(ErrorCode::OracleFailure, "flaky");
        return std::vector<double>(horizon, h.back());
    }
    std::string descriptor() const override { return "flaky"; }
};

} // namespace

TEST_CASE("synthetic series is seeded and finite", "[harness][synthetic]") {
    const SyntheticSpec spec;
    const auto a = make_synthetic_series(spec);
    const auto b = make_synthetic_series(spec);
    CHECK(a.size() == spec.length);
    CHECK(std::ranges::equal(a.values(), b.values()));
    const auto st = series_stats(a.values());
    CHECK(std::abs(st.mean - spec.mean) < 0.5);
    SyntheticSpec other = spec;
    other.seed = 8;
    CHECK(!std::ranges::equal(make_synthetic_series(other).values(), a.values()));
}

TEST_CASE("run_cell clean equals direct evaluation", "[harness][cell]") {
    const auto data = resolve_dataset(synthetic_spec());
    const auto handle = make_handle<PersistenceForecaster>();
    const auto records = run_cell(data, handle, "persistence", Variant::Clean, AttackConfig{}, 1);
    REQUIRE(records.size() == data.origins.size());
    const auto windows = make_windows(data.parts.test, 96, 48, 48);
    REQUIRE(windows.size() == records.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const std::vector<double> pred(48, windows[i].history.back());
        CHECK(records[i].metrics.mse == mse(pred, windows[i].truth));
        CHECK(records[i].metrics.mae == mae(pred, windows[i].truth));
        CHECK(records[i].origin_index == data.test_offset + windows[i].origin_index);
        CHECK(records[i].queries == 0);
    }
}

TEST_CASE("dga against a constant forecaster matches clean", "[harness][cell]") {
    const auto data = resolve_dataset(synthetic_spec());
    const auto handle = make_handle<ConstantForecaster>(19.0);
    const auto clean = run_cell(data, handle, "constant", Variant::Clean, AttackConfig{}, 3);
    const auto dga = run_cell(data, handle, "constant", Variant::Dga, AttackConfig{}, 3);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        CHECK(dga[i].metrics.mae == clean[i].metrics.mae);
        CHECK(dga[i].metrics.mse == clean[i].metrics.mse);
        CHECK(dga[i].queries == 2);
    }
}

TEST_CASE("AR(2) on the synthetic sinusoid: dga > gwn > clean", "[harness][cell]") {
    DatasetSpec ds = synthetic_spec(40000);
    const auto data = resolve_dataset(ds);
    const auto handle = build_forecaster(ForecasterSpec::parse("ar:2"), data.parts.train.values());
    RunOptions opts;
    opts.max_windows = 50;
    const AttackConfig cfg; // 2% of dataset mean
    const double clean = mean_mae(run_cell(data, handle, "ar:2", Variant::Clean, cfg, 7, opts));
    const double gwn = mean_mae(run_cell(data, handle, "ar:2", Variant::Gwn, cfg, 7, opts));
    const double dga = mean_mae(run_cell(data, handle, "ar:2", Variant::Dga, cfg, 7, opts));
    CHECK(dga > gwn);
    CHECK(gwn > clean);
}

TEST_CASE("query accounting per cell", "[harness][cell]") {
    const auto data = resolve_dataset(synthetic_spec());
    for (std::size_t k : {1u, 3u}) {
        AttackConfig cfg;
        cfg.n_directions = k;
        for (Variant v : {Variant::Clean, Variant::Gwn, Variant::Dga}) {
            const auto handle = make_handle<PersistenceForecaster>();
            const auto records = run_cell(data, handle, "persistence", v, cfg, 5);
            const std::uint64_t per_window = 1 + (v == Variant::Dga ? k + 1 : 0);
            CHECK(handle.queries() == records.size() * per_window);
            for (const auto& r : records) CHECK(r.queries == (v == Variant::Dga ? k + 1 : 0));
        }
    }
}

TEST_CASE("truth is read only after the attack is finalized", "[harness][cell]") {
    const auto data = resolve_dataset(synthetic_spec());
    std::mutex mu;
    std::map<std::size_t, std::vector<WindowEvent>> events;
    RunOptions opts;
    opts.jobs = 4;
    opts.observer = [&](std::size_t origin, WindowEvent e) {
        std::lock_guard lock(mu);
        events[origin].push_back(e);
    };
    const auto handle = exp_smoothing_forecaster(0.5);
    const auto records = run_cell(data, handle, "es", Variant::Dga, AttackConfig{}, 1, opts);
    REQUIRE(events.size() == records.size());
    for (const auto& [origin, seq] : events) {
        REQUIRE(seq == std::vector<WindowEvent>{WindowEvent::AttackFinalized, WindowEvent::TruthRead});
    }
}

TEST_CASE("clean rows do not depend on the attack config", "[harness][cell]") {
    const auto data = resolve_dataset(synthetic_spec());
    const auto handle = exp_smoothing_forecaster(0.8);
    AttackConfig a;
    AttackConfig b;
    b.epsilon = MeanRatioEpsilon{0.1};
    b.probe_scale = 0.5;
    b.n_directions = 4;
    const auto ra = run_cell(data, handle, "es", Variant::Clean, a, 1);
    const auto rb = run_cell(data, handle, "es", Variant::Clean, b, 1);
    for (std::size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].prediction == rb[i].prediction);
}

TEST_CASE("oracle failures are per window", "[harness][cell]") {
    const auto data = resolve_dataset(synthetic_spec());
    const auto handle = make_handle<Flaky>(20.0);
    const auto records = run_cell(data, handle, "flaky", Variant::Clean, AttackConfig{}, 1);
    std::size_t failed = 0;
    for (const auto& r : records) failed += r.ok() ? 0 : 1;
    CHECK(failed > 0);
    CHECK(failed < records.size());
    const auto row = detail::aggregate_cell(records);
    CHECK(row.failures == failed);
    CHECK(row.windows == records.size() - failed);
}

TEST_CASE("datasets without a full test window", "[harness]") {
    DatasetSpec ds = synthetic_spec(400);
    CHECK(code_of([&] { resolve_dataset(ds); }) == ErrorCode::NoWindows);
}

TEST_CASE("paired_sign_test", "[harness][signtest]") {
    const std::vector<double> hi(10, 2.0);
    const std::vector<double> lo(10, 1.0);
    const auto all = paired_sign_test(hi, lo);
    CHECK(all.n_pos == 10);
    CHECK(all.n_neg == 0);
    CHECK(std::abs(all.p_value - 2.0 / 1024.0) <= 1e-12);

    const std::vector<double> a{1, 2, 3, 4, 5, 6};
    const std::vector<double> b{2, 3, 4, 3, 4, 5};
    const auto even = paired_sign_test(a, b);
    CHECK(even.n_pos == 3);
    CHECK(even.n_neg == 3);
    CHECK(even.p_value == Catch::Approx(1.0).epsilon(1e-12));

    CHECK(code_of([] { paired_sign_test(std::vector<double>(8, 1.0), std::vector<double>(8, 1.0)); }) ==
          ErrorCode::TooFewPairs);

    for (std::size_t n = 6; n <= 40; n += 3) {
        for (std::size_t pos = 0; pos <= n; pos += 2) {
            std::vector<double> d(n, 0.0);
            std::vector<double> g(n, 0.5);
            for (std::size_t i = 0; i < pos; ++i) d[i] = 1.0;
            const auto r = paired_sign_test(d, g);
            REQUIRE(std::abs(r.p_value - oracle::sign_test_p(pos, n - pos)) <= 1e-12);
        }
    }
}

TEST_CASE("run_matrix shape, order and determinism", "[harness][matrix]") {
    const auto plan = small_plan();
    const auto a = run_matrix(plan);
    REQUIRE(a.table.rows.size() == 3);
    CHECK(a.table.rows[0].variant == Variant::Clean);
    CHECK(a.table.rows[1].variant == Variant::Gwn);
    CHECK(a.table.rows[2].variant == Variant::Dga);
    CHECK(a.table.rows[0].norm_mae_increase == 0.0);
    CHECK(a.records.size() == 60);

    std::ostringstream ta;
    std::ostringstream tb;
    write_table_csv(ta, a.table);
    RunOptions parallel;
    parallel.jobs = 4;
    write_table_csv(tb, run_matrix(plan, parallel).table);
    CHECK(ta.str() == tb.str());

    // Aggregates are the arithmetic means of the per-window records.
    for (const auto& row : a.table.rows) {
        std::vector<double> maes;
        for (const auto& r : a.records) {
            if (r.variant == row.variant) maes.push_back(r.metrics.mae);
        }
        CHECK(std::abs(row.mae - static_cast<double>(oracle::mean(maes))) <= 1e-12 * row.mae);
        CHECK(row.windows == maes.size());
    }
    REQUIRE(a.table.sign_tests.size() == 1);
    CHECK(a.table.sign_tests[0].result.has_value());
}

TEST_CASE("multi-dataset, multi-forecaster ordering", "[harness][matrix]") {
    auto plan = small_plan();
    DatasetSpec second = synthetic_spec();
    second.name = "another";
    second.synthetic->seed = 99;
    plan.datasets.push_back(second);
    plan.forecasters.push_back(ForecasterSpec::parse("persistence"));
    plan.max_windows = 5;
    const auto res = run_matrix(plan);
    REQUIRE(res.table.rows.size() == 12);
    CHECK(res.table.rows[0].dataset == "synthetic");
    CHECK(res.table.rows[0].forecaster == "ar:2");
    CHECK(res.table.rows[3].forecaster == "persistence");
    CHECK(res.table.rows[6].dataset == "another");
}

TEST_CASE("plan validation and JSON round trip", "[harness][plan]") {
    auto plan = small_plan();
    plan.attack.n_directions = 3;
    plan.attack.convention = SignConvention::PaperPlus;
    plan.attack.gwn_mode = GwnMode::SignMatched;
    const auto j = to_json(plan);
    const auto back = plan_from_json(nlohmann::json::parse(j.dump()));
    CHECK(to_json(back).dump() == j.dump());

    auto bad = nlohmann::json::parse(j.dump());
    bad["surprise"] = 1;
    CHECK(code_of([&] { plan_from_json(bad); }) == ErrorCode::InvalidPlan);

    auto no_clean = small_plan();
    no_clean.variants = {Variant::Dga};
    CHECK(code_of([&] { no_clean.validate(); }) == ErrorCode::InvalidPlan);

    auto no_data = small_plan();
    no_data.datasets.clear();
    CHECK(code_of([&] { run_matrix(no_data); }) == ErrorCode::InvalidPlan);

    CHECK(code_of([] { ForecasterSpec::parse("arima:1"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { ForecasterSpec::parse("ar:x"); }) == ErrorCode::InvalidArgument);
    CHECK(ForecasterSpec::parse("exp-smoothing:0.25").label() == "exp-smoothing:0.25");
}

TEST_CASE("sweep_epsilon", "[harness][sweep]") {
    auto plan = small_plan();
    plan.max_windows = 10;
    const std::vector<double> ratios{0.005, 0.01, 0.02, 0.04};
    const auto rows = sweep_epsilon(plan, ratios);
    REQUIRE(rows.size() == 8);
    CHECK(rows[0].ratio == 0.005);
    CHECK(rows[0].variant == Variant::Gwn);
    CHECK(rows[1].variant == Variant::Dga);

    const std::vector<double> zero{0.0, 0.01};
    CHECK(code_of([&] { sweep_epsilon(plan, zero); }) == ErrorCode::InvalidRatio);
    const std::vector<double> unordered{0.02, 0.01};
    CHECK(code_of([&] { sweep_epsilon(plan, unordered); }) == ErrorCode::InvalidRatio);

    std::ostringstream out;
    write_sweep_csv(out, rows);
    const auto text = out.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 9);
}

TEST_CASE("export_analysis", "[harness][export]") {
    auto plan = small_plan();
    plan.acf_max_lag = 30;
    const auto res = run_matrix(plan);
    test::TempDir dir;
    const auto skipped = export_analysis(
        res, {ExportKind::Acf, ExportKind::Histogram, ExportKind::Table, ExportKind::Radar}, dir.path(),
        ExportOptions{plan.acf_max_lag, 16});
    CHECK(skipped.empty());

    const auto table = test::read_file(dir / "table.csv");
    CHECK(table.rfind("dataset,forecaster,variant,mse,mae,windows,norm_mae_increase\n", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 4);

    const auto acf_text = test::read_file(dir.path() / "acf" / "synthetic__ar_2__dga.csv");
    CHECK(std::count(acf_text.begin(), acf_text.end(), '\n') == 1 + 31);

    const auto hist_text = test::read_file(dir.path() / "hist" / "synthetic__ar_2__clean.csv");
    std::istringstream lines(hist_text);
    std::string line;
    std::getline(lines, line);
    std::size_t total = 0;
    while (std::getline(lines, line)) total += std::stoul(line.substr(line.find(',') + 1));
    CHECK(total == 20 * 48);

    const auto radar = test::read_file(dir / "radar.csv");
    CHECK(radar.rfind("dataset,forecaster,gwn_norm_mae_increase,dga_norm_mae_increase\nsynthetic,ar:2,", 0) == 0);

    CHECK(code_of([&] { export_analysis(MatrixResult{}, {ExportKind::Table}, dir.path()); }) == ErrorCode::EmptyInput);
}

TEST_CASE("write_run_directory is reproducible", "[harness][export]") {
    auto plan = small_plan();
    test::TempDir a;
    test::TempDir b;
    write_run_directory(a.path(), plan, run_matrix(plan));
    RunOptions parallel;
    parallel.jobs = 3;
    write_run_directory(b.path(), plan, run_matrix(plan, parallel));
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), a.path());
        REQUIRE(test::read_file(entry.path()) == test::read_file(b.path() / rel));
    }
    const auto records = test::read_file(a / "records.jsonl");
    CHECK(std::count(records.begin(), records.end(), '\n') == 60);
}

// tsadv: command-line front end for attacks, evaluation runs, epsilon sweeps
// and remote endpoint checks.
//
// Exit codes: 0 ok, 1 usage, 2 runtime failure, 3 remote failure.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "tsadv/tsadv.hpp"

namespace {

using namespace tsadv;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;
constexpr int kRemote = 3;

/// Bad flag values detected after CLI11 has accepted the command line.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

template <typename Fn>
auto as_usage(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

bool uses_remote(const ExperimentPlan& plan) {
    return std::ranges::any_of(plan.forecasters, [](const ForecasterSpec& f) { return f.kind == "remote"; });
}

std::vector<double> parse_ratio_list(const std::string& text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = std::min(text.find(',', start), text.size());
        const std::string item = text.substr(start, comma - start);
        const auto v = detail::parse_real(item);
        if (!v) throw UsageError("malformed ratio '" + item + "' in --ratios");
        out.push_back(*v);
        start = comma + 1;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(out[i] > 0.0)) throw UsageError("ratio " + format_real(out[i]) + " must be positive");
        if (i > 0 && out[i] <= out[i - 1]) throw UsageError("--ratios must be strictly ascending");
    }
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    detail::require(out.good(), ErrorCode::IoError, "cannot write " + path.string());
    out << text;
    out.flush();
    detail::require(out.good(), ErrorCode::IoError, "write to " + path.string() + " failed");
}

// ---------------------------------------------------------------------------
// Plan assembly shared by evaluate and sweep

struct PlanFlags {
    std::string plan_path;
    std::string data;
    std::string column;
    std::vector<std::string> models;
    std::optional<double> epsilon_ratio;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> max_windows;
    std::string convention;
    std::string gwn_mode;
    std::optional<std::size_t> directions;
    std::optional<std::size_t> history;
    std::optional<std::size_t> horizon;
    std::optional<std::size_t> stride;

    void attach(CLI::App& cmd) {
        cmd.add_option("--plan", plan_path, "Plan file (JSON); without it the bundled synthetic plan is the base")
            ->check(CLI::ExistingFile);
        cmd.add_option("--data", data, "CSV file replacing the plan's datasets");
        cmd.add_option("--column", column, "Column name or zero-based index for --data (default OT)");
        cmd.add_option("--model", models, "Forecaster, repeatable; replaces the plan's forecasters")
            ->take_all()
            ->allow_extra_args(false);
        cmd.add_option("--epsilon-ratio", epsilon_ratio, "Budget as a fraction of the dataset mean");
        cmd.add_option("--seed", seed, "Master seed");
        cmd.add_option("--max-windows", max_windows, "Cap on test windows per cell");
        cmd.add_option("--convention", convention, "descent or paper-plus");
        cmd.add_option("--gwn-mode", gwn_mode, "clipped-gaussian or sign-matched");
        cmd.add_option("--directions", directions, "Probe directions per attack");
        cmd.add_option("--history", history, "Input window length");
        cmd.add_option("--horizon", horizon, "Forecast horizon");
        cmd.add_option("--stride", stride, "Window stride (defaults to the horizon)");
    }

    /// Flags override values from the plan file.
    ExperimentPlan resolve() const {
        return as_usage([&] {
            ExperimentPlan plan = plan_path.empty() ? synthetic_plan() : load_plan(plan_path);
            if (!data.empty()) {
                DatasetSpec ds;
                ds.name = std::filesystem::path(data).stem().string();
                ds.path = data;
                if (!column.empty()) ds.column = parse_column_selector(column);
                plan.datasets = {ds};
            } else if (!column.empty()) {
                throw UsageError("--column needs --data");
            }
            if (!models.empty()) {
                plan.forecasters.clear();
                for (const auto& m : models) plan.forecasters.push_back(ForecasterSpec::parse(m));
            }
            if (epsilon_ratio) plan.attack.epsilon = MeanRatioEpsilon{*epsilon_ratio};
            if (seed) plan.master_seed = *seed;
            if (max_windows) plan.max_windows = *max_windows;
            if (!convention.empty()) plan.attack.convention = parse_sign_convention(convention);
            if (!gwn_mode.empty()) plan.attack.gwn_mode = parse_gwn_mode(gwn_mode);
            if (directions) plan.attack.n_directions = *directions;
            for (auto& ds : plan.datasets) {
                if (history) ds.history = *history;
                if (horizon) ds.horizon = *horizon;
                if (stride) ds.stride = *stride;
                else if (horizon) ds.stride = *horizon;
            }
            plan.validate();
            return plan;
        });
    }
};

// ---------------------------------------------------------------------------
// attack

struct AttackFlags {
    std::string data;
    std::string column = "OT";
    std::string model = "persistence";
    std::size_t origin = 0;
    std::size_t history = 96;
    std::size_t horizon = 48;
    std::optional<double> epsilon_ratio;
    std::optional<double> epsilon;
    double probe_scale = 1e-3;
    std::size_t directions = 1;
    std::uint64_t seed = 0;
    std::string convention = "descent";
    std::string loss = "squared";
    std::string out;
};

int cmd_attack(const AttackFlags& f) {
    const auto selector = as_usage([&] { return parse_column_selector(f.column); });
    AttackConfig cfg;
    as_usage([&] {
        if (f.epsilon && f.epsilon_ratio) throw UsageError("--epsilon and --epsilon-ratio are exclusive");
        if (f.epsilon) cfg.epsilon = AbsoluteEpsilon{*f.epsilon};
        if (f.epsilon_ratio) cfg.epsilon = MeanRatioEpsilon{*f.epsilon_ratio};
        cfg.probe_scale = f.probe_scale;
        cfg.n_directions = f.directions;
        cfg.seed = f.seed;
        cfg.convention = parse_sign_convention(f.convention);
        cfg.loss = parse_loss_kind(f.loss);
        cfg.validate();
    });
    const ForecasterSpec spec = as_usage([&] { return ForecasterSpec::parse(f.model); });

    const TimeSeries series = load_csv(f.data, selector);
    detail::require(f.history >= 1 && f.horizon >= 1 && f.horizon <= f.history, ErrorCode::InvalidHorizon,
                    "horizon must lie in [1, history]");
    detail::require(f.origin + f.history <= series.size(), ErrorCode::SeriesTooShort,
                    "origin " + std::to_string(f.origin) + " with history " + std::to_string(f.history) +
                        " runs past the end of the series (" + std::to_string(series.size()) + " points)");
    const SplitParts parts = chronological_split(series, SplitSpec{});
    const ForecasterHandle handle = build_forecaster(spec, parts.train.values());
    const SeriesStats stats = series_stats(series.values());
    const auto history = series.values().subspan(f.origin, f.history);

    AdversarialExample ex = dga_attack(handle, history, f.horizon, cfg, stats);
    ex.origin = f.origin;
    const auto clean_pred = handle.predict(history, f.horizon);
    const auto adv_pred = handle.predict(ex.perturbed_history, f.horizon);

    const std::string json = to_json(ex).dump(2) + "\n";
    if (f.out.empty()) {
        std::cout << json;
    } else {
        write_text_file(f.out, json);
    }

    double max_abs = 0.0;
    for (double r : ex.perturbation) max_abs = std::max(max_abs, std::abs(r));
    std::cerr << "model          " << handle.descriptor() << '\n'
              << "epsilon        " << format_real(ex.epsilon_resolved) << '\n'
              << "queries used   " << ex.queries_used << '\n'
              << "max |rho|      " << format_real(max_abs) << (max_abs == 0.0 ? "  (zero perturbation)" : "") << '\n'
              << "MAE to target  clean " << format_real(mae(clean_pred, ex.target.values)) << ", attacked "
              << format_real(mae(adv_pred, ex.target.values)) << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

const std::vector<std::string> kRunOutputs{"plan.json", "records.jsonl", "table.csv", "sign_test.csv",
                                           "radar.csv", "sweep.csv",     "acf",       "hist"};

void prepare_out_dir(const std::filesystem::path& dir, bool force) {
    if (std::filesystem::exists(dir)) {
        if (!std::filesystem::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
        if (!std::filesystem::is_empty(dir)) {
            if (!force) throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
            for (const auto& name : kRunOutputs) std::filesystem::remove_all(dir / name);
        }
    }
    std::filesystem::create_directories(dir);
}

int cmd_evaluate(const PlanFlags& pf, const std::string& out, bool force, std::optional<std::size_t> jobs) {
    const ExperimentPlan plan = pf.resolve();
    prepare_out_dir(out, force);
    RunOptions options;
    options.jobs = jobs.value_or(uses_remote(plan) ? 1 : default_jobs());
    if (options.jobs == 0) throw UsageError("--jobs must be >= 1");

    // One (dataset, forecaster) group at a time, so a fatal failure leaves the
    // records of completed groups on disk.
    MatrixResult result;
    try {
        for (const auto& ds : plan.datasets) {
            for (const auto& fs : plan.forecasters) {
                ExperimentPlan single = plan;
                single.datasets = {ds};
                single.forecasters = {fs};
                std::cerr << "running " << ds.name << " / " << fs.label() << '\n';
                MatrixResult part = run_matrix(single, options);
                for (auto& row : part.table.rows) result.table.rows.push_back(std::move(row));
                for (auto& st : part.table.sign_tests) result.table.sign_tests.push_back(std::move(st));
                for (auto& r : part.records) result.records.push_back(std::move(r));
            }
        }
    } catch (...) {
        if (!result.records.empty()) write_run_directory(out, plan, result);
        throw;
    }

    const auto skipped = write_run_directory(out, plan, result);
    for (const auto& name : skipped) std::cerr << "acf skipped for " << name << " (constant or short predictions)\n";
    for (const auto& row : result.table.rows) {
        std::cerr << row.dataset << ' ' << row.forecaster << ' ' << to_string(row.variant) << "  mae "
                  << format_real(row.mae) << "  windows " << row.windows;
        if (row.failures > 0) std::cerr << "  failures " << row.failures;
        std::cerr << '\n';
    }
    for (const auto& st : result.table.sign_tests) {
        std::cerr << st.dataset << ' ' << st.forecaster << " sign test dga vs gwn: ";
        if (st.result) {
            std::cerr << st.result->n_pos << '/' << st.result->n_neg << "  p " << format_real(st.result->p_value) << '\n';
        } else {
            std::cerr << "too few untied pairs\n";
        }
    }
    std::cerr << "wrote " << out << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// sweep

int cmd_sweep(const PlanFlags& pf, const std::string& ratios_text, const std::string& out,
              std::optional<std::size_t> jobs) {
    const auto ratios = parse_ratio_list(ratios_text);
    const ExperimentPlan plan = pf.resolve();
    RunOptions options;
    options.jobs = jobs.value_or(uses_remote(plan) ? 1 : default_jobs());
    if (options.jobs == 0) throw UsageError("--jobs must be >= 1");
    const auto rows = sweep_epsilon(plan, ratios, options);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    if (out.empty()) {
        std::cout << csv.str();
    } else {
        write_text_file(out, csv.str());
        std::cerr << "wrote " << out << '\n';
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// remote-check

int cmd_remote_check(std::string url, std::size_t horizon, std::size_t probe_length,
                     std::optional<long> timeout_ms, std::optional<std::string> token) {
    RemoteConfig cfg = RemoteConfig::from_environment();
    if (!url.empty()) cfg.url = url;
    if (cfg.url.empty()) throw UsageError("--url is required (or set TSADV_REMOTE_URL)");
    if (timeout_ms) cfg.timeout = std::chrono::milliseconds(*timeout_ms);
    if (token) cfg.auth_token = *token;
    if (horizon == 0 || probe_length == 0) throw UsageError("--horizon and --probe-length must be >= 1");
    as_usage([&] { parse_endpoint(cfg.url); });

    SyntheticSpec syn;
    syn.length = std::max<std::size_t>(probe_length, 4);
    const auto series = make_synthetic_series(syn);
    const auto probe = series.values().first(probe_length);
    const ForecasterHandle handle = make_handle<RemoteForecaster>(cfg);

    nlohmann::ordered_json report;
    report["url"] = cfg.url;
    report["probe_length"] = probe_length;
    report["horizon"] = horizon;
    const auto start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    };
    try {
        const auto forecast = handle.predict(probe, horizon);
        report["latency_ms"] = elapsed_ms();
        report["status"] = 200;
        report["returned_length"] = forecast.size();
        report["horizon_honored"] = true;
        report["error"] = nullptr;
        std::cout << report.dump(2) << '\n';
        std::cerr << "OK, horizon honored\n";
        return kOk;
    } catch (const Error& e) {
        report["latency_ms"] = elapsed_ms();
        report["status"] = e.http_status ? nlohmann::ordered_json(*e.http_status) : nlohmann::ordered_json(nullptr);
        report["returned_length"] = nullptr;
        report["horizon_honored"] = false;
        report["error"] = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
        std::cout << report.dump(2) << '\n';
        std::cerr << "FAILED " << e.what() << '\n';
        return is_remote_failure(e.code()) ? kRemote : kRuntime;
    }
}

// ---------------------------------------------------------------------------
// stub

StubBehavior parse_behavior(const std::string& s) {
    if (s == "serve") return StubBehavior::Serve;
    if (s == "short") return StubBehavior::ShortForecast;
    if (s == "error") return StubBehavior::ErrorStatus;
    if (s == "malformed") return StubBehavior::Malformed;
    if (s == "delay") return StubBehavior::Delay;
    throw UsageError("unknown stub behavior '" + s + "'");
}

int cmd_stub(const std::string& model, const std::string& data, const std::string& column, const std::string& host,
             int port, const std::string& behavior, int status, long delay_ms, const std::string& token,
             const std::string& path, std::size_t max_requests) {
    const ForecasterSpec spec = as_usage([&] { return ForecasterSpec::parse(model); });
    if (spec.kind == "remote") throw UsageError("the stub cannot forward to another remote model");
    StubOptions opts;
    opts.behavior = parse_behavior(behavior);
    opts.error_status = status;
    opts.delay = std::chrono::milliseconds(delay_ms);
    if (!token.empty()) opts.required_token = token;
    opts.path = path;

    std::vector<double> train;
    if (spec.kind == "ar") {
        const TimeSeries series = data.empty() ? make_synthetic_series(SyntheticSpec{})
                                               : load_csv(data, as_usage([&] { return parse_column_selector(column); }));
        const auto parts = chronological_split(series, SplitSpec{});
        train.assign(parts.train.values().begin(), parts.train.values().end());
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    StubServer server(build_forecaster(spec, train), opts, host, port);
    std::cout << nlohmann::ordered_json{{"url", server.url()}, {"model", spec.label()}}.dump() << std::endl;
    std::cerr << "serving " << spec.label() << " at " << server.url() << '\n';
    while (!g_stop && (max_requests == 0 || server.served() < max_requests)) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    server.stop();
    return kOk;
}

int run(int argc, char** argv) {
    CLI::App app{"Query-only adversarial attacks on black-box time series forecasters"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    // attack
    AttackFlags af;
    auto* attack = app.add_subcommand("attack", "Attack one window of a CSV series and write the adversarial example");
    attack->add_option("--data", af.data, "CSV file")->required()->check(CLI::ExistingFile);
    attack->add_option("--column", af.column, "Column name or zero-based index")->capture_default_str();
    attack->add_option("--model", af.model,
                       "persistence, seasonal-naive:m, ar:p, exp-smoothing:alpha, constant:v or remote:url")
        ->capture_default_str();
    attack->add_option("--window-origin", af.origin, "Index of the first history point")->capture_default_str();
    attack->add_option("--history", af.history, "History length")->capture_default_str();
    attack->add_option("--horizon", af.horizon, "Forecast horizon")->capture_default_str();
    auto* ratio_opt = attack->add_option("--epsilon-ratio", af.epsilon_ratio, "Budget as a fraction of the series mean (default 0.02)");
    attack->add_option("--epsilon", af.epsilon, "Absolute budget")->excludes(ratio_opt);
    attack->add_option("--probe-scale", af.probe_scale, "Probe size relative to the window std")->capture_default_str();
    attack->add_option("--directions", af.directions, "Probe directions")->capture_default_str();
    attack->add_option("--seed", af.seed, "Attack seed")->capture_default_str();
    attack->add_option("--convention", af.convention, "descent or paper-plus")->capture_default_str();
    attack->add_option("--loss", af.loss, "squared or absolute")->capture_default_str();
    attack->add_option("--out", af.out, "Output JSON file (default: stdout)");

    // evaluate
    PlanFlags ef;
    std::string eval_out;
    bool force = false;
    std::optional<std::size_t> eval_jobs;
    auto* evaluate = app.add_subcommand(
        "evaluate", "Run clean, gwn and dga over every dataset and forecaster; flags override --plan values");
    ef.attach(*evaluate);
    evaluate->add_option("--out", eval_out, "Run directory")->required();
    evaluate->add_flag("--force", force, "Overwrite a non-empty run directory");
    evaluate->add_option("--jobs", eval_jobs, "Worker threads (default: logical CPUs, 1 for remote models)");

    // sweep
    PlanFlags sf;
    std::string ratios = "0.005,0.01,0.02,0.04";
    std::string sweep_out;
    std::optional<std::size_t> sweep_jobs;
    auto* sweep = app.add_subcommand("sweep", "Normalized MAE increase of gwn and dga across budget ratios");
    sf.attach(*sweep);
    sweep->add_option("--ratios", ratios, "Comma-separated ascending ratios")->capture_default_str();
    sweep->add_option("--out", sweep_out, "Output CSV (default: stdout)");
    sweep->add_option("--jobs", sweep_jobs, "Worker threads (default: logical CPUs, 1 for remote models)");

    // remote-check
    std::string url;
    std::size_t horizon = 48;
    std::size_t probe_length = 96;
    std::optional<long> timeout_ms;
    std::optional<std::string> token;
    auto* check = app.add_subcommand("remote-check", "Send one forecast request and check the reply");
    check->add_option("--url", url, "Endpoint URL (default: TSADV_REMOTE_URL)");
    check->add_option("--horizon", horizon, "Requested horizon")->capture_default_str();
    check->add_option("--probe-length", probe_length, "History length sent")->capture_default_str();
    check->add_option("--timeout-ms", timeout_ms, "Request timeout (default: TSADV_REMOTE_TIMEOUT_MS or 30000)");
    check->add_option("--token", token, "Bearer token (default: TSADV_REMOTE_TOKEN)");

    // stub
    std::string stub_model = "persistence";
    std::string stub_data;
    std::string stub_column = "OT";
    std::string host = "127.0.0.1";
    int port = 0;
    std::string behavior = "serve";
    int status = 503;
    long delay_ms = 0;
    std::string stub_token;
    std::string stub_path = "/forecast";
    std::size_t max_requests = 0;
    auto* stub = app.add_subcommand("stub", "Serve an in-process forecaster over the remote protocol");
    stub->add_option("--model", stub_model, "Backing forecaster")->capture_default_str();
    stub->add_option("--data", stub_data, "CSV used to fit ar:p (default: bundled synthetic series)");
    stub->add_option("--column", stub_column, "Column for --data")->capture_default_str();
    stub->add_option("--host", host)->capture_default_str();
    stub->add_option("--port", port, "0 picks a free port")->capture_default_str();
    stub->add_option("--behavior", behavior, "serve, short, error, malformed or delay")->capture_default_str();
    stub->add_option("--status", status, "Status sent by --behavior error")->capture_default_str();
    stub->add_option("--delay-ms", delay_ms, "Reply delay for --behavior delay")->capture_default_str();
    stub->add_option("--token", stub_token, "Require this bearer token");
    stub->add_option("--path", stub_path)->capture_default_str();
    stub->add_option("--max-requests", max_requests, "Exit after this many requests (0: run until signalled)")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const auto chosen = app.get_subcommands();
        std::cerr << (chosen.empty() ? app.help() : chosen.front()->help()) << '\n';
        return kUsage;
    }

    try {
        if (*attack) return cmd_attack(af);
        if (*evaluate) return cmd_evaluate(ef, eval_out, force, eval_jobs);
        if (*sweep) return cmd_sweep(sf, ratios, sweep_out, sweep_jobs);
        if (*check) return cmd_remote_check(url, horizon, probe_length, timeout_ms, token);
        if (*stub) {
            return cmd_stub(stub_model, stub_data, stub_column, host, port, behavior, status, delay_ms, stub_token,
                            stub_path, max_requests);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << '\n';
        return kUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return is_remote_failure(e.code()) ? kRemote : kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}

} // namespace

int main(int argc, char** argv) { return run(argc, argv); }

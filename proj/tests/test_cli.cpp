#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <sys/wait.h>

#include "support.hpp"
#include "tsadv/harness.hpp"
#include "tsadv/remote.hpp"

using namespace tsadv;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) {
        if (c == '\'') q += "'\\''";
        else q += c;
    }
    return q + "'";
}

Outcome run_cli(const std::string& args, const std::string& env = "") {
    static test::TempDir scratch;
    static int n = 0;
    const auto out = scratch / ("out" + std::to_string(n));
    const auto err = scratch / ("err" + std::to_string(n++));
    const std::string cmd = env + " " + quote(TSADV_CLI_PATH) + " " + args + " >" + quote(out.string()) + " 2>" +
                            quote(err.string());
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = test::read_file(out);
    o.err = test::read_file(err);
    return o;
}

std::string bundled_plan() { return quote(std::string(TSADV_PLAN_DIR) + "/synthetic.json"); }

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b) {
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        ++files;
        const auto rel = std::filesystem::relative(entry.path(), a);
        if (!std::filesystem::exists(b / rel)) return false;
        if (test::read_file(entry.path()) != test::read_file(b / rel)) return false;
    }
    std::size_t other = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(b)) other += entry.is_regular_file();
    return files > 0 && files == other;
}

std::string constant_csv(const test::TempDir& dir) {
    std::string text = "time,value\n";
    for (int i = 0; i < 300; ++i) text += std::to_string(i) + ",5\n";
    const auto path = dir / "constant.csv";
    test::write_file(path, text);
    return path.string();
}

} // namespace

TEST_CASE("cli: help and usage errors", "[cli]") {
    CHECK(run_cli("--help").code == 0);
    CHECK(run_cli("attack --help").code == 0);
    CHECK(run_cli("").code == 1);
    CHECK(run_cli("frobnicate").code == 1);
    CHECK(run_cli("sweep --no-such-flag").code == 1);

    const auto missing = run_cli("attack");
    CHECK(missing.code == 1);
    CHECK(missing.err.find("--data") != std::string::npos);
    CHECK(missing.err.find("Usage") != std::string::npos);
}

TEST_CASE("cli attack", "[cli][attack]") {
    test::TempDir dir;
    const auto csv = constant_csv(dir);

    SECTION("zero-gradient model gives zero perturbation") {
        const auto o = run_cli("attack --data " + quote(csv) + " --column value --model constant:5");
        REQUIRE(o.code == 0);
        const auto j = nlohmann::json::parse(o.out);
        CHECK(j["queries"] == 2);
        CHECK(j["perturbation"].size() == 96);
        for (const auto& v : j["perturbation"]) CHECK(v.get<double>() == 0.0);
        CHECK(o.err.find("zero perturbation") != std::string::npos);
    }
    SECTION("same flags and seed give identical files") {
        test::TempDir data;
        std::string text = "value\n";
        for (int i = 0; i < 400; ++i) text += std::to_string(10 + std::sin(0.05 * i)) + "\n";
        test::write_file(data / "s.csv", text);
        const std::string args = "attack --data " + quote((data / "s.csv").string()) +
                                 " --column 0 --model ar:2 --window-origin 100 --seed 11 --out ";
        REQUIRE(run_cli(args + quote((dir / "a.json").string())).code == 0);
        REQUIRE(run_cli(args + quote((dir / "b.json").string())).code == 0);
        CHECK(test::read_file(dir / "a.json") == test::read_file(dir / "b.json"));
        const auto j = nlohmann::json::parse(test::read_file(dir / "a.json"));
        CHECK(j["origin"] == 100);
        CHECK(j["seed"] == 11);
    }
    SECTION("bad values and runtime failures") {
        CHECK(run_cli("attack --data " + quote(csv) + " --column value --convention sideways").code == 1);
        CHECK(run_cli("attack --data " + quote(csv) + " --column value --model arima").code == 1);
        CHECK(run_cli("attack --data " + quote(csv) + " --column missing").code == 2);
        CHECK(run_cli("attack --data " + quote(csv) + " --column value --window-origin 250").code == 2);
    }
}

TEST_CASE("cli evaluate", "[cli][evaluate]") {
    test::TempDir dir;
    const auto run_dir = dir / "run";
    const auto o = run_cli("evaluate --plan " + bundled_plan() + " --model ar:2 --max-windows 20 --out " +
                           quote(run_dir.string()));
    REQUIRE(o.code == 0);

    const auto table = test::read_file(run_dir / "table.csv");
    CHECK(line_count(table) == 4);
    CHECK(table.find("synthetic,ar:2,clean,") != std::string::npos);
    CHECK(table.find("synthetic,ar:2,gwn,") != std::string::npos);
    CHECK(table.find("synthetic,ar:2,dga,") != std::string::npos);
    CHECK(line_count(test::read_file(run_dir / "records.jsonl")) == 60);

    // Plan echo: the bundled plan with the flag overrides applied.
    auto expected = load_plan(std::string(TSADV_PLAN_DIR) + "/synthetic.json");
    expected.forecasters = {ForecasterSpec::parse("ar:2")};
    expected.max_windows = 20;
    const auto echoed = load_plan(run_dir / "plan.json");
    CHECK(to_json(echoed).dump() == to_json(expected).dump());

    SECTION("non-empty directory is refused without --force") {
        const auto again = run_cli("evaluate --plan " + bundled_plan() + " --out " + quote(run_dir.string()));
        CHECK(again.code == 1);
        CHECK(again.err.find("--force") != std::string::npos);
        CHECK(run_cli("evaluate --plan " + bundled_plan() + " --model ar:2 --max-windows 20 --force --out " +
                      quote(run_dir.string()))
                  .code == 0);
    }
    SECTION("parallel run is byte-identical") {
        const auto other = dir / "parallel";
        REQUIRE(run_cli("evaluate --plan " + bundled_plan() + " --model ar:2 --max-windows 20 --jobs 4 --out " +
                        quote(other.string()))
                    .code == 0);
        CHECK(same_tree(run_dir, other));
    }
    SECTION("fatal failures exit 2") {
        CHECK(run_cli("evaluate --data " + quote((dir / "absent.csv").string()) + " --out " +
                      quote((dir / "x").string()))
                  .code == 2);
        CHECK(run_cli("evaluate --plan " + quote((dir / "absent.json").string()) + " --out " +
                      quote((dir / "y").string()))
                  .code == 1);
    }
}

TEST_CASE("cli sweep", "[cli][sweep]") {
    const std::string base = "sweep --plan " + bundled_plan() + " --model ar:2 --max-windows 10 ";
    const auto o = run_cli(base + "--ratios 0.005,0.01,0.02,0.04");
    REQUIRE(o.code == 0);
    CHECK(line_count(o.out) == 9);
    CHECK(o.out.rfind("ratio,dataset,forecaster,variant,mae,windows,norm_mae_increase\n", 0) == 0);
    CHECK(run_cli(base + "--ratios 0.01,abc").code == 1);
    CHECK(run_cli(base + "--ratios 0.02,0.01").code == 1);
    CHECK(run_cli(base + "--ratios 0,0.01").code == 1);
    CHECK(run_cli(base + "--ratios 0.005,0.01,0.02,0.04").out == o.out);
}

TEST_CASE("cli remote-check", "[cli][remote]") {
    SECTION("healthy stub") {
        StubServer stub(make_handle<PersistenceForecaster>());
        const auto o = run_cli("remote-check --url " + stub.url() + " --horizon 24 --probe-length 50");
        CHECK(o.code == 0);
        CHECK(o.err.find("OK, horizon honored") != std::string::npos);
        const auto j = nlohmann::json::parse(o.out);
        CHECK(j["returned_length"] == 24);
        CHECK(j["status"] == 200);
    }
    SECTION("url from the environment") {
        StubServer stub(make_handle<PersistenceForecaster>());
        const auto o = run_cli("remote-check", "TSADV_REMOTE_URL=" + stub.url());
        CHECK(o.code == 0);
        CHECK(run_cli("remote-check").code == 1);
    }
    SECTION("dead port") {
        int port = 0;
        {
            StubServer probe(make_handle<PersistenceForecaster>());
            port = probe.port();
        }
        const auto o = run_cli("remote-check --timeout-ms 300 --url http://127.0.0.1:" + std::to_string(port) + "/forecast");
        CHECK(o.code == 3);
        CHECK(o.err.find("Timeout") != std::string::npos);
    }
    SECTION("wrong-length stub") {
        StubOptions opts;
        opts.behavior = StubBehavior::ShortForecast;
        StubServer stub(make_handle<PersistenceForecaster>(), opts);
        const auto o = run_cli("remote-check --url " + stub.url());
        CHECK(o.code == 3);
        CHECK(o.err.find("LengthMismatch") != std::string::npos);
    }
    SECTION("error status") {
        StubOptions opts;
        opts.behavior = StubBehavior::ErrorStatus;
        StubServer stub(make_handle<PersistenceForecaster>(), opts);
        const auto o = run_cli("remote-check --url " + stub.url());
        CHECK(o.code == 3);
        CHECK(nlohmann::json::parse(o.out)["status"] == 503);
    }
}

TEST_CASE("cli stub serves the protocol", "[cli][remote]") {
    const std::string cmd = quote(TSADV_CLI_PATH) + " stub --model ar:2 --max-requests 1 2>/dev/null";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[512] = {};
    REQUIRE(std::fgets(buf, sizeof buf, pipe) != nullptr);
    const auto banner = nlohmann::json::parse(buf);
    CHECK(banner["model"] == "ar:2");
    const auto o = run_cli("remote-check --url " + banner["url"].get<std::string>());
    CHECK(o.code == 0);
    const int status = ::pclose(pipe);
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
}

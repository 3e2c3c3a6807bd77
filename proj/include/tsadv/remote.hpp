#pragma once

#include <chrono>
#include <cstddef>
#include <cstdlib>
#include <memory>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "tsadv/error.hpp"
#include "tsadv/forecasters.hpp"

namespace tsadv {

// Wire protocol (JSON over HTTP):
//   POST <endpoint>   {"series": [..], "horizon": n}
//   200               {"forecast": [..]} with exactly n numbers
// Anything else is an error.

struct Endpoint {
    std::string scheme_host_port; // "http://host:port"
    std::string path;             // "/..." (defaults to "/")
};

inline Endpoint parse_endpoint(const std::string& url) {
    static const std::regex pattern(R"(^(http)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:]+\])(:([0-9]{1,5}))?(/[^\s]*)?$)");
    std::smatch m;
    detail::require(std::regex_match(url, m, pattern), ErrorCode::InvalidArgument,
                    "endpoint '" + url + "' is not a valid http URL");
    Endpoint ep;
    ep.scheme_host_port = m[1].str() + "://" + m[2].str();
    if (m[4].matched) {
        detail::require(std::stoi(m[4].str()) <= 65535, ErrorCode::InvalidArgument, "port out of range in " + url);
        ep.scheme_host_port += ":" + m[4].str();
    }
    ep.path = m[5].matched ? m[5].str() : "/";
    return ep;
}

struct RemoteConfig {
    std::string url;
    std::chrono::milliseconds timeout{30000};
    std::optional<std::string> auth_token;
    std::size_t max_in_flight = 1;

    /// TSADV_REMOTE_URL, TSADV_REMOTE_TOKEN, TSADV_REMOTE_TIMEOUT_MS.
    static RemoteConfig from_environment() {
        RemoteConfig cfg;
        if (const char* url = std::getenv("TSADV_REMOTE_URL")) cfg.url = url;
        if (const char* token = std::getenv("TSADV_REMOTE_TOKEN"); token && *token) cfg.auth_token = token;
        if (const char* ms = std::getenv("TSADV_REMOTE_TIMEOUT_MS"); ms && *ms) {
            try {
                cfg.timeout = std::chrono::milliseconds(std::stoll(ms));
            } catch (const std::exception&) {
                detail::fail(ErrorCode::InvalidArgument, std::string("TSADV_REMOTE_TIMEOUT_MS is not an integer: ") + ms);
            }
        }
        return cfg;
    }
};

namespace detail {

inline std::string encode_request(std::span<const double> series, std::size_t horizon) {
    nlohmann::json body;
    body["series"] = std::vector<double>(series.begin(), series.end());
    body["horizon"] = horizon;
    return body.dump();
}

inline std::vector<double> decode_response(const std::string& body, std::size_t horizon) {
    nlohmann::json doc = nlohmann::json::parse(body, nullptr, false);
    require(!doc.is_discarded() && doc.is_object(), ErrorCode::MalformedResponse, "response body is not a JSON object");
    auto it = doc.find("forecast");
    require(it != doc.end() && it->is_array(), ErrorCode::MalformedResponse, "response lacks a 'forecast' array");
    std::vector<double> out;
    out.reserve(it->size());
    for (const auto& v : *it) {
        require(v.is_number(), ErrorCode::MalformedResponse, "non-numeric forecast entry");
        out.push_back(v.get<double>());
    }
    require(out.size() == horizon, ErrorCode::LengthMismatch,
            "remote returned " + std::to_string(out.size()) + " values, expected " + std::to_string(horizon));
    return out;
}

} // namespace detail

/// Forecaster behind an HTTP endpoint. One synchronous request per query.
/// Transport failures (unreachable host, connect or read timeout) all surface
/// as Timeout; non-200 as HttpError; bad bodies as MalformedResponse;
/// wrong lengths as LengthMismatch.
class RemoteForecaster final : public Forecaster {
public:
    explicit RemoteForecaster(RemoteConfig config) : config_(std::move(config)), endpoint_(parse_endpoint(config_.url)) {
        detail::require(config_.timeout.count() > 0, ErrorCode::InvalidArgument, "timeout must be positive");
        detail::require(config_.max_in_flight >= 1, ErrorCode::InvalidArgument, "max_in_flight must be >= 1");
    }

    std::vector<double> forecast(std::span<const double> history, std::size_t horizon) const override {
        httplib::Client client(endpoint_.scheme_host_port);
        const auto sec = config_.timeout.count() / 1000;
        const auto usec = (config_.timeout.count() % 1000) * 1000;
        client.set_connection_timeout(sec, usec);
        client.set_read_timeout(sec, usec);
        client.set_write_timeout(sec, usec);
        httplib::Headers headers;
        if (config_.auth_token) headers.emplace("authorization", "Bearer " + *config_.auth_token);

        auto res = client.Post(endpoint_.path, headers, detail::encode_request(history, horizon), "application/json");
        if (!res) {
            detail::fail(ErrorCode::Timeout, "no response from " + config_.url + " within " +
                                                 std::to_string(config_.timeout.count()) +
                                                 " ms (" + httplib::to_string(res.error()) + ")");
        }
        if (res->status != 200) {
            Error err(ErrorCode::HttpError, config_.url + " answered status " + std::to_string(res->status));
            err.http_status = res->status;
            throw err;
        }
        return detail::decode_response(res->body, horizon);
    }

    std::string descriptor() const override { return "remote:" + config_.url; }
    std::size_t max_concurrency() const override { return config_.max_in_flight; }

private:
    RemoteConfig config_;
    Endpoint endpoint_;
};

inline ForecasterHandle remote_forecaster(const std::string& endpoint, std::chrono::milliseconds timeout,
                                          std::optional<std::string> auth_token = std::nullopt,
                                          std::size_t max_in_flight = 1) {
    return make_handle<RemoteForecaster>(RemoteConfig{endpoint, timeout, std::move(auth_token), max_in_flight});
}

/// How the bundled stub answers. Everything except Serve is a deliberate fault.
enum class StubBehavior { Serve, ShortForecast, ErrorStatus, Malformed, Delay };

struct StubOptions {
    StubBehavior behavior = StubBehavior::Serve;
    int error_status = 503;
    std::chrono::milliseconds delay{0};
    std::optional<std::string> required_token;
    std::string path = "/forecast";
};

/// Loopback HTTP server implementing the wire protocol over an in-process
/// forecaster. Listens on an ephemeral port until destroyed.
class StubServer {
public:
    explicit StubServer(ForecasterHandle backing, StubOptions options = {}, const std::string& host = "127.0.0.1",
                        int port = 0)
        : backing_(std::move(backing)), options_(std::move(options)), host_(host) {
        server_.Post(options_.path, [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
        port_ = port == 0 ? server_.bind_to_any_port(host_) : (server_.bind_to_port(host_, port) ? port : -1);
        detail::require(port_ > 0, ErrorCode::IoError, "stub server could not bind on " + host_);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    StubServer(const StubServer&) = delete;
    StubServer& operator=(const StubServer&) = delete;

    ~StubServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const noexcept { return port_; }
    std::string url() const { return "http://" + host_ + ":" + std::to_string(port_) + options_.path; }
    std::uint64_t served() const noexcept { return backing_.queries(); }

    /// Blocks the calling thread until stop() is called from elsewhere.
    void wait() {
        if (thread_.joinable()) thread_.join();
    }
    void stop() { server_.stop(); }

private:
    void handle(const httplib::Request& req, httplib::Response& res) {
        if (options_.required_token && req.get_header_value("authorization") != "Bearer " + *options_.required_token) {
            res.status = 401;
            res.set_content(R"({"error":"unauthorized"})", "application/json");
            return;
        }
        if (options_.behavior == StubBehavior::ErrorStatus) {
            res.status = options_.error_status;
            res.set_content(R"({"error":"injected failure"})", "application/json");
            return;
        }
        if (options_.behavior == StubBehavior::Malformed) {
            res.status = 200;
            res.set_content(R"({"prediction": "not a forecast"})", "application/json");
            return;
        }
        if (options_.behavior == StubBehavior::Delay) std::this_thread::sleep_for(options_.delay);

        nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object() || !body.contains("series") || !body["series"].is_array() ||
            !body.contains("horizon") || !body["horizon"].is_number_unsigned()) {
            res.status = 400;
            res.set_content(R"({"error":"expected {series, horizon}"})", "application/json");
            return;
        }
        try {
            const auto series = body["series"].get<std::vector<double>>();
            const auto horizon = body["horizon"].get<std::size_t>();
            auto forecast = backing_.predict(series, horizon);
            if (options_.behavior == StubBehavior::ShortForecast && !forecast.empty()) forecast.pop_back();
            nlohmann::json out;
            out["forecast"] = forecast;
            res.status = 200;
            res.set_content(out.dump(), "application/json");
        } catch (const std::exception& e) {
            nlohmann::json out;
            out["error"] = e.what();
            res.status = 500;
            res.set_content(out.dump(), "application/json");
        }
    }

    ForecasterHandle backing_;
    StubOptions options_;
    std::string host_;
    httplib::Server server_;
    int port_ = -1;
    std::thread thread_;
};

} // namespace tsadv

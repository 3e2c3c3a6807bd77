#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tsadv/error.hpp"
#include "tsadv/text.hpp"

namespace tsadv {

/// A black-box forecaster: history in, `horizon` values out. Nothing else
/// (parameters, gradients, training data) is reachable through this interface.
class Forecaster {
public:
    virtual ~Forecaster() = default;

    virtual std::vector<double> forecast(std::span<const double> history, std::size_t horizon) const = 0;
    virtual std::string descriptor() const = 0;

    /// Maximum number of concurrent forecast calls; 0 means unlimited.
    virtual std::size_t max_concurrency() const { return 0; }
};

/// Counts oracle queries. A child ledger forwards every increment to its
/// parent, so a per-attack count and a per-run total can coexist.
class QueryLedger {
public:
    QueryLedger() = default;
    explicit QueryLedger(std::shared_ptr<QueryLedger> parent) : parent_(std::move(parent)) {}

    void record() noexcept {
        count_.fetch_add(1, std::memory_order_relaxed);
        if (parent_) parent_->record();
    }
    std::uint64_t count() const noexcept { return count_.load(std::memory_order_relaxed); }

private:
    std::atomic<std::uint64_t> count_{0};
    std::shared_ptr<QueryLedger> parent_;
};

/// Query-counted access to a forecaster. Copies share the model and the ledger.
class ForecasterHandle {
public:
    explicit ForecasterHandle(std::shared_ptr<const Forecaster> model)
        : model_(std::move(model)), ledger_(std::make_shared<QueryLedger>()) {
        detail::require(model_ != nullptr, ErrorCode::InvalidArgument, "null forecaster");
    }

    /// One oracle query. Validates the input, then the output's length and finiteness.
    std::vector<double> predict(std::span<const double> history, std::size_t horizon) const {
        detail::require(!history.empty(), ErrorCode::InvalidArgument, "empty history");
        detail::require(horizon >= 1, ErrorCode::InvalidArgument, "horizon must be >= 1");
        for (double v : history) {
            detail::require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite history value");
        }
        ledger_->record();
        auto out = model_->forecast(history, horizon);
        detail::require(out.size() == horizon, ErrorCode::LengthMismatch,
                        model_->descriptor() + " returned " + std::to_string(out.size()) + " values, expected " +
                            std::to_string(horizon));
        for (double v : out) {
            detail::require(std::isfinite(v), ErrorCode::OracleFailure,
                            model_->descriptor() + " returned a non-finite value");
        }
        return out;
    }

    /// Same model, fresh ledger whose increments also reach this handle's ledger.
    ForecasterHandle child() const {
        ForecasterHandle h(*this);
        h.ledger_ = std::make_shared<QueryLedger>(ledger_);
        return h;
    }

    std::uint64_t queries() const noexcept { return ledger_->count(); }
    std::string descriptor() const { return model_->descriptor(); }
    std::size_t max_concurrency() const { return model_->max_concurrency(); }

private:
    std::shared_ptr<const Forecaster> model_;
    std::shared_ptr<QueryLedger> ledger_;
};

template <typename Model, typename... Args>
ForecasterHandle make_handle(Args&&... args) {
    return ForecasterHandle(std::make_shared<const Model>(std::forward<Args>(args)...));
}

// Forecaster zoo

class PersistenceForecaster final : public Forecaster {
public:
    std::vector<double> forecast(std::span<const double> history, std::size_t horizon) const override {
        return std::vector<double>(horizon, history.back());
    }
    std::string descriptor() const override { return "persistence"; }
};

/// Repeats the last `period` observations.
class SeasonalNaiveForecaster final : public Forecaster {
public:
    explicit SeasonalNaiveForecaster(std::size_t period) : period_(period) {
        detail::require(period >= 1, ErrorCode::InvalidArgument, "season length must be >= 1");
    }

    std::vector<double> forecast(std::span<const double> history, std::size_t horizon) const override {
        detail::require(history.size() >= period_, ErrorCode::OracleFailure,
                        "history shorter than season length " + std::to_string(period_));
        const std::size_t start = history.size() - period_;
        std::vector<double> out(horizon);
        for (std::size_t j = 0; j < horizon; ++j) out[j] = history[start + j % period_];
        return out;
    }
    std::string descriptor() const override { return "seasonal-naive:" + std::to_string(period_); }

private:
    std::size_t period_;
};

/// Ignores its input entirely.
class ConstantForecaster final : public Forecaster {
public:
    explicit ConstantForecaster(double value) : value_(value) {}

    std::vector<double> forecast(std::span<const double>, std::size_t horizon) const override {
        return std::vector<double>(horizon, value_);
    }
    std::string descriptor() const override { return "constant"; }

private:
    double value_;
};

/// Simple exponential smoothing; forecasts the final level.
class ExpSmoothingForecaster final : public Forecaster {
public:
    explicit ExpSmoothingForecaster(double alpha) : alpha_(alpha) {
        detail::require(alpha > 0.0 && alpha <= 1.0, ErrorCode::InvalidAlpha,
                        "smoothing factor must lie in (0, 1], got " + std::to_string(alpha));
    }

    std::vector<double> forecast(std::span<const double> history, std::size_t horizon) const override {
        double level = history.front();
        for (std::size_t t = 1; t < history.size(); ++t) level = alpha_ * history[t] + (1.0 - alpha_) * level;
        return std::vector<double>(horizon, level);
    }
    std::string descriptor() const override { return "exp-smoothing:" + format_real(alpha_); }
    double alpha() const noexcept { return alpha_; }

private:
    double alpha_;
};

inline ForecasterHandle exp_smoothing_forecaster(double alpha) {
    return make_handle<ExpSmoothingForecaster>(alpha);
}

/// x_t = intercept + sum_k coefficients[k] * x_{t-1-k}
struct ARModel {
    std::vector<double> coefficients;
    double intercept = 0.0;

    std::size_t order() const noexcept { return coefficients.size(); }
};

/// Ordinary least squares on the lag design [x_{t-1} .. x_{t-p}, 1].
/// Rank-deficient designs raise SingularSystem rather than being regularized.
inline ARModel fit_ar(std::span<const double> train, std::size_t p) {
    detail::require(p >= 1, ErrorCode::InvalidArgument, "AR order must be >= 1");
    detail::require(train.size() >= 2 * p + 1, ErrorCode::TooShort,
                    "AR(" + std::to_string(p) + ") needs at least " + std::to_string(2 * p + 1) + " points, got " +
                        std::to_string(train.size()));
    const auto rows = static_cast<Eigen::Index>(train.size() - p);
    const auto cols = static_cast<Eigen::Index>(p + 1);
    Eigen::MatrixXd design(rows, cols);
    Eigen::VectorXd response(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto t = static_cast<std::size_t>(r) + p;
        for (std::size_t k = 0; k < p; ++k) design(r, static_cast<Eigen::Index>(k)) = train[t - 1 - k];
        design(r, cols - 1) = 1.0;
        response(r) = train[t];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    detail::require(qr.rank() == cols, ErrorCode::SingularSystem,
                    "lag design for AR(" + std::to_string(p) + ") is rank deficient");
    const Eigen::VectorXd solution = qr.solve(response);

    ARModel model;
    model.coefficients.assign(solution.data(), solution.data() + p);
    model.intercept = solution(cols - 1);
    for (double c : model.coefficients) {
        detail::require(std::isfinite(c), ErrorCode::SingularSystem, "non-finite AR coefficient");
    }
    return model;
}

/// Recursive multi-step AR forecast: each prediction feeds the next step.
class ARForecaster final : public Forecaster {
public:
    explicit ARForecaster(ARModel model) : model_(std::move(model)) {
        detail::require(model_.order() >= 1, ErrorCode::InvalidArgument, "AR order must be >= 1");
    }

    std::vector<double> forecast(std::span<const double> history, std::size_t horizon) const override {
        const std::size_t p = model_.order();
        detail::require(history.size() >= p, ErrorCode::OracleFailure,
                        "history shorter than AR order " + std::to_string(p));
        std::vector<double> buf(history.end() - static_cast<std::ptrdiff_t>(p), history.end());
        buf.reserve(p + horizon);
        for (std::size_t j = 0; j < horizon; ++j) {
            double next = model_.intercept;
            for (std::size_t k = 0; k < p; ++k) next += model_.coefficients[k] * buf[buf.size() - 1 - k];
            buf.push_back(next);
        }
        return std::vector<double>(buf.begin() + static_cast<std::ptrdiff_t>(p), buf.end());
    }
    std::string descriptor() const override { return "ar:" + std::to_string(model_.order()); }
    const ARModel& model() const noexcept { return model_; }

private:
    ARModel model_;
};

} // namespace tsadv

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tsadv/error.hpp"
#include "tsadv/forecasters.hpp"
#include "tsadv/random.hpp"
#include "tsadv/series.hpp"

namespace tsadv {

/// Descent steps against the loss gradient (X - eps * sign(g)), which is the
/// update that pulls forecasts toward the target. PaperPlus steps along
/// the gradient, X + eps * sign(g).
enum class SignConvention { Descent, PaperPlus };

enum class GwnMode { ClippedGaussian, SignMatched };

enum class LossKind { SquaredError, AbsoluteError };

inline std::string_view to_string(SignConvention c) { return c == SignConvention::Descent ? "descent" : "paper-plus"; }
inline std::string_view to_string(GwnMode m) { return m == GwnMode::ClippedGaussian ? "clipped-gaussian" : "sign-matched"; }
inline std::string_view to_string(LossKind l) { return l == LossKind::SquaredError ? "squared" : "absolute"; }

inline SignConvention parse_sign_convention(std::string_view s) {
    if (s == "descent") return SignConvention::Descent;
    if (s == "paper-plus") return SignConvention::PaperPlus;
    detail::fail(ErrorCode::InvalidArgument, "unknown sign convention '" + std::string(s) + "'");
}
inline GwnMode parse_gwn_mode(std::string_view s) {
    if (s == "clipped-gaussian") return GwnMode::ClippedGaussian;
    if (s == "sign-matched") return GwnMode::SignMatched;
    detail::fail(ErrorCode::InvalidArgument, "unknown GWN mode '" + std::string(s) + "'");
}
inline LossKind parse_loss_kind(std::string_view s) {
    if (s == "squared") return LossKind::SquaredError;
    if (s == "absolute") return LossKind::AbsoluteError;
    detail::fail(ErrorCode::InvalidArgument, "unknown loss '" + std::string(s) + "'");
}

struct AbsoluteEpsilon {
    double value = 0.0;
};
/// Budget as a fraction of the reference mean, e.g. 0.02 for 2%.
struct MeanRatioEpsilon {
    double ratio = 0.02;
};
using EpsilonSpec = std::variant<AbsoluteEpsilon, MeanRatioEpsilon>;

struct AttackConfig {
    EpsilonSpec epsilon = MeanRatioEpsilon{0.02};
    double probe_scale = 1e-3; // delta, relative to the input window's std
    SignConvention convention = SignConvention::Descent;
    std::size_t n_directions = 1;
    LossKind loss = LossKind::SquaredError;
    std::uint64_t seed = 0;
    GwnMode gwn_mode = GwnMode::ClippedGaussian;

    void validate() const {
        if (const auto* abs = std::get_if<AbsoluteEpsilon>(&epsilon)) {
            detail::require(abs->value > 0.0 && std::isfinite(abs->value), ErrorCode::InvalidArgument,
                            "absolute epsilon must be positive");
        } else {
            const double r = std::get<MeanRatioEpsilon>(epsilon).ratio;
            detail::require(r > 0.0 && std::isfinite(r), ErrorCode::InvalidRatio, "epsilon ratio must be positive");
        }
        detail::require(probe_scale > 0.0 && std::isfinite(probe_scale), ErrorCode::InvalidArgument,
                        "probe scale must be positive");
        detail::require(n_directions >= 1, ErrorCode::InvalidArgument, "n_directions must be >= 1");
    }
};

struct TargetSequence {
    std::vector<double> values;
    double mu = 0.0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
};

struct ProbeSignal {
    std::vector<double> values;
    double scale = 0.0;
};

struct GradientEstimate {
    std::vector<double> values;
    double loss_at_base = 0.0;
    double loss_at_probe = 0.0;
};

struct AdversarialExample {
    std::vector<double> perturbed_history;
    std::vector<double> perturbation;
    double epsilon_resolved = 0.0;
    TargetSequence target; // empty for the noise baseline
    std::uint64_t queries_used = 0;
    AttackConfig config_echo;
    std::size_t origin = 0;
    bool is_baseline = false;
};

/// Mean squared or mean absolute error between two equal-length sequences.
inline double loss(std::span<const double> prediction, std::span<const double> target,
                   LossKind kind = LossKind::SquaredError) {
    detail::require(prediction.size() == target.size(), ErrorCode::LengthMismatch,
                    "loss over sequences of length " + std::to_string(prediction.size()) + " and " +
                        std::to_string(target.size()));
    detail::require(!prediction.empty(), ErrorCode::EmptyInput, "loss over empty sequences");
    double acc = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double d = prediction[i] - target[i];
        acc += kind == LossKind::SquaredError ? d * d : std::abs(d);
    }
    return acc / static_cast<double>(prediction.size());
}

/// Absolute(e) -> e; MeanRatio(r) -> r * |mean|.
inline double resolve_epsilon(const EpsilonSpec& spec, const SeriesStats& reference) {
    if (const auto* abs = std::get_if<AbsoluteEpsilon>(&spec)) {
        detail::require(abs->value > 0.0, ErrorCode::InvalidArgument, "absolute epsilon must be positive");
        return abs->value;
    }
    const double r = std::get<MeanRatioEpsilon>(spec).ratio;
    detail::require(r > 0.0, ErrorCode::InvalidRatio, "epsilon ratio must be positive");
    detail::require(std::isfinite(reference.mean), ErrorCode::InvalidArgument, "reference mean is not finite");
    detail::require(std::abs(reference.mean) >= 1e-12, ErrorCode::ZeroMeanReference,
                    "mean-ratio epsilon needs a nonzero reference mean");
    return r * std::abs(reference.mean);
}

/// tau i.i.d. draws from Normal(stats.mean, stats.std), reproducible from seed.
inline TargetSequence make_gwn_target(std::size_t tau, const SeriesStats& stats, std::uint64_t seed) {
    detail::require(tau >= 1, ErrorCode::InvalidArgument, "target length must be >= 1");
    detail::require(stats.std >= 0.0, ErrorCode::InvalidArgument, "negative standard deviation");
    TargetSequence target{std::vector<double>(tau, stats.mean), stats.mean, stats.std, seed};
    if (stats.std > 0.0) {
        auto rng = make_rng(seed);
        std::normal_distribution<double> normal(stats.mean, stats.std);
        for (auto& v : target.values) v = normal(rng);
    }
    return target;
}

/// theta_i = delta * scale * s_i with Rademacher s_i, where scale is the
/// window std, or |mean| when the window is constant.
inline ProbeSignal sample_probe(std::size_t length, const SeriesStats& stats, double delta, std::uint64_t seed) {
    detail::require(length >= 1, ErrorCode::InvalidArgument, "probe length must be >= 1");
    detail::require(delta > 0.0, ErrorCode::InvalidArgument, "probe scale must be positive");
    double base = stats.std;
    if (!(base > 0.0)) base = std::abs(stats.mean);
    detail::require(base >= 1e-12, ErrorCode::DegenerateScale, "window has zero std and zero mean");

    ProbeSignal probe{std::vector<double>(length), delta * base};
    auto rng = make_rng(seed);
    for (auto& v : probe.values) v = probe.scale * rademacher(rng);
    return probe;
}

namespace detail {

inline void check_probe(std::span<const double> history, const ProbeSignal& probe) {
    require(probe.values.size() == history.size(), ErrorCode::InvalidArgument,
            "probe length differs from history length");
    for (double v : probe.values) require(v != 0.0 && std::isfinite(v), ErrorCode::InvalidArgument, "zero probe element");
}

/// One extra query at X + theta; the base loss comes from the caller.
inline GradientEstimate probe_gradient(const ForecasterHandle& handle, std::span<const double> history,
                                       const TargetSequence& target, const ProbeSignal& probe, LossKind kind,
                                       double base_loss) {
    std::vector<double> shifted(history.begin(), history.end());
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += probe.values[i];
    const double probe_loss = tsadv::loss(handle.predict(shifted, target.values.size()), target.values, kind);
    const double diff = probe_loss - base_loss;
    GradientEstimate g{std::vector<double>(history.size()), base_loss, probe_loss};
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = diff / probe.values[i];
    return g;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace detail

/// Directional estimate g_i = (L(f(X + theta), Y) - L(f(X), Y)) / theta_i.
/// Exactly two oracle queries.
inline GradientEstimate estimate_gradient(const ForecasterHandle& handle, std::span<const double> history,
                                          const TargetSequence& target, const ProbeSignal& probe,
                                          LossKind kind = LossKind::SquaredError) {
    detail::require(!history.empty(), ErrorCode::InvalidArgument, "empty history");
    detail::require(!target.values.empty() && target.values.size() <= history.size(), ErrorCode::InvalidHorizon,
                    "target length must lie in [1, history length]");
    detail::check_probe(history, probe);
    const double base_loss = loss(handle.predict(history, target.values.size()), target.values, kind);
    return detail::probe_gradient(handle, history, target, probe, kind, base_loss);
}

/// rho_i = -eps * sign(g_i) (descent) or +eps * sign(g_i) (paper-plus);
/// sign(0) = 0 leaves insensitive coordinates untouched.
inline AdversarialExample sign_step(std::span<const double> history, const GradientEstimate& g, double epsilon,
                                    SignConvention convention) {
    detail::require(epsilon > 0.0, ErrorCode::InvalidArgument, "epsilon must be positive");
    detail::require(g.values.size() == history.size(), ErrorCode::InvalidArgument,
                    "gradient length differs from history length");
    const double direction = convention == SignConvention::Descent ? -1.0 : 1.0;
    AdversarialExample ex;
    ex.epsilon_resolved = epsilon;
    ex.perturbation.resize(history.size());
    ex.perturbed_history.resize(history.size());
    for (std::size_t i = 0; i < history.size(); ++i) {
        const double s = detail::sign(g.values[i]);
        ex.perturbation[i] = s == 0.0 ? 0.0 : direction * epsilon * s;
        ex.perturbed_history[i] = history[i] + ex.perturbation[i];
    }
    ex.config_echo.convention = convention;
    return ex;
}

/// Seeds for the target and for each probe direction, derived from config.seed.
inline std::uint64_t target_seed(std::uint64_t seed) { return derive_seed({seed, 0}); }
inline std::uint64_t probe_seed(std::uint64_t seed, std::size_t direction) { return derive_seed({seed, 1 + direction}); }

/// Single-shot targeted attack. The target is Gaussian noise with the input
/// window's own mean and std; the budget is resolved against `dataset_stats`.
/// Uses n_directions + 1 queries: the base forecast is shared by all probes,
/// whose gradient estimates are averaged before the sign step.
inline AdversarialExample dga_attack(const ForecasterHandle& handle, std::span<const double> history,
                                     std::size_t horizon, const AttackConfig& config, const SeriesStats& dataset_stats) {
    config.validate();
    detail::require(horizon >= 1 && horizon <= history.size(), ErrorCode::InvalidHorizon,
                    "horizon " + std::to_string(horizon) + " must lie in [1, " + std::to_string(history.size()) + "]");
    const double epsilon = resolve_epsilon(config.epsilon, dataset_stats);
    const SeriesStats window = series_stats(history);
    const TargetSequence target = make_gwn_target(horizon, window, target_seed(config.seed));

    const ForecasterHandle counted = handle.child();
    const double base_loss = loss(counted.predict(history, horizon), target.values, config.loss);

    GradientEstimate averaged{std::vector<double>(history.size(), 0.0), base_loss, 0.0};
    for (std::size_t k = 0; k < config.n_directions; ++k) {
        const ProbeSignal probe = sample_probe(history.size(), window, config.probe_scale, probe_seed(config.seed, k));
        const GradientEstimate g = detail::probe_gradient(counted, history, target, probe, config.loss, base_loss);
        if (config.n_directions == 1) {
            averaged = g;
            break;
        }
        for (std::size_t i = 0; i < g.values.size(); ++i) averaged.values[i] += g.values[i];
        averaged.loss_at_probe += g.loss_at_probe;
    }
    if (config.n_directions > 1) {
        const double n = static_cast<double>(config.n_directions);
        for (auto& v : averaged.values) v /= n;
        averaged.loss_at_probe /= n;
    }

    AdversarialExample ex = sign_step(history, averaged, epsilon, config.convention);
    ex.target = target;
    ex.queries_used = counted.queries();
    ex.config_echo = config;
    return ex;
}

/// Noise baseline at the same budget. Clipped-Gaussian draws N(0, eps^2) and
/// clamps to [-eps, eps]; sign-matched uses eps times a Rademacher sign.
inline AdversarialExample gwn_baseline(std::span<const double> history, double epsilon, GwnMode mode,
                                       std::uint64_t seed) {
    detail::require(epsilon > 0.0, ErrorCode::InvalidArgument, "epsilon must be positive");
    AdversarialExample ex;
    ex.is_baseline = true;
    ex.epsilon_resolved = epsilon;
    ex.config_echo.gwn_mode = mode;
    ex.config_echo.seed = seed;
    ex.config_echo.epsilon = AbsoluteEpsilon{epsilon};
    ex.perturbation.resize(history.size());
    ex.perturbed_history.resize(history.size());
    auto rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, epsilon);
    for (std::size_t i = 0; i < history.size(); ++i) {
        ex.perturbation[i] = mode == GwnMode::ClippedGaussian ? std::clamp(normal(rng), -epsilon, epsilon)
                                                              : epsilon * rademacher(rng);
        ex.perturbed_history[i] = history[i] + ex.perturbation[i];
    }
    return ex;
}

/// {origin, epsilon, convention, gwn_mode?, seed, queries, perturbation, perturbed, target}
inline nlohmann::ordered_json to_json(const AdversarialExample& ex) {
    nlohmann::ordered_json j;
    j["origin"] = ex.origin;
    j["epsilon"] = ex.epsilon_resolved;
    j["convention"] = ex.is_baseline ? std::string("none") : std::string(to_string(ex.config_echo.convention));
    if (ex.is_baseline) j["gwn_mode"] = std::string(to_string(ex.config_echo.gwn_mode));
    j["seed"] = ex.config_echo.seed;
    j["queries"] = ex.queries_used;
    j["perturbation"] = ex.perturbation;
    j["perturbed"] = ex.perturbed_history;
    j["target"] = ex.target.values;
    return j;
}

} // namespace tsadv

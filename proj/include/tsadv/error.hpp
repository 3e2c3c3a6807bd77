#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tsadv {

enum class ErrorCode {
    InvalidArgument,
    FileNotFound,
    ColumnNotFound,
    ParseError,
    EmptySeries,
    EmptyInput,
    SeriesTooShort,
    InvalidHorizon,
    OracleFailure,
    HorizonTooLarge,
    SingularSystem,
    TooShort,
    InvalidAlpha,
    Timeout,
    HttpError,
    MalformedResponse,
    LengthMismatch,
    ZeroMeanReference,
    DegenerateScale,
    ZeroBaseline,
    ConstantSeries,
    NoWindows,
    InvalidRatio,
    TooFewPairs,
    IoError,
    InvalidPlan,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::ColumnNotFound: return "ColumnNotFound";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::InvalidHorizon: return "InvalidHorizon";
    case ErrorCode::OracleFailure: return "OracleFailure";
    case ErrorCode::HorizonTooLarge: return "HorizonTooLarge";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::InvalidAlpha: return "InvalidAlpha";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroMeanReference: return "ZeroMeanReference";
    case ErrorCode::DegenerateScale: return "DegenerateScale";
    case ErrorCode::ZeroBaseline: return "ZeroBaseline";
    case ErrorCode::ConstantSeries: return "ConstantSeries";
    case ErrorCode::NoWindows: return "NoWindows";
    case ErrorCode::InvalidRatio: return "InvalidRatio";
    case ErrorCode::TooFewPairs: return "TooFewPairs";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    }
    return "Unknown";
}

/// Single exception type for the library. The code identifies the failure;
/// row, HTTP status and window origin are attached where they apply.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    std::optional<std::size_t> row;
    std::optional<int> http_status;
    std::optional<std::size_t> origin_index;

private:
    ErrorCode code_;
};

inline bool is_remote_failure(ErrorCode code) noexcept {
    return code == ErrorCode::Timeout || code == ErrorCode::HttpError ||
           code == ErrorCode::MalformedResponse || code == ErrorCode::LengthMismatch;
}

namespace detail {

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

} // namespace detail
} // namespace tsadv

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brokenray {

enum class ErrorCode
{
    ParseError,
    InvalidChart,
    InvalidArgument,
    OutOfDomain,
    NotPositiveDefinite,
    ChartMismatch,
    StepFailure,
    DegenerateVelocity,
    InteriorPoint,
    EllipticFace,
    NotHyperbolic,
    NoOutgoingLift,
    NotGlancing,
    CornerGlancing,
    OutOfRange,
    EmptyFamily,
    NotAnEvent,
    MismatchedIntervals,
    NotFlat,
    EpsilonTooSmall,
    EmptySupport,
    EmptyGrid,
    NonDifferentiable,
};

constexpr std::string_view to_string(ErrorCode c)
{
    switch (c)
    {
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::InvalidChart: return "InvalidChart";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::OutOfDomain: return "OutOfDomain";
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::ChartMismatch: return "ChartMismatch";
        case ErrorCode::StepFailure: return "StepFailure";
        case ErrorCode::DegenerateVelocity: return "DegenerateVelocity";
        case ErrorCode::InteriorPoint: return "InteriorPoint";
        case ErrorCode::EllipticFace: return "EllipticFace";
        case ErrorCode::NotHyperbolic: return "NotHyperbolic";
        case ErrorCode::NoOutgoingLift: return "NoOutgoingLift";
        case ErrorCode::NotGlancing: return "NotGlancing";
        case ErrorCode::CornerGlancing: return "CornerGlancing";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::EmptyFamily: return "EmptyFamily";
        case ErrorCode::NotAnEvent: return "NotAnEvent";
        case ErrorCode::MismatchedIntervals: return "MismatchedIntervals";
        case ErrorCode::NotFlat: return "NotFlat";
        case ErrorCode::EpsilonTooSmall: return "EpsilonTooSmall";
        case ErrorCode::EmptySupport: return "EmptySupport";
        case ErrorCode::EmptyGrid: return "EmptyGrid";
        case ErrorCode::NonDifferentiable: return "NonDifferentiable";
    }
    return "Unknown";
}

/// Library exception; `code()` identifies the failure class.
class Error : public std::runtime_error
{
  public:
    Error(ErrorCode code, std::string const& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

}  // namespace brokenray

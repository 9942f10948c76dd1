#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>

namespace cctsens {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class ErrorCode {
    ContractViolation,
    NoEquilibriumFound,
    SingularJacobian,
    StiffnessFailure,
    NumericalBlowup,
    OutOfRange,
    InconclusiveRun,
    NoFiniteCct,
    BracketCollapse,
    EmptyCombinedBoundary,
    TangentialIntersection,
    DegenerateGeometry,
    UnsupportedMode,
    MissingSecondDerivatives,
    ModeChangedAcrossStep,
    ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ContractViolation: return "ContractViolation";
        case ErrorCode::NoEquilibriumFound: return "NoEquilibriumFound";
        case ErrorCode::SingularJacobian: return "SingularJacobian";
        case ErrorCode::StiffnessFailure: return "StiffnessFailure";
        case ErrorCode::NumericalBlowup: return "NumericalBlowup";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::InconclusiveRun: return "InconclusiveRun";
        case ErrorCode::NoFiniteCct: return "NoFiniteCct";
        case ErrorCode::BracketCollapse: return "BracketCollapse";
        case ErrorCode::EmptyCombinedBoundary: return "EmptyCombinedBoundary";
        case ErrorCode::TangentialIntersection: return "TangentialIntersection";
        case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
        case ErrorCode::UnsupportedMode: return "UnsupportedMode";
        case ErrorCode::MissingSecondDerivatives: return "MissingSecondDerivatives";
        case ErrorCode::ModeChangedAcrossStep: return "ModeChangedAcrossStep";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw Error(ErrorCode::ContractViolation, what);
}

}  // namespace cctsens

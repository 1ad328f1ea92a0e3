#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ladlag {

enum class Errc {
    NonStochasticProbabilities,
    ZeroProbabilityBranch,
    LevelMismatch,
    EnumerationTooLarge,
    WindowInverted,
    DimensionMismatch,
    MarkOutsideAlphabet,
    DriverNotOrthogonal,
    DriverNotMartingale,
    DriverNotDominated,
    DegenerateAlpha,
    ShapeMismatch,
    BadBetaPair,
    NonpositiveBeta,
    BadGammaBeta,
    OutOfDomain,
    InfiniteTerminalObstacle,
    PhiExceeded,
    NotContractive,
    MaxIterExceeded,
    VariantDependenceMismatch,
    MarkAlphabetMismatch,
    UnsupportedGeneratorClass,
    JumpConditionViolated,
    HypothesisViolated,
    SpecInfeasible,
    SchemaError,
};

constexpr std::string_view to_string(Errc c) noexcept {
    switch (c) {
        case Errc::NonStochasticProbabilities: return "NonStochasticProbabilities";
        case Errc::ZeroProbabilityBranch: return "ZeroProbabilityBranch";
        case Errc::LevelMismatch: return "LevelMismatch";
        case Errc::EnumerationTooLarge: return "EnumerationTooLarge";
        case Errc::WindowInverted: return "WindowInverted";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::MarkOutsideAlphabet: return "MarkOutsideAlphabet";
        case Errc::DriverNotOrthogonal: return "DriverNotOrthogonal";
        case Errc::DriverNotMartingale: return "DriverNotMartingale";
        case Errc::DriverNotDominated: return "DriverNotDominated";
        case Errc::DegenerateAlpha: return "DegenerateAlpha";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::BadBetaPair: return "BadBetaPair";
        case Errc::NonpositiveBeta: return "NonpositiveBeta";
        case Errc::BadGammaBeta: return "BadGammaBeta";
        case Errc::OutOfDomain: return "OutOfDomain";
        case Errc::InfiniteTerminalObstacle: return "InfiniteTerminalObstacle";
        case Errc::PhiExceeded: return "PhiExceeded";
        case Errc::NotContractive: return "NotContractive";
        case Errc::MaxIterExceeded: return "MaxIterExceeded";
        case Errc::VariantDependenceMismatch: return "VariantDependenceMismatch";
        case Errc::MarkAlphabetMismatch: return "MarkAlphabetMismatch";
        case Errc::UnsupportedGeneratorClass: return "UnsupportedGeneratorClass";
        case Errc::JumpConditionViolated: return "JumpConditionViolated";
        case Errc::HypothesisViolated: return "HypothesisViolated";
        case Errc::SpecInfeasible: return "SpecInfeasible";
        case Errc::SchemaError: return "SchemaError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace ladlag

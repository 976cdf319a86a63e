#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wavesim {

enum class Errc {
    InvalidGrid,
    InvalidOrder,
    OutOfDomain,
    DuplicateKnot,
    InvalidSpan,
    AlreadyRefined,
    LevelCapExceeded,
    GridMismatch,
    ParseError,
    UnknownDevice,
    InvalidParam,
    BuildError,
    NoDcConvergence,
    StepSizeUnderflow,
    OutOfRange,
    SingularSystem,
    NoConvergence,
    SplitUnderflow,
};

[[nodiscard]] constexpr std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::InvalidGrid: return "InvalidGrid";
        case Errc::InvalidOrder: return "InvalidOrder";
        case Errc::OutOfDomain: return "OutOfDomain";
        case Errc::DuplicateKnot: return "DuplicateKnot";
        case Errc::InvalidSpan: return "InvalidSpan";
        case Errc::AlreadyRefined: return "AlreadyRefined";
        case Errc::LevelCapExceeded: return "LevelCapExceeded";
        case Errc::GridMismatch: return "GridMismatch";
        case Errc::ParseError: return "ParseError";
        case Errc::UnknownDevice: return "UnknownDevice";
        case Errc::InvalidParam: return "InvalidParam";
        case Errc::BuildError: return "BuildError";
        case Errc::NoDcConvergence: return "NoDcConvergence";
        case Errc::StepSizeUnderflow: return "StepSizeUnderflow";
        case Errc::OutOfRange: return "OutOfRange";
        case Errc::SingularSystem: return "SingularSystem";
        case Errc::NoConvergence: return "NoConvergence";
        case Errc::SplitUnderflow: return "SplitUnderflow";
    }
    return "Unknown";
}

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-checkable code next to the human-readable message.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    [[nodiscard]] Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// Netlist errors additionally remember where in the source text they occurred.
class ParseError : public Error {
public:
    ParseError(Errc code, int line, int column, const std::string& message)
        : Error(code, "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                          message),
          line_(line),
          column_(column) {}

    [[nodiscard]] int line() const noexcept { return line_; }
    [[nodiscard]] int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

/// Failure of a time-domain solver at a known simulation time.
class SolverError : public Error {
public:
    SolverError(Errc code, double time, double residual_norm, const std::string& message)
        : Error(code, message), time_(time), residual_norm_(residual_norm) {}

    [[nodiscard]] double time() const noexcept { return time_; }
    [[nodiscard]] double residual_norm() const noexcept { return residual_norm_; }

private:
    double time_;
    double residual_norm_;
};

}  // namespace wavesim

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace zinflate {

enum class ErrorKind {
    // tps_basis
    DuplicateLocations,
    RankDeficientDelta,
    EigenFailure,
    RankOutOfRange,
    NearZeroEigenvalue,
    // lowrank_cov
    SingularGram,
    SingularCore,
    DimensionMismatch,
    // gee_fit
    DegenerateData,
    SingularJacobian,
    NotConverged,
    // inference
    TooManyBlocks,
    InsufficientBlocks,
    EmptyInput,
    // simgen
    FactorizationFailure,
    // cli
    MissingColumn,
    NonIntegerCount,
    NonFiniteValue,
    ZeroVariance,
    InvalidArgument,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Broad category used to map failures onto process exit codes.
enum class ErrorCategory { Usage, Data, Numerical };

ErrorCategory category_of(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
    [[nodiscard]] ErrorCategory category() const noexcept { return category_of(kind_); }

private:
    ErrorKind kind_;
};

}  // namespace zinflate

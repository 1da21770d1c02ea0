#include "zinflate/error.hpp"

namespace zinflate {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::DuplicateLocations: return "DuplicateLocations";
    case ErrorKind::RankDeficientDelta: return "RankDeficientDelta";
    case ErrorKind::EigenFailure: return "EigenFailure";
    case ErrorKind::RankOutOfRange: return "RankOutOfRange";
    case ErrorKind::NearZeroEigenvalue: return "NearZeroEigenvalue";
    case ErrorKind::SingularGram: return "SingularGram";
    case ErrorKind::SingularCore: return "SingularCore";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DegenerateData: return "DegenerateData";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::TooManyBlocks: return "TooManyBlocks";
    case ErrorKind::InsufficientBlocks: return "InsufficientBlocks";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::FactorizationFailure: return "FactorizationFailure";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonIntegerCount: return "NonIntegerCount";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

ErrorCategory category_of(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument:
        return ErrorCategory::Usage;
    case ErrorKind::DuplicateLocations:
    case ErrorKind::RankDeficientDelta:
    case ErrorKind::DegenerateData:
    case ErrorKind::MissingColumn:
    case ErrorKind::NonIntegerCount:
    case ErrorKind::NonFiniteValue:
    case ErrorKind::ZeroVariance:
    case ErrorKind::TooManyBlocks:
    case ErrorKind::EmptyInput:
    case ErrorKind::DimensionMismatch:
    case ErrorKind::Io:
        return ErrorCategory::Data;
    default:
        return ErrorCategory::Numerical;
    }
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

}  // namespace zinflate

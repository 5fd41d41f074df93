#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scent {

enum class ErrorCode {
    InvalidArgument,
    DimensionMismatch,
    MissingArchetype,
    ScaleDegenerate,
    SingularCovariance,
    NumericallySingular,
    NonFiniteFeature,
    AllPruned,
    LayerAlreadyObserved,
    OutOfOrderLayer,
    ZeroEvidence,
    InsufficientData,
    MissingProfile,
    WrongStage,
    NonFiniteRating,
    RatingOutOfRange,
    EmptyCandidates,
    GridTooCoarse,
    LengthMismatch,
    SchemaViolation,
    NotFound,
    Conflict,
    Io,
};

/// Machine-readable snake_case name, used in HTTP bodies and CLI error JSON.
constexpr std::string_view code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::MissingArchetype: return "missing_archetype";
    case ErrorCode::ScaleDegenerate: return "scale_degenerate";
    case ErrorCode::SingularCovariance: return "singular_covariance";
    case ErrorCode::NumericallySingular: return "numerically_singular";
    case ErrorCode::NonFiniteFeature: return "non_finite_feature";
    case ErrorCode::AllPruned: return "all_pruned";
    case ErrorCode::LayerAlreadyObserved: return "layer_already_observed";
    case ErrorCode::OutOfOrderLayer: return "out_of_order_layer";
    case ErrorCode::ZeroEvidence: return "zero_evidence";
    case ErrorCode::InsufficientData: return "insufficient_data";
    case ErrorCode::MissingProfile: return "missing_profile";
    case ErrorCode::WrongStage: return "wrong_stage";
    case ErrorCode::NonFiniteRating: return "non_finite_rating";
    case ErrorCode::RatingOutOfRange: return "rating_out_of_range";
    case ErrorCode::EmptyCandidates: return "empty_candidates";
    case ErrorCode::GridTooCoarse: return "grid_too_coarse";
    case ErrorCode::LengthMismatch: return "length_mismatch";
    case ErrorCode::SchemaViolation: return "schema_violation";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::Io: return "io_error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    [[nodiscard]] std::string_view name() const noexcept { return code_name(code_); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        fail(code, message);
    }
}

}  // namespace scent

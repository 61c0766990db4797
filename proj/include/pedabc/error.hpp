#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pedabc {

enum class ErrorKind {
    invalid_geometry,
    no_path,
    out_of_domain,
    placement_failure,
    insufficient_cells,
    numerical_blowup,
    unavailable,
    shape_mismatch,
    invalid_prior,
    invalid_config,
    empty_posterior,
    undefined_bf,
    parse_error,
    missing_framerate,
    missing_reference,
    incompatible_runs,
    io_error,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_geometry: return "invalid-geometry";
    case ErrorKind::no_path: return "no-path";
    case ErrorKind::out_of_domain: return "out-of-domain";
    case ErrorKind::placement_failure: return "placement-failure";
    case ErrorKind::insufficient_cells: return "insufficient-cells";
    case ErrorKind::numerical_blowup: return "numerical-blowup";
    case ErrorKind::unavailable: return "unavailable";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::invalid_prior: return "invalid-prior";
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::empty_posterior: return "empty-posterior";
    case ErrorKind::undefined_bf: return "undefined-bf";
    case ErrorKind::parse_error: return "parse-error";
    case ErrorKind::missing_framerate: return "missing-framerate";
    case ErrorKind::missing_reference: return "missing-reference";
    case ErrorKind::incompatible_runs: return "incompatible-runs";
    case ErrorKind::io_error: return "io-error";
    }
    return "unknown";
}

/// Exception carrying a machine-checkable kind next to the message.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// True for errors caused by user input (config, files, arguments) rather than a failed run.
inline bool is_validation_error(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::numerical_blowup:
    case ErrorKind::io_error:
        return false;
    default:
        return true;
    }
}

} // namespace pedabc

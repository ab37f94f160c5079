// Typed errors shared by every module. The CLI maps ErrorCode to the
// single-line machine-parseable code it prints on exit.
#pragma once

#include <stdexcept>
#include <string>

namespace asp {

enum class ErrorCode {
    dimension_mismatch,
    invalid_parameter,
    index_out_of_range,
    singular_input,
    contract_violation,
    numeric_error,
    parse_error,
    format_error,
    coverage_error,
    io_error,
    generation_error,
    vocabulary_error,
    range_error,
    network_error,
    empty_feasible_set,
    checkpoint_corrupt,
    version_mismatch,
    config_error,
};

inline const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::dimension_mismatch: return "dimension_mismatch";
        case ErrorCode::invalid_parameter:  return "invalid_parameter";
        case ErrorCode::index_out_of_range: return "index_out_of_range";
        case ErrorCode::singular_input:     return "singular_input";
        case ErrorCode::contract_violation: return "contract_violation";
        case ErrorCode::numeric_error:      return "numeric_error";
        case ErrorCode::parse_error:        return "parse_error";
        case ErrorCode::format_error:       return "format_error";
        case ErrorCode::coverage_error:     return "coverage_error";
        case ErrorCode::io_error:           return "io_error";
        case ErrorCode::generation_error:   return "generation_error";
        case ErrorCode::vocabulary_error:   return "vocabulary_error";
        case ErrorCode::range_error:        return "range_error";
        case ErrorCode::network_error:      return "network_error";
        case ErrorCode::empty_feasible_set: return "empty_feasible_set";
        case ErrorCode::checkpoint_corrupt: return "checkpoint_corrupt";
        case ErrorCode::version_mismatch:   return "version_mismatch";
        case ErrorCode::config_error:       return "config_error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace asp

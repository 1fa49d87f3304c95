// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace harmprobe {

/// Failure categories shared by every module. The CLI maps them onto exit
/// codes (see tools/harmprobe.cpp).
enum class ErrorCode {
    io,                 // open/read/write failure
    bad_magic,          // file does not start with "ACTV1"
    unsupported_version,
    malformed_header,   // header JSON unparsable or missing/ill-typed keys
    invalid_dimension,  // dim == 0
    unknown_dtype,
    length_mismatch,    // payload size != rows * dim * 4, or label/source count != rows
    non_finite,         // NaN/Inf in a matrix or score
    shape_mismatch,     // dimension disagreement between operands
    degenerate,         // zero separation, zero variance, zero-norm centroid or row
    invalid_argument,   // precondition violated by a caller-supplied value
    config,             // experiment configuration or manifest problem
    missing_cache,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace harmprobe

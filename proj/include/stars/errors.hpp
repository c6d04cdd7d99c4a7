#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stars {

enum class ErrorCode {
    DegenerateDistribution,
    DomainMismatch,
    InvalidMdp,
    EmptyTarget,
    EmptyWinningRegion,
    ConflictUnresolvable,
    OutsideCombinedRegion,
    NoSafeAction,
    InvalidParams,
    GenerationExhausted,
    NoConvergence,
    EmptyTrace,
    TooLarge,
    PreconditionViolation,
    ProtocolError,
    ParseError,
    UnknownSession,
    Internal,
};

/// Stable wire name of an error code, e.g. "OutsideCombinedRegion".
std::string_view to_string(ErrorCode code);

/// The single exception type thrown by the library; the code is part of the
/// public contract (it is echoed verbatim in server error replies).
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace stars

#include "stars/errors.hpp"

namespace stars {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::DegenerateDistribution: return "DegenerateDistribution";
    case ErrorCode::DomainMismatch: return "DomainMismatch";
    case ErrorCode::InvalidMdp: return "InvalidMdp";
    case ErrorCode::EmptyTarget: return "EmptyTarget";
    case ErrorCode::EmptyWinningRegion: return "EmptyWinningRegion";
    case ErrorCode::ConflictUnresolvable: return "ConflictUnresolvable";
    case ErrorCode::OutsideCombinedRegion: return "OutsideCombinedRegion";
    case ErrorCode::NoSafeAction: return "NoSafeAction";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::GenerationExhausted: return "GenerationExhausted";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::Internal: return "Internal";
    }
    return "Internal";
}

} // namespace stars

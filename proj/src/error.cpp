#include "didlink/error.hpp"

namespace didlink {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MalformedDid: return "malformed_did";
    case ErrorCode::InvalidKey: return "invalid_key";
    case ErrorCode::UnsupportedMethod: return "unsupported_method";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::CacheMiss: return "cache_miss";
    case ErrorCode::RegistryUnavailable: return "registry_unavailable";
    case ErrorCode::MalformedDocument: return "malformed_document";
    case ErrorCode::AlreadyAnchored: return "already_anchored";
    case ErrorCode::BadSignature: return "bad_signature";
    case ErrorCode::VersionConflict: return "version_conflict";
    case ErrorCode::UnauthorizedKey: return "unauthorized_key";
    case ErrorCode::DuplicateList: return "duplicate_list";
    case ErrorCode::IndexOutOfRange: return "index_out_of_range";
    case ErrorCode::BindFailure: return "bind_failure";
    case ErrorCode::CorruptLog: return "corrupt_log";
    case ErrorCode::OversizeDid: return "oversize_did";
    case ErrorCode::InvalidValidity: return "invalid_validity";
    case ErrorCode::NotACa: return "not_a_ca";
    case ErrorCode::NoDidPresent: return "no_did_present";
    case ErrorCode::AmbiguousDid: return "ambiguous_did";
    case ErrorCode::Malformed: return "malformed";
    case ErrorCode::OversizePayload: return "oversize_payload";
    case ErrorCode::MalformedPayload: return "malformed_payload";
    case ErrorCode::NoMatchingRow: return "no_matching_row";
    case ErrorCode::HandshakeRejected: return "handshake_rejected";
    case ErrorCode::HandshakeFailed: return "handshake_failed";
    case ErrorCode::BindingInvalid: return "binding_invalid";
    case ErrorCode::ResolutionFailed: return "resolution_failed";
    case ErrorCode::TransportError: return "transport_error";
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::UnsupportedVersion: return "unsupported_version";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::ProtocolViolation: return "protocol_violation";
    case ErrorCode::VerificationFailed: return "verification_failed";
    case ErrorCode::PeerRefused: return "peer_refused";
    case ErrorCode::Timeout: return "timeout";
    case ErrorCode::EmptyClaims: return "empty_claims";
    case ErrorCode::UnknownClaim: return "unknown_claim";
    case ErrorCode::BadIssuerSignature: return "bad_issuer_signature";
    case ErrorCode::DigestMismatch: return "digest_mismatch";
    case ErrorCode::Expired: return "expired";
    case ErrorCode::Revoked: return "revoked";
    case ErrorCode::IssuerNotAccepted: return "issuer_not_accepted";
    case ErrorCode::HolderBindingRequired: return "holder_binding_required";
    case ErrorCode::HolderBindingInvalid: return "holder_binding_invalid";
    case ErrorCode::DecryptFailed: return "decrypt_failed";
    case ErrorCode::UnknownKey: return "unknown_key";
    case ErrorCode::ScenarioInfeasible: return "scenario_infeasible";
    case ErrorCode::ServiceUnavailable: return "service_unavailable";
    case ErrorCode::IoFailure: return "io_failure";
    case ErrorCode::UsageError: return "usage_error";
    }
    return "unknown";
}

std::optional<ErrorCode> error_code_from_string(std::string_view text) noexcept {
    for (int i = 0; i <= static_cast<int>(ErrorCode::UsageError); ++i) {
        auto code = static_cast<ErrorCode>(i);
        if (to_string(code) == text) return code;
    }
    return std::nullopt;
}

} // namespace didlink

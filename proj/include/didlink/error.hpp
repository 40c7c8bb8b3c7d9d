#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace didlink {

/// Every failure surfaced by the library carries one of these codes. The
/// string form (see to_string) is stable and is what the CLI prints.
enum class ErrorCode {
    // did_core
    MalformedDid,
    InvalidKey,
    UnsupportedMethod,
    NotFound,
    CacheMiss,
    RegistryUnavailable,
    MalformedDocument,
    // vdr_ledger
    AlreadyAnchored,
    BadSignature,
    VersionConflict,
    UnauthorizedKey,
    DuplicateList,
    IndexOutOfRange,
    BindFailure,
    CorruptLog,
    // cert_kit
    OversizeDid,
    InvalidValidity,
    NotACa,
    NoDidPresent,
    AmbiguousDid,
    Malformed,
    // negotiation
    OversizePayload,
    MalformedPayload,
    NoMatchingRow,
    // channel
    HandshakeRejected,
    HandshakeFailed,
    BindingInvalid,
    ResolutionFailed,
    TransportError,
    // identity_layer
    BadMagic,
    UnsupportedVersion,
    Truncated,
    ProtocolViolation,
    VerificationFailed,
    PeerRefused,
    Timeout,
    // vc_sdjwt
    EmptyClaims,
    UnknownClaim,
    BadIssuerSignature,
    DigestMismatch,
    Expired,
    Revoked,
    IssuerNotAccepted,
    HolderBindingRequired,
    HolderBindingInvalid,
    // bench
    DecryptFailed,
    UnknownKey,
    ScenarioInfeasible,
    ServiceUnavailable,
    IoFailure,
    // cli
    UsageError,
};

std::string_view to_string(ErrorCode code) noexcept;
std::optional<ErrorCode> error_code_from_string(std::string_view text) noexcept;

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string &detail = {})
        : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                            : std::string(to_string(code)) + ": " + detail),
          code_(code), detail_(detail) {}

    ErrorCode code() const noexcept { return code_; }
    std::string_view code_string() const noexcept { return to_string(code_); }
    /// Free-form context; for VerificationFailed and HandshakeRejected this is
    /// the underlying reason code (e.g. "issuer_not_accepted").
    const std::string &detail() const noexcept { return detail_; }

  private:
    ErrorCode code_;
    std::string detail_;
};

} // namespace didlink

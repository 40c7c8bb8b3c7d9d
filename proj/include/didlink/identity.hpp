#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "didlink/channel.hpp"
#include "didlink/vc.hpp"

namespace didlink::identity {

struct PresentationRequest {
    std::string request_id;
    std::vector<std::string> required_claims;
    std::vector<Did> accepted_issuers;
    std::string nonce; // base64url of 16 random bytes
    /// Audience the holder binding must name (the verifier's channel DID).
    std::optional<std::string> domain;

    /// Fresh id and nonce.
    static PresentationRequest make(std::vector<std::string> required_claims, std::vector<Did> accepted_issuers = {});

    /// DIF Presentation Exchange style presentation_definition.
    Json to_json() const;
    /// Throws ProtocolViolation.
    static PresentationRequest from_json(const Json &json);
};

struct IdentificationResult {
    Json peer_claims = Json::object();
    Did peer_subject_did;
    bool holder_binding_checked = false;
    double duration_ms = 0;
};

enum class Mode { client_first, server_first, parallel };
std::string_view to_string(Mode mode) noexcept;
/// Throws UsageError.
Mode mode_from_string(std::string_view text);

struct Config {
    /// Credentials this side may present, with the key used for holder binding.
    std::vector<vc::SdJwtCredential> credentials;
    const KeyPair *holder_key = nullptr;
    std::string holder_key_id = "#key-1";
    /// What this side asks of the peer; none means the peer is not asked.
    std::optional<PresentationRequest> request;
    Mode mode = Mode::parallel;

    std::shared_ptr<DidResolver> resolver;
    CachePolicy cache_policy;
    std::shared_ptr<StatusChecker> status;
    /// This side's channel DID; when set, holder bindings must name it.
    std::optional<Did> self_did;
    ClockFn clock = &didlink::now;
    std::chrono::milliseconds timeout{15000};
};

struct Outcome {
    /// Verified answer to this side's request.
    std::optional<IdentificationResult> peer;
    /// Whether the peer accepted what this side presented (absent when it
    /// did not ask).
    std::optional<bool> presented_accepted;
    std::optional<std::string> presented_rejection;
    /// From the end of this side's handshake until both flows completed.
    double duration_ms = 0;
};

/// Runs both identification flows over an established session. Throws
/// VerificationFailed (detail = the verifier's reason code), PeerRefused,
/// ProtocolViolation, Timeout, TransportError.
Outcome run_identification(channel::SecureSession &session, const Config &config);

} // namespace didlink::identity

#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "didlink/crypto.hpp"
#include "didlink/did.hpp"
#include "didlink/resolver.hpp"
#include "didlink/status.hpp"
#include "didlink/time.hpp"

namespace didlink::vc {

/// One salted claim. The encoded form is base64url(canonical [salt, name, value]).
struct Disclosure {
    std::string salt; // base64url of 16 random bytes
    std::string name;
    Json value;

    std::string encoded() const;
    /// base64url(sha256(encoded())).
    std::string digest() const;
    /// Throws Malformed.
    static Disclosure decode(std::string_view encoded);

    friend bool operator==(const Disclosure &a, const Disclosure &b) {
        return a.salt == b.salt && a.name == b.name && a.value == b.value;
    }
};

struct StatusRef {
    std::string list_id;
    std::uint32_t index = 0;
    friend bool operator==(const StatusRef &, const StatusRef &) = default;
};

struct ValidityWindow {
    Timestamp not_before;
    Timestamp not_after;
};

/// Issuer-signed body plus every disclosure, as held by the subject.
struct SdJwtCredential {
    Did issuer;
    Did subject;
    std::vector<std::string> claim_digests; // sorted
    std::vector<Disclosure> disclosures;
    ValidityWindow validity;
    std::optional<StatusRef> status;
    std::string issuer_key_id; // DID URL of the signing key
    Bytes signature;

    /// The signed object: {iss, sub, _sd, _sd_alg, nbf, exp, kid[, status]}.
    Json body() const;
    std::vector<std::string> claim_names() const;
    /// Compact form with all disclosures and no holder binding.
    std::string serialize() const;
    static SdJwtCredential parse(std::string_view compact);
};

struct HolderBinding {
    std::string nonce;
    std::string audience;
    Timestamp issued_at;
    std::string key_id; // DID URL of the holder's authentication key
    std::string sd_hash;
    Bytes signature;

    Json payload() const;
};

struct Presentation {
    SdJwtCredential credential; // disclosures restricted to the disclosed subset
    std::optional<HolderBinding> holder_binding;

    /// b64u(signed body) . b64u(disclosures) . b64u(binding or empty)
    std::string serialize() const;
    /// Throws Malformed.
    static Presentation parse(std::string_view compact);
};

/// Throws EmptyClaims. issuer_key_id names the assertion key in the issuer's
/// document ("#key-1" or a full DID URL).
SdJwtCredential issue(const KeyPair &issuer_key, const Did &issuer, const Did &subject, const Json &claims,
                      const ValidityWindow &validity, const std::optional<StatusRef> &status = std::nullopt,
                      const std::string &issuer_key_id = "#key-1");

struct HolderProof {
    const KeyPair *key = nullptr;
    std::string key_id = "#key-1";
    std::string nonce;
    std::string audience;
    Timestamp at = didlink::now();
};

/// Throws UnknownClaim.
Presentation derive_presentation(const SdJwtCredential &credential, const std::vector<std::string> &disclose,
                                 const std::optional<HolderProof> &holder = std::nullopt);

enum class ClaimStatus { valid, expired, revoked };
std::string_view to_string(ClaimStatus status) noexcept;

struct VerifiedClaims {
    Json claims = Json::object();
    Did issuer;
    Did subject;
    ClaimStatus status = ClaimStatus::valid;
    bool holder_binding_checked = false;
};

struct VerifyPolicy {
    /// The DID authenticated on the channel; holder binding is waived when it
    /// equals the credential subject.
    std::optional<Did> expected_subject;
    /// Empty accepts any issuer.
    std::vector<Did> accepted_issuers;
    std::optional<std::string> nonce;
    std::optional<std::string> audience;
    Timestamp now = didlink::now();
    std::chrono::seconds clock_skew{60};
    CachePolicy cache_policy;
};

/// Checks run in order: issuer accepted, issuer resolution, signature,
/// digests, validity, status, holder binding. Throws IssuerNotAccepted,
/// ResolutionFailed, BadIssuerSignature, DigestMismatch, Expired, Revoked,
/// HolderBindingRequired, HolderBindingInvalid, Malformed.
VerifiedClaims verify_presentation(const Presentation &presentation, const VerifyPolicy &policy,
                                   DidResolver &resolver, StatusChecker *status_checker);

/// Throws NotFound for unknown lists.
CredentialStatus check_status(const StatusRef &ref, StatusChecker &checker);

} // namespace didlink::vc

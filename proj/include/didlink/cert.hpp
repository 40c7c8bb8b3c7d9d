#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "didlink/crypto.hpp"
#include "didlink/did.hpp"
#include "didlink/time.hpp"

namespace didlink {

enum class CertKind { did_self_issued, derived_self_issued, ca_issued, ca_root };
std::string_view to_string(CertKind kind) noexcept;

struct Validity {
    Timestamp not_before;
    Timestamp not_after;

    /// [start - 1 minute, start + duration).
    static Validity starting(Timestamp start, std::chrono::seconds duration);
    static Validity days(int n) { return starting(didlink::now(), std::chrono::hours(24) * n); }
};

/// A key pair plus the certificate it backs. chain_der holds the issuing root
/// for ca_issued bundles and is empty otherwise.
struct CertBundle {
    CertKind kind = CertKind::did_self_issued;
    Bytes certificate_der;
    std::vector<Bytes> chain_der;
    KeyPair key;
    std::optional<Did> did;

    std::string certificate_pem() const;
    /// Private key is only included when asked for.
    Json to_json(bool include_private_key) const;
    static CertBundle from_json(const Json &json);
    void save(const std::string &path) const;
    static CertBundle load(const std::string &path);
};

inline KeyPair generate_keypair(KeyType type) { return KeyPair::generate(type); }

/// Self-issued certificate with the DID as its only SAN URI and CN "did-link".
/// Throws InvalidValidity for an empty interval, OversizeDid when the DID
/// cannot be encoded.
CertBundle make_did_certificate(const Did &did, const KeyPair &key, const Validity &validity);

/// base58 of the first 20 bytes of sha256(public key).
std::string derived_identifier(ByteView public_key);
CertBundle make_derived_id_certificate(const KeyPair &key, const Validity &validity);

CertBundle make_ca_root(const std::string &name, const Validity &validity = Validity::days(3650),
                        KeyType key_type = KeyType::Ed25519);
/// Leaf for subject_name (CN and DNS SAN), signed by root. Throws NotACa
/// unless root.kind == ca_root.
CertBundle issue_ca_certificate(const CertBundle &root, const std::string &subject_name, const KeyPair &key,
                                const Validity &validity);

/// Self-signed leaf with arbitrary SAN URIs, for fixtures.
Bytes make_self_issued_certificate(const KeyPair &key, const std::string &common_name,
                                   const std::vector<std::string> &san_uris, const Validity &validity);

/// Throws Malformed (not X.509), NoDidPresent, AmbiguousDid.
Did extract_did(ByteView certificate_der);
Did extract_did(X509 *cert);

enum class BindingReason { ok, did_mismatch, key_not_in_document, expired_certificate, malformed };
std::string_view to_string(BindingReason reason) noexcept;

struct BindingVerdict {
    bool valid = false;
    std::optional<std::string> matched_method_id;
    BindingReason reason = BindingReason::malformed;
};

struct BindingOptions {
    std::chrono::seconds clock_skew{60};
    /// Additionally verify the certificate's self-signature.
    bool strict = false;
};

/// Checks that the certificate's DID is the document's id, that its public key
/// is an authentication key of the document and that now lies within the
/// validity window. Throws Malformed only for undecodable input.
BindingVerdict validate_did_binding(ByteView certificate_der, const DidDocument &document, Timestamp now,
                                    const BindingOptions &options = {});
BindingVerdict validate_did_binding(X509 *cert, const DidDocument &document, Timestamp now,
                                    const BindingOptions &options = {});

struct CertificateInfo {
    std::string subject_cn;
    std::string issuer_cn;
    Timestamp not_before;
    Timestamp not_after;
    std::vector<std::string> san_uris;
    std::vector<std::string> san_dns;
    KeyType key_type = KeyType::Ed25519;
    Bytes public_key;
    bool is_ca = false;
    bool self_issued = false;

    Json to_json() const;
};
CertificateInfo inspect_certificate(ByteView certificate_der);
CertificateInfo inspect_certificate(X509 *cert);

/// Standard path validation of leaf (+ intermediates) against trust roots at
/// the given time. Returns the verifier's error string on failure.
std::optional<std::string> verify_chain(ByteView leaf_der, const std::vector<Bytes> &intermediates,
                                        const std::vector<Bytes> &roots, Timestamp at);

namespace x509 {
ossl::X509Ptr parse_der(ByteView der);
Bytes to_der(const X509 *cert);
std::string der_to_pem(ByteView der);
/// Throws Malformed.
Bytes pem_to_der(std::string_view pem);
} // namespace x509

} // namespace didlink

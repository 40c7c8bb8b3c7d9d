#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "didlink/canonical_json.hpp"
#include "didlink/codec.hpp"
#include "didlink/crypto.hpp"
#include "didlink/time.hpp"

namespace didlink {

/// A method-qualified identifier, `did:<method>:<subject_id>`.
class Did {
  public:
    /// Throws Error(MalformedDid) on anything outside the grammar: the method
    /// is lowercase ASCII letters/digits, the subject is non-empty and free of
    /// whitespace and control characters.
    static Did parse(std::string_view text);

    const std::string &method() const noexcept { return method_; }
    const std::string &subject_id() const noexcept { return subject_id_; }
    const std::string &full() const noexcept { return full_; }

    friend bool operator==(const Did &a, const Did &b) { return a.full_ == b.full_; }
    friend bool operator<(const Did &a, const Did &b) { return a.full_ < b.full_; }

  private:
    std::string method_;
    std::string subject_id_;
    std::string full_;
};

inline Did parse_did(std::string_view text) { return Did::parse(text); }
bool is_did(std::string_view text) noexcept;

enum class Purpose : std::uint8_t { authentication = 1, assertion = 2, key_agreement = 4 };

class Purposes {
  public:
    constexpr Purposes() = default;
    constexpr Purposes(std::initializer_list<Purpose> list) {
        for (auto p : list) bits_ |= static_cast<std::uint8_t>(p);
    }
    constexpr void add(Purpose p) { bits_ |= static_cast<std::uint8_t>(p); }
    constexpr bool has(Purpose p) const { return (bits_ & static_cast<std::uint8_t>(p)) != 0; }
    constexpr bool empty() const { return bits_ == 0; }
    friend constexpr bool operator==(Purposes, Purposes) = default;

  private:
    std::uint8_t bits_ = 0;
};

struct VerificationMethod {
    std::string id; // fragment, "#..."
    KeyType key_type = KeyType::Ed25519;
    Bytes public_key; // canonical form (P-256 compressed)
    Purposes purposes;

    friend bool operator==(const VerificationMethod &, const VerificationMethod &) = default;
};

/// publicKeyMultibase form: 'z' + base58btc(multicodec prefix + key).
std::string encode_multibase_key(KeyType type, ByteView public_key);
std::pair<KeyType, Bytes> decode_multibase_key(std::string_view text);

class DidDocument {
  public:
    DidDocument(Did id, std::vector<VerificationMethod> methods, std::uint32_t version, Timestamp updated_at);

    const Did &id() const noexcept { return id_; }
    const std::vector<VerificationMethod> &verification_methods() const noexcept { return methods_; }
    std::uint32_t version() const noexcept { return version_; }
    Timestamp updated_at() const noexcept { return updated_at_; }

    /// Accepts "#frag", "frag" or "did:...#frag".
    const VerificationMethod *find_method(std::string_view key_id) const;
    /// First method holding exactly these key bytes for the given purpose.
    const VerificationMethod *find_key(KeyType type, ByteView public_key, Purpose purpose) const;

    Json to_json() const;
    /// Throws Error(MalformedDocument) on schema or invariant violations.
    static DidDocument from_json(const Json &json);
    std::string canonical() const { return didlink::canonical(to_json()); }

    friend bool operator==(const DidDocument &a, const DidDocument &b) { return a.canonical() == b.canonical(); }

  private:
    Did id_;
    std::vector<VerificationMethod> methods_;
    std::uint32_t version_;
    Timestamp updated_at_;
};

/// True when the key bytes form a usable Ed25519 point (on the curve, canonical,
/// not of small order).
bool is_valid_ed25519_key(ByteView public_key) noexcept;

/// did:key from an Ed25519 key. The document is a pure function of the key.
std::pair<Did, DidDocument> make_key_did(ByteView ed25519_public_key);
/// did:peer:0 flavour of the same derivation.
std::pair<Did, DidDocument> make_peer_did(ByteView ed25519_public_key);
/// Inverse of make_key_did / make_peer_did. Throws UnsupportedMethod for other
/// methods, InvalidKey or MalformedDid for undecodable identifiers.
DidDocument derive_document(const Did &did);

/// File round-trip for cache seeding.
void export_document(const DidDocument &doc, const std::string &path);
DidDocument import_document(const std::string &path);

} // namespace didlink

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "didlink/codec.hpp"
#include "didlink/detail/ossl.hpp"

namespace didlink {

enum class KeyType { Ed25519, EcdsaP256, X25519 };

std::string_view to_string(KeyType type) noexcept;
std::optional<KeyType> key_type_from_string(std::string_view text) noexcept;

/// Owns secret bytes; wiped on destruction, never printed or serialized
/// implicitly.
class SecretBytes {
  public:
    SecretBytes() = default;
    explicit SecretBytes(Bytes bytes) : bytes_(std::move(bytes)) {}
    SecretBytes(const SecretBytes &) = default;
    SecretBytes &operator=(const SecretBytes &) = default;
    SecretBytes(SecretBytes &&) noexcept = default;
    SecretBytes &operator=(SecretBytes &&) noexcept = default;
    ~SecretBytes();

    ByteView expose() const noexcept { return bytes_; }
    std::size_t size() const noexcept { return bytes_.size(); }
    bool empty() const noexcept { return bytes_.empty(); }

  private:
    Bytes bytes_;
};

class KeyPair {
  public:
    static KeyPair generate(KeyType type);
    /// Derives the public half. Ed25519/X25519 take a 32-byte seed, P-256 a
    /// 32-byte big-endian scalar.
    static KeyPair from_private(KeyType type, ByteView private_key);
    /// No consistency check between the halves. Only useful for modelling a
    /// party that claims a public key it does not hold.
    static KeyPair from_parts(KeyType type, Bytes public_key, Bytes private_key);
    static KeyPair from_private_pem(std::string_view pem);

    KeyType type() const noexcept { return type_; }
    /// Canonical form: 32 bytes for Ed25519/X25519, 33-byte compressed point
    /// for P-256.
    const Bytes &public_key() const noexcept { return public_key_; }
    const SecretBytes &private_key() const noexcept { return private_key_; }

    /// Ed25519 (pure) or ECDSA-SHA256 (DER). X25519 keys cannot sign.
    Bytes sign(ByteView message) const;
    ossl::EvpKey to_evp() const;
    std::string to_private_pem() const;

  private:
    KeyPair(KeyType type, Bytes pub, Bytes priv)
        : type_(type), public_key_(std::move(pub)), private_key_(std::move(priv)) {}

    KeyType type_;
    Bytes public_key_;
    SecretBytes private_key_;
};

namespace crypto {

Bytes random_bytes(std::size_t n);
Bytes sha256(ByteView data);

bool verify(KeyType type, ByteView public_key, ByteView message, ByteView signature);

ossl::EvpKey public_evp(KeyType type, ByteView public_key);
/// Raw canonical public key and its type from an OpenSSL key; nullopt for
/// unsupported algorithms.
std::optional<std::pair<KeyType, Bytes>> raw_public_key(const EVP_PKEY *key);

/// Accepts 33-byte compressed or 65-byte uncompressed encodings; returns the
/// compressed form. Throws Error(InvalidKey) when the point is not on P-256.
Bytes compress_p256(ByteView point);

Bytes x25519(const KeyPair &own, ByteView peer_public);
Bytes hkdf_sha256(ByteView ikm, ByteView salt, ByteView info, std::size_t length);

/// AES-256-GCM; output is ciphertext followed by a 16-byte tag.
Bytes aead_seal(ByteView key, ByteView iv, ByteView aad, ByteView plaintext);
/// Throws Error(DecryptFailed) on tag mismatch.
Bytes aead_open(ByteView key, ByteView iv, ByteView aad, ByteView sealed);

/// RFC 3394 AES-256 key wrap.
Bytes key_wrap(ByteView kek, ByteView key);
Bytes key_unwrap(ByteView kek, ByteView wrapped);

} // namespace crypto
} // namespace didlink

#include "didlink/crypto.hpp"

#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/ec.h>
#include <openssl/kdf.h>
#include <openssl/param_build.h>
#include <openssl/pem.h>
#include <openssl/rand.h>

#include "didlink/error.hpp"

namespace didlink {

namespace {

using ParamBld = std::unique_ptr<OSSL_PARAM_BLD, ossl::Deleter<OSSL_PARAM_BLD_free>>;
using Params = std::unique_ptr<OSSL_PARAM, ossl::Deleter<OSSL_PARAM_free>>;
using BigNum = std::unique_ptr<BIGNUM, ossl::Deleter<BN_free>>;
using EcGroup = std::unique_ptr<EC_GROUP, ossl::Deleter<EC_GROUP_free>>;
using EcPoint = std::unique_ptr<EC_POINT, ossl::Deleter<EC_POINT_free>>;
using BnCtx = std::unique_ptr<BN_CTX, ossl::Deleter<BN_CTX_free>>;

[[noreturn]] void fail(ErrorCode code, const char *what) {
    throw Error(code, std::string(what) + " (" + ossl::last_error() + ")");
}

const char *algorithm_name(KeyType type) {
    switch (type) {
    case KeyType::Ed25519: return "ED25519";
    case KeyType::X25519: return "X25519";
    case KeyType::EcdsaP256: return "EC";
    }
    return "";
}

ossl::EvpKey from_data(KeyType type, ByteView pub, ByteView priv) {
    ParamBld bld(OSSL_PARAM_BLD_new());
    BigNum scalar;
    if (type == KeyType::EcdsaP256) {
        OSSL_PARAM_BLD_push_utf8_string(bld.get(), OSSL_PKEY_PARAM_GROUP_NAME, "prime256v1", 0);
        if (!priv.empty()) {
            scalar.reset(BN_bin2bn(priv.data(), static_cast<int>(priv.size()), nullptr));
            OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_PRIV_KEY, scalar.get());
        }
    } else if (!priv.empty()) {
        OSSL_PARAM_BLD_push_octet_string(bld.get(), OSSL_PKEY_PARAM_PRIV_KEY, priv.data(), priv.size());
    }
    if (!pub.empty()) OSSL_PARAM_BLD_push_octet_string(bld.get(), OSSL_PKEY_PARAM_PUB_KEY, pub.data(), pub.size());
    Params params(OSSL_PARAM_BLD_to_param(bld.get()));

    ossl::EvpPkeyCtx ctx(EVP_PKEY_CTX_new_from_name(nullptr, algorithm_name(type), nullptr));
    EVP_PKEY *raw = nullptr;
    int selection = priv.empty() ? EVP_PKEY_PUBLIC_KEY : EVP_PKEY_KEYPAIR;
    if (!ctx || EVP_PKEY_fromdata_init(ctx.get()) <= 0 ||
        EVP_PKEY_fromdata(ctx.get(), &raw, selection, params.get()) <= 0)
        fail(ErrorCode::InvalidKey, "cannot load key");
    return ossl::EvpKey(raw);
}

Bytes p256_public_from_scalar(ByteView scalar) {
    EcGroup group(EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1));
    BnCtx bn_ctx(BN_CTX_new());
    BigNum k(BN_bin2bn(scalar.data(), static_cast<int>(scalar.size()), nullptr));
    EcPoint point(EC_POINT_new(group.get()));
    if (BN_is_zero(k.get()) || BN_cmp(k.get(), EC_GROUP_get0_order(group.get())) >= 0)
        throw Error(ErrorCode::InvalidKey, "P-256 scalar out of range");
    if (!EC_POINT_mul(group.get(), point.get(), k.get(), nullptr, nullptr, bn_ctx.get()))
        fail(ErrorCode::InvalidKey, "P-256 point multiplication");
    Bytes out(33);
    if (EC_POINT_point2oct(group.get(), point.get(), POINT_CONVERSION_COMPRESSED, out.data(), out.size(),
                           bn_ctx.get()) != 33)
        fail(ErrorCode::InvalidKey, "P-256 point encoding");
    return out;
}

Bytes export_raw(EVP_PKEY *key, KeyType type, bool private_part) {
    if (type == KeyType::EcdsaP256) {
        if (private_part) {
            BIGNUM *bn = nullptr;
            if (!EVP_PKEY_get_bn_param(key, OSSL_PKEY_PARAM_PRIV_KEY, &bn)) fail(ErrorCode::InvalidKey, "export scalar");
            BigNum owned(bn);
            Bytes out(32);
            BN_bn2binpad(bn, out.data(), 32);
            return out;
        }
        std::size_t len = 0;
        Bytes buf(65);
        if (!EVP_PKEY_get_octet_string_param(key, OSSL_PKEY_PARAM_PUB_KEY, buf.data(), buf.size(), &len))
            fail(ErrorCode::InvalidKey, "export point");
        buf.resize(len);
        return crypto::compress_p256(buf);
    }
    std::size_t len = 32;
    Bytes out(32);
    int ok = private_part ? EVP_PKEY_get_raw_private_key(key, out.data(), &len)
                          : EVP_PKEY_get_raw_public_key(key, out.data(), &len);
    if (!ok || len != 32) fail(ErrorCode::InvalidKey, "export raw key");
    return out;
}

} // namespace

std::string_view to_string(KeyType type) noexcept {
    switch (type) {
    case KeyType::Ed25519: return "Ed25519";
    case KeyType::EcdsaP256: return "EcdsaP256";
    case KeyType::X25519: return "X25519";
    }
    return "";
}

std::optional<KeyType> key_type_from_string(std::string_view text) noexcept {
    if (text == "Ed25519") return KeyType::Ed25519;
    if (text == "EcdsaP256") return KeyType::EcdsaP256;
    if (text == "X25519") return KeyType::X25519;
    return std::nullopt;
}

SecretBytes::~SecretBytes() {
    if (!bytes_.empty()) OPENSSL_cleanse(bytes_.data(), bytes_.size());
}

KeyPair KeyPair::generate(KeyType type) {
    ossl::EvpKey key;
    switch (type) {
    case KeyType::Ed25519: key.reset(EVP_PKEY_Q_keygen(nullptr, nullptr, "ED25519")); break;
    case KeyType::X25519: key.reset(EVP_PKEY_Q_keygen(nullptr, nullptr, "X25519")); break;
    case KeyType::EcdsaP256: key.reset(EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-256")); break;
    }
    if (!key) fail(ErrorCode::InvalidKey, "key generation");
    return KeyPair(type, export_raw(key.get(), type, false), export_raw(key.get(), type, true));
}

KeyPair KeyPair::from_private(KeyType type, ByteView private_key) {
    if (private_key.size() != 32) throw Error(ErrorCode::InvalidKey, "private key must be 32 bytes");
    if (type == KeyType::EcdsaP256)
        return KeyPair(type, p256_public_from_scalar(private_key), Bytes(private_key.begin(), private_key.end()));
    auto key = from_data(type, {}, private_key);
    return KeyPair(type, export_raw(key.get(), type, false), Bytes(private_key.begin(), private_key.end()));
}

KeyPair KeyPair::from_parts(KeyType type, Bytes public_key, Bytes private_key) {
    return KeyPair(type, std::move(public_key), std::move(private_key));
}

KeyPair KeyPair::from_private_pem(std::string_view pem) {
    ossl::BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
    ossl::EvpKey key(PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr));
    if (!key) fail(ErrorCode::InvalidKey, "cannot parse private key PEM");
    auto raw = crypto::raw_public_key(key.get());
    if (!raw) throw Error(ErrorCode::InvalidKey, "unsupported private key algorithm");
    return KeyPair(raw->first, raw->second, export_raw(key.get(), raw->first, true));
}

Bytes KeyPair::sign(ByteView message) const {
    if (type_ == KeyType::X25519) throw Error(ErrorCode::InvalidKey, "X25519 keys cannot sign");
    auto key = to_evp();
    ossl::EvpMdCtx ctx(EVP_MD_CTX_new());
    const EVP_MD *md = type_ == KeyType::EcdsaP256 ? EVP_sha256() : nullptr;
    if (EVP_DigestSignInit(ctx.get(), nullptr, md, nullptr, key.get()) <= 0) fail(ErrorCode::InvalidKey, "sign init");
    std::size_t len = 0;
    if (EVP_DigestSign(ctx.get(), nullptr, &len, message.data(), message.size()) <= 0) fail(ErrorCode::InvalidKey, "sign");
    Bytes sig(len);
    if (EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()) <= 0) fail(ErrorCode::InvalidKey, "sign");
    sig.resize(len);
    return sig;
}

ossl::EvpKey KeyPair::to_evp() const { return from_data(type_, public_key_, private_key_.expose()); }

std::string KeyPair::to_private_pem() const {
    auto key = to_evp();
    ossl::BioPtr bio(BIO_new(BIO_s_mem()));
    if (!PEM_write_bio_PrivateKey(bio.get(), key.get(), nullptr, nullptr, 0, nullptr, nullptr))
        fail(ErrorCode::IoFailure, "PEM encode");
    char *data = nullptr;
    long len = BIO_get_mem_data(bio.get(), &data);
    return std::string(data, static_cast<std::size_t>(len));
}

namespace crypto {

Bytes random_bytes(std::size_t n) {
    Bytes out(n);
    if (n > 0 && RAND_bytes(out.data(), static_cast<int>(n)) != 1) fail(ErrorCode::IoFailure, "RAND_bytes");
    return out;
}

Bytes sha256(ByteView data) {
    Bytes out(32);
    unsigned int len = 32;
    if (!EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr)) fail(ErrorCode::IoFailure, "sha256");
    return out;
}

bool verify(KeyType type, ByteView public_key, ByteView message, ByteView signature) {
    if (type == KeyType::X25519) return false;
    ossl::EvpKey key;
    try {
        key = public_evp(type, public_key);
    } catch (const Error &) {
        return false;
    }
    ossl::EvpMdCtx ctx(EVP_MD_CTX_new());
    const EVP_MD *md = type == KeyType::EcdsaP256 ? EVP_sha256() : nullptr;
    if (EVP_DigestVerifyInit(ctx.get(), nullptr, md, nullptr, key.get()) <= 0) {
        ERR_clear_error();
        return false;
    }
    int rc = EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(), message.size());
    ERR_clear_error();
    return rc == 1;
}

ossl::EvpKey public_evp(KeyType type, ByteView public_key) {
    if ((type == KeyType::EcdsaP256 && public_key.size() != 33 && public_key.size() != 65) ||
        (type != KeyType::EcdsaP256 && public_key.size() != 32))
        throw Error(ErrorCode::InvalidKey, "public key length does not match key type");
    return from_data(type, public_key, {});
}

std::optional<std::pair<KeyType, Bytes>> raw_public_key(const EVP_PKEY *key) {
    KeyType type;
    switch (EVP_PKEY_get_base_id(key)) {
    case EVP_PKEY_ED25519: type = KeyType::Ed25519; break;
    case EVP_PKEY_X25519: type = KeyType::X25519; break;
    case EVP_PKEY_EC: {
        char group[64] = {};
        std::size_t len = 0;
        if (!EVP_PKEY_get_utf8_string_param(key, OSSL_PKEY_PARAM_GROUP_NAME, group, sizeof group, &len))
            return std::nullopt;
        if (std::string_view(group) != "prime256v1") return std::nullopt;
        type = KeyType::EcdsaP256;
        break;
    }
    default: return std::nullopt;
    }
    try {
        return std::make_pair(type, export_raw(const_cast<EVP_PKEY *>(key), type, false));
    } catch (const Error &) {
        return std::nullopt;
    }
}

Bytes compress_p256(ByteView point) {
    if (point.size() != 33 && point.size() != 65) throw Error(ErrorCode::InvalidKey, "bad P-256 point length");
    EcGroup group(EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1));
    BnCtx bn_ctx(BN_CTX_new());
    EcPoint p(EC_POINT_new(group.get()));
    if (!EC_POINT_oct2point(group.get(), p.get(), point.data(), point.size(), bn_ctx.get())) {
        ERR_clear_error();
        throw Error(ErrorCode::InvalidKey, "point not on P-256");
    }
    Bytes out(33);
    EC_POINT_point2oct(group.get(), p.get(), POINT_CONVERSION_COMPRESSED, out.data(), out.size(), bn_ctx.get());
    return out;
}

Bytes x25519(const KeyPair &own, ByteView peer_public) {
    if (own.type() != KeyType::X25519) throw Error(ErrorCode::InvalidKey, "key agreement needs X25519");
    auto mine = own.to_evp();
    auto peer = public_evp(KeyType::X25519, peer_public);
    ossl::EvpPkeyCtx ctx(EVP_PKEY_CTX_new(mine.get(), nullptr));
    std::size_t len = 32;
    Bytes out(32);
    if (EVP_PKEY_derive_init(ctx.get()) <= 0 || EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) <= 0 ||
        EVP_PKEY_derive(ctx.get(), out.data(), &len) <= 0)
        fail(ErrorCode::InvalidKey, "x25519");
    return out;
}

Bytes hkdf_sha256(ByteView ikm, ByteView salt, ByteView info, std::size_t length) {
    ossl::EvpPkeyCtx ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr));
    Bytes out(length);
    if (EVP_PKEY_derive_init(ctx.get()) <= 0 || EVP_PKEY_CTX_set_hkdf_md(ctx.get(), EVP_sha256()) <= 0 ||
        EVP_PKEY_CTX_set1_hkdf_salt(ctx.get(), salt.data(), static_cast<int>(salt.size())) <= 0 ||
        EVP_PKEY_CTX_set1_hkdf_key(ctx.get(), ikm.data(), static_cast<int>(ikm.size())) <= 0 ||
        EVP_PKEY_CTX_add1_hkdf_info(ctx.get(), info.data(), static_cast<int>(info.size())) <= 0 ||
        EVP_PKEY_derive(ctx.get(), out.data(), &length) <= 0)
        fail(ErrorCode::IoFailure, "hkdf");
    return out;
}

Bytes aead_seal(ByteView key, ByteView iv, ByteView aad, ByteView plaintext) {
    ossl::EvpCipherCtx ctx(EVP_CIPHER_CTX_new());
    Bytes out(plaintext.size() + 16);
    int len = 0;
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(iv.size()), nullptr) != 1 ||
        EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), iv.data()) != 1 ||
        EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1 ||
        EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(), static_cast<int>(plaintext.size())) != 1 ||
        EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &len) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, 16, out.data() + plaintext.size()) != 1)
        fail(ErrorCode::IoFailure, "aes-gcm seal");
    return out;
}

Bytes aead_open(ByteView key, ByteView iv, ByteView aad, ByteView sealed) {
    if (sealed.size() < 16) throw Error(ErrorCode::DecryptFailed, "ciphertext too short");
    std::size_t ct_len = sealed.size() - 16;
    ossl::EvpCipherCtx ctx(EVP_CIPHER_CTX_new());
    Bytes out(ct_len);
    int len = 0;
    Bytes tag(sealed.begin() + static_cast<std::ptrdiff_t>(ct_len), sealed.end());
    bool ok = EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(iv.size()), nullptr) == 1 &&
              EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), iv.data()) == 1 &&
              EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1 &&
              EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(), static_cast<int>(ct_len)) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, 16, tag.data()) == 1 &&
              EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &len) == 1;
    if (!ok) {
        ERR_clear_error();
        throw Error(ErrorCode::DecryptFailed, "authentication tag mismatch");
    }
    return out;
}

Bytes key_wrap(ByteView kek, ByteView key) {
    ossl::EvpCipherCtx ctx(EVP_CIPHER_CTX_new());
    Bytes out(key.size() + 8);
    int len = 0, fin = 0;
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_wrap(), nullptr, kek.data(), nullptr) != 1 ||
        EVP_EncryptUpdate(ctx.get(), out.data(), &len, key.data(), static_cast<int>(key.size())) != 1 ||
        EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1)
        fail(ErrorCode::IoFailure, "key wrap");
    out.resize(static_cast<std::size_t>(len + fin));
    return out;
}

Bytes key_unwrap(ByteView kek, ByteView wrapped) {
    if (wrapped.size() < 24 || wrapped.size() % 8 != 0) throw Error(ErrorCode::DecryptFailed, "bad wrapped key length");
    ossl::EvpCipherCtx ctx(EVP_CIPHER_CTX_new());
    Bytes out(wrapped.size());
    int len = 0, fin = 0;
    bool ok = EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_wrap(), nullptr, kek.data(), nullptr) == 1 &&
              EVP_DecryptUpdate(ctx.get(), out.data(), &len, wrapped.data(), static_cast<int>(wrapped.size())) == 1 &&
              EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &fin) == 1;
    if (!ok || len <= 0) {
        ERR_clear_error();
        throw Error(ErrorCode::DecryptFailed, "key unwrap integrity check");
    }
    out.resize(static_cast<std::size_t>(len + fin));
    return out;
}

} // namespace crypto
} // namespace didlink

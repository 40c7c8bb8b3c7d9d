#include "didlink/cert.hpp"

#include <fstream>
#include <sstream>

#include <openssl/pem.h>

#include "didlink/error.hpp"

namespace didlink {

namespace {

constexpr std::size_t kMaxDidLength = 4096;

[[noreturn]] void fail(ErrorCode code, const std::string &what) {
    throw Error(code, what + ": " + ossl::last_error());
}

void check_validity(const Validity &v) {
    if (!(v.not_after > v.not_before)) throw Error(ErrorCode::InvalidValidity, "not_after must follow not_before");
}

void set_name(X509_NAME *name, const std::string &cn) {
    if (!X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_UTF8, reinterpret_cast<const unsigned char *>(cn.data()),
                                    static_cast<int>(cn.size()), -1, 0))
        fail(ErrorCode::Malformed, "subject name");
}

void add_ext(X509 *cert, X509 *issuer, int nid, const char *value) {
    X509V3_CTX ctx;
    X509V3_set_ctx_nodb(&ctx);
    X509V3_set_ctx(&ctx, issuer, cert, nullptr, nullptr, 0);
    X509_EXTENSION *ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value);
    if (!ext) fail(ErrorCode::Malformed, "extension");
    X509_add_ext(cert, ext, -1);
    X509_EXTENSION_free(ext);
}

void add_san(X509 *cert, const std::vector<std::pair<int, std::string>> &entries) {
    ossl::GeneralNamesPtr names(sk_GENERAL_NAME_new_null());
    for (auto &[type, value] : entries) {
        GENERAL_NAME *gn = GENERAL_NAME_new();
        ASN1_IA5STRING *ia5 = ASN1_IA5STRING_new();
        if (!gn || !ia5 || !ASN1_STRING_set(ia5, value.data(), static_cast<int>(value.size()))) {
            GENERAL_NAME_free(gn);
            ASN1_IA5STRING_free(ia5);
            fail(ErrorCode::OversizeDid, "SAN entry");
        }
        GENERAL_NAME_set0_value(gn, type, ia5);
        sk_GENERAL_NAME_push(names.get(), gn);
    }
    if (!X509_add1_ext_i2d(cert, NID_subject_alt_name, names.get(), 0, X509V3_ADD_DEFAULT))
        fail(ErrorCode::OversizeDid, "SAN extension");
}

ossl::X509Ptr new_cert(const KeyPair &key, const std::string &subject_cn, const Validity &validity) {
    check_validity(validity);
    ossl::X509Ptr cert(X509_new());
    X509_set_version(cert.get(), 2);
    auto serial = crypto::random_bytes(16);
    serial[0] &= 0x7f;
    serial[0] |= 0x01;
    BIGNUM *bn = BN_bin2bn(serial.data(), static_cast<int>(serial.size()), nullptr);
    BN_to_ASN1_INTEGER(bn, X509_get_serialNumber(cert.get()));
    BN_free(bn);
    if (!ASN1_TIME_set(X509_getm_notBefore(cert.get()), static_cast<time_t>(to_unix(validity.not_before))) ||
        !ASN1_TIME_set(X509_getm_notAfter(cert.get()), static_cast<time_t>(to_unix(validity.not_after))))
        fail(ErrorCode::InvalidValidity, "validity encoding");
    set_name(X509_get_subject_name(cert.get()), subject_cn);
    auto pub = crypto::public_evp(key.type(), key.public_key());
    X509_set_pubkey(cert.get(), pub.get());
    return cert;
}

void sign_cert(X509 *cert, const KeyPair &signer) {
    auto evp = signer.to_evp();
    const EVP_MD *md = signer.type() == KeyType::EcdsaP256 ? EVP_sha256() : nullptr;
    if (X509_sign(cert, evp.get(), md) <= 0) fail(ErrorCode::Malformed, "certificate signing");
}

Bytes self_issue(const KeyPair &key, const std::string &cn, const std::vector<std::pair<int, std::string>> &san,
                 const Validity &validity) {
    if (key.type() == KeyType::X25519) throw Error(ErrorCode::InvalidKey, "certificates need a signing key");
    auto cert = new_cert(key, cn, validity);
    X509_set_issuer_name(cert.get(), X509_get_subject_name(cert.get()));
    add_ext(cert.get(), cert.get(), NID_basic_constraints, "critical,CA:FALSE");
    add_ext(cert.get(), cert.get(), NID_key_usage, "critical,digitalSignature");
    if (!san.empty()) add_san(cert.get(), san);
    sign_cert(cert.get(), key);
    return x509::to_der(cert.get());
}

std::string cn_of(X509_NAME *name) {
    int idx = X509_NAME_get_index_by_NID(name, NID_commonName, -1);
    if (idx < 0) return {};
    auto *data = X509_NAME_ENTRY_get_data(X509_NAME_get_entry(name, idx));
    return std::string(reinterpret_cast<const char *>(ASN1_STRING_get0_data(data)),
                       static_cast<std::size_t>(ASN1_STRING_length(data)));
}

Timestamp asn1_to_time(const ASN1_TIME *t) {
    struct tm tm {};
    if (!ASN1_TIME_to_tm(t, &tm)) throw Error(ErrorCode::Malformed, "certificate time");
    return from_unix(static_cast<std::int64_t>(timegm(&tm)));
}

std::vector<std::string> san_entries(X509 *cert, int type) {
    std::vector<std::string> out;
    ossl::GeneralNamesPtr names(
        static_cast<GENERAL_NAMES *>(X509_get_ext_d2i(cert, NID_subject_alt_name, nullptr, nullptr)));
    if (!names) return out;
    for (int i = 0; i < sk_GENERAL_NAME_num(names.get()); ++i) {
        const GENERAL_NAME *gn = sk_GENERAL_NAME_value(names.get(), i);
        if (gn->type != type) continue;
        const ASN1_IA5STRING *s = type == GEN_URI ? gn->d.uniformResourceIdentifier : gn->d.dNSName;
        out.emplace_back(reinterpret_cast<const char *>(ASN1_STRING_get0_data(s)),
                         static_cast<std::size_t>(ASN1_STRING_length(s)));
    }
    return out;
}

} // namespace

namespace x509 {

ossl::X509Ptr parse_der(ByteView der) {
    const unsigned char *p = der.data();
    ossl::X509Ptr cert(d2i_X509(nullptr, &p, static_cast<long>(der.size())));
    if (!cert || p != der.data() + der.size()) {
        ERR_clear_error();
        throw Error(ErrorCode::Malformed, "not a DER X.509 certificate");
    }
    return cert;
}

Bytes to_der(const X509 *cert) {
    int len = i2d_X509(cert, nullptr);
    if (len <= 0) fail(ErrorCode::Malformed, "DER encoding");
    Bytes out(static_cast<std::size_t>(len));
    unsigned char *p = out.data();
    i2d_X509(cert, &p);
    return out;
}

std::string der_to_pem(ByteView der) {
    auto cert = parse_der(der);
    ossl::BioPtr bio(BIO_new(BIO_s_mem()));
    PEM_write_bio_X509(bio.get(), cert.get());
    char *data = nullptr;
    long len = BIO_get_mem_data(bio.get(), &data);
    return std::string(data, static_cast<std::size_t>(len));
}

Bytes pem_to_der(std::string_view pem) {
    ossl::BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
    ossl::X509Ptr cert(PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr));
    if (!cert) {
        ERR_clear_error();
        throw Error(ErrorCode::Malformed, "not a PEM certificate");
    }
    return to_der(cert.get());
}

} // namespace x509

std::string_view to_string(CertKind kind) noexcept {
    switch (kind) {
    case CertKind::did_self_issued: return "did_self_issued";
    case CertKind::derived_self_issued: return "derived_self_issued";
    case CertKind::ca_issued: return "ca_issued";
    case CertKind::ca_root: return "ca_root";
    }
    return "";
}

std::string_view to_string(BindingReason reason) noexcept {
    switch (reason) {
    case BindingReason::ok: return "ok";
    case BindingReason::did_mismatch: return "did_mismatch";
    case BindingReason::key_not_in_document: return "key_not_in_document";
    case BindingReason::expired_certificate: return "expired_certificate";
    case BindingReason::malformed: return "malformed";
    }
    return "";
}

Validity Validity::starting(Timestamp start, std::chrono::seconds duration) {
    return {start - std::chrono::minutes(1), start + duration};
}

std::string CertBundle::certificate_pem() const { return x509::der_to_pem(certificate_der); }

Json CertBundle::to_json(bool include_private_key) const {
    Json chain = Json::array();
    for (auto &c : chain_der) chain.push_back(x509::der_to_pem(c));
    Json json = {{"kind", to_string(kind)},
                 {"certificate", certificate_pem()},
                 {"chain", chain},
                 {"keyType", to_string(key.type())},
                 {"publicKey", codec::base64url_encode(key.public_key())}};
    if (did) json["did"] = did->full();
    if (include_private_key) json["privateKey"] = key.to_private_pem();
    return json;
}

CertBundle CertBundle::from_json(const Json &json) {
    try {
        CertBundle b{CertKind::did_self_issued, {}, {}, KeyPair::from_private_pem(json.at("privateKey").get<std::string>()),
                     std::nullopt};
        auto kind = json.at("kind").get<std::string>();
        bool known = false;
        for (auto k : {CertKind::did_self_issued, CertKind::derived_self_issued, CertKind::ca_issued, CertKind::ca_root})
            if (to_string(k) == kind) b.kind = k, known = true;
        if (!known) throw Error(ErrorCode::Malformed, "unknown bundle kind " + kind);
        b.certificate_der = x509::pem_to_der(json.at("certificate").get<std::string>());
        for (auto &c : json.at("chain")) b.chain_der.push_back(x509::pem_to_der(c.get<std::string>()));
        if (json.contains("did")) b.did = Did::parse(json.at("did").get<std::string>());
        auto info = inspect_certificate(b.certificate_der);
        if (info.public_key != b.key.public_key()) throw Error(ErrorCode::Malformed, "key does not match certificate");
        return b;
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::Malformed, e.what());
    }
}

void CertBundle::save(const std::string &path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    out << to_json(true).dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
}

CertBundle CertBundle::load(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(parse_json(ss.str()));
}

CertBundle make_did_certificate(const Did &did, const KeyPair &key, const Validity &validity) {
    if (did.full().size() > kMaxDidLength) throw Error(ErrorCode::OversizeDid, "DID exceeds SAN limit");
    auto der = self_issue(key, "did-link", {{GEN_URI, did.full()}}, validity);
    return {CertKind::did_self_issued, std::move(der), {}, key, did};
}

std::string derived_identifier(ByteView public_key) {
    auto digest = crypto::sha256(public_key);
    return codec::base58_encode(ByteView(digest).first(20));
}

CertBundle make_derived_id_certificate(const KeyPair &key, const Validity &validity) {
    auto der = self_issue(key, derived_identifier(key.public_key()), {}, validity);
    return {CertKind::derived_self_issued, std::move(der), {}, key, std::nullopt};
}

Bytes make_self_issued_certificate(const KeyPair &key, const std::string &common_name,
                                   const std::vector<std::string> &san_uris, const Validity &validity) {
    std::vector<std::pair<int, std::string>> san;
    for (auto &u : san_uris) san.emplace_back(GEN_URI, u);
    return self_issue(key, common_name, san, validity);
}

CertBundle make_ca_root(const std::string &name, const Validity &validity, KeyType key_type) {
    auto key = KeyPair::generate(key_type);
    auto cert = new_cert(key, name, validity);
    X509_set_issuer_name(cert.get(), X509_get_subject_name(cert.get()));
    add_ext(cert.get(), cert.get(), NID_basic_constraints, "critical,CA:TRUE");
    add_ext(cert.get(), cert.get(), NID_key_usage, "critical,keyCertSign,cRLSign");
    add_ext(cert.get(), cert.get(), NID_subject_key_identifier, "hash");
    sign_cert(cert.get(), key);
    return {CertKind::ca_root, x509::to_der(cert.get()), {}, std::move(key), std::nullopt};
}

CertBundle issue_ca_certificate(const CertBundle &root, const std::string &subject_name, const KeyPair &key,
                                const Validity &validity) {
    if (root.kind != CertKind::ca_root) throw Error(ErrorCode::NotACa, "issuer bundle is not a CA root");
    if (key.type() == KeyType::X25519) throw Error(ErrorCode::InvalidKey, "certificates need a signing key");
    auto root_cert = x509::parse_der(root.certificate_der);
    auto cert = new_cert(key, subject_name, validity);
    X509_set_issuer_name(cert.get(), X509_get_subject_name(root_cert.get()));
    add_ext(cert.get(), root_cert.get(), NID_basic_constraints, "critical,CA:FALSE");
    add_ext(cert.get(), root_cert.get(), NID_key_usage, "critical,digitalSignature");
    add_ext(cert.get(), root_cert.get(), NID_ext_key_usage, "serverAuth,clientAuth");
    add_ext(cert.get(), root_cert.get(), NID_authority_key_identifier, "keyid:always");
    add_san(cert.get(), {{GEN_DNS, subject_name}});
    sign_cert(cert.get(), root.key);
    return {CertKind::ca_issued, x509::to_der(cert.get()), {root.certificate_der}, key, std::nullopt};
}

Did extract_did(ByteView certificate_der) { return extract_did(x509::parse_der(certificate_der).get()); }

Did extract_did(X509 *cert) {
    std::optional<Did> found;
    for (auto &uri : san_entries(cert, GEN_URI)) {
        if (!is_did(uri)) continue;
        if (found) throw Error(ErrorCode::AmbiguousDid, "more than one DID in SAN");
        found = Did::parse(uri);
    }
    if (!found) throw Error(ErrorCode::NoDidPresent, "no DID URI in SAN");
    return *found;
}

BindingVerdict validate_did_binding(ByteView certificate_der, const DidDocument &document, Timestamp now,
                                    const BindingOptions &options) {
    return validate_did_binding(x509::parse_der(certificate_der).get(), document, now, options);
}

BindingVerdict validate_did_binding(X509 *cert, const DidDocument &document, Timestamp now,
                                    const BindingOptions &options) {
    BindingVerdict verdict;

    try {
        if (!(extract_did(cert) == document.id())) {
            verdict.reason = BindingReason::did_mismatch;
            return verdict;
        }
    } catch (const Error &e) {
        if (e.code() == ErrorCode::Malformed) throw;
        verdict.reason = BindingReason::did_mismatch;
        return verdict;
    }

    auto *pub = X509_get0_pubkey(cert);
    auto raw = pub ? crypto::raw_public_key(pub) : std::nullopt;
    const VerificationMethod *vm = raw ? document.find_key(raw->first, raw->second, Purpose::authentication) : nullptr;
    if (!vm) {
        verdict.reason = BindingReason::key_not_in_document;
        return verdict;
    }

    auto nb = asn1_to_time(X509_get0_notBefore(cert));
    auto na = asn1_to_time(X509_get0_notAfter(cert));
    if (now + options.clock_skew < nb || now - options.clock_skew > na) {
        verdict.reason = BindingReason::expired_certificate;
        return verdict;
    }

    if (options.strict && X509_verify(cert, pub) != 1) {
        ERR_clear_error();
        verdict.reason = BindingReason::malformed;
        return verdict;
    }

    verdict.valid = true;
    verdict.reason = BindingReason::ok;
    verdict.matched_method_id = vm->id;
    return verdict;
}

Json CertificateInfo::to_json() const {
    Json json = {{"subjectCN", subject_cn},
                 {"issuerCN", issuer_cn},
                 {"notBefore", format_utc(not_before)},
                 {"notAfter", format_utc(not_after)},
                 {"sanUris", san_uris},
                 {"sanDns", san_dns},
                 {"keyType", to_string(key_type)},
                 {"publicKey", codec::base64url_encode(public_key)},
                 {"isCa", is_ca},
                 {"selfIssued", self_issued}};
    return json;
}

CertificateInfo inspect_certificate(ByteView certificate_der) {
    return inspect_certificate(x509::parse_der(certificate_der).get());
}

CertificateInfo inspect_certificate(X509 *cert) {
    CertificateInfo info;
    info.subject_cn = cn_of(X509_get_subject_name(cert));
    info.issuer_cn = cn_of(X509_get_issuer_name(cert));
    info.not_before = asn1_to_time(X509_get0_notBefore(cert));
    info.not_after = asn1_to_time(X509_get0_notAfter(cert));
    info.san_uris = san_entries(cert, GEN_URI);
    info.san_dns = san_entries(cert, GEN_DNS);
    auto raw = crypto::raw_public_key(X509_get0_pubkey(cert));
    if (!raw) throw Error(ErrorCode::Malformed, "unsupported certificate key algorithm");
    info.key_type = raw->first;
    info.public_key = raw->second;
    info.is_ca = X509_check_ca(cert) != 0;
    info.self_issued = X509_NAME_cmp(X509_get_subject_name(cert), X509_get_issuer_name(cert)) == 0;
    return info;
}

std::optional<std::string> verify_chain(ByteView leaf_der, const std::vector<Bytes> &intermediates,
                                        const std::vector<Bytes> &roots, Timestamp at) {
    auto leaf = x509::parse_der(leaf_der);
    ossl::X509StorePtr store(X509_STORE_new());
    for (auto &r : roots) {
        auto root = x509::parse_der(r);
        X509_STORE_add_cert(store.get(), root.get());
    }
    STACK_OF(X509) *untrusted = sk_X509_new_null();
    std::vector<ossl::X509Ptr> held;
    for (auto &i : intermediates) {
        held.push_back(x509::parse_der(i));
        sk_X509_push(untrusted, held.back().get());
    }
    ossl::X509StoreCtxPtr ctx(X509_STORE_CTX_new());
    X509_STORE_CTX_init(ctx.get(), store.get(), leaf.get(), untrusted);
    X509_STORE_CTX_set_time(ctx.get(), 0, static_cast<time_t>(to_unix(at)));
    int ok = X509_verify_cert(ctx.get());
    std::optional<std::string> result;
    if (ok != 1) result = X509_verify_cert_error_string(X509_STORE_CTX_get_error(ctx.get()));
    sk_X509_free(untrusted);
    ERR_clear_error();
    return result;
}

} // namespace didlink

#include "didlink/vc.hpp"

#include <algorithm>
#include <set>

#include "didlink/error.hpp"

namespace didlink::vc {

using codec::base64url_decode;
using codec::base64url_encode;

namespace {

constexpr std::string_view kSdAlg = "sha-256";

std::string b64(std::string_view text) { return base64url_encode(as_bytes(text)); }
std::string unb64(std::string_view text) { return didlink::to_string(base64url_decode(text)); }

[[noreturn]] void malformed(const std::string &what) { throw Error(ErrorCode::Malformed, what); }

std::string qualify(const Did &did, const std::string &key_id) {
    return key_id.rfind('#', 0) == 0 ? did.full() + key_id : key_id;
}

std::vector<std::string> split3(std::string_view compact) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        auto dot = compact.find('.', start);
        parts.emplace_back(compact.substr(start, dot == std::string_view::npos ? dot : dot - start));
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    if (parts.size() != 3) malformed("presentation must have three segments");
    return parts;
}

std::string sd_hash(const std::string &first_two) {
    return base64url_encode(crypto::sha256(as_bytes(first_two)));
}

struct Segments {
    std::string signed_part;
    std::string disclosures_part;
};

Segments encode_segments(const SdJwtCredential &c) {
    Json signed_obj{{"body", c.body()}, {"signature", base64url_encode(c.signature)}};
    Json list = Json::array();
    for (auto &d : c.disclosures) list.push_back(d.encoded());
    return {b64(canonical(signed_obj)), b64(canonical(list))};
}

Timestamp seconds_field(const Json &j, const char *key) {
    if (!j.contains(key) || !j[key].is_number_integer()) malformed(std::string("missing ") + key);
    return from_unix(j[key].get<std::int64_t>());
}

std::string string_field(const Json &j, const char *key) {
    if (!j.contains(key) || !j[key].is_string()) malformed(std::string("missing ") + key);
    return j[key].get<std::string>();
}

SdJwtCredential decode_credential(const std::string &signed_seg, const std::string &disclosures_seg) {
    try {
        auto signed_obj = parse_canonical(unb64(signed_seg));
        const Json &body = signed_obj.at("body");
        std::vector<std::string> digests;
        for (auto &d : body.at("_sd")) digests.push_back(d.get<std::string>());
        if (body.value("_sd_alg", "") != kSdAlg) malformed("unsupported _sd_alg");
        std::optional<StatusRef> status;
        if (body.contains("status"))
            status = StatusRef{body["status"].at("list").get<std::string>(), body["status"].at("idx").get<std::uint32_t>()};
        SdJwtCredential c{Did::parse(string_field(body, "iss")),
                          Did::parse(string_field(body, "sub")),
                          std::move(digests),
                          {},
                          {seconds_field(body, "nbf"), seconds_field(body, "exp")},
                          status,
                          string_field(body, "kid"),
                          base64url_decode(string_field(signed_obj, "signature"))};
        if (c.body() != body) malformed("unexpected body fields");
        auto list = parse_canonical(unb64(disclosures_seg));
        if (!list.is_array()) malformed("disclosures must be an array");
        for (auto &d : list) c.disclosures.push_back(Disclosure::decode(d.get<std::string>()));
        return c;
    } catch (const Json::exception &e) {
        malformed(e.what());
    } catch (const Error &e) {
        if (e.code() == ErrorCode::Malformed) throw;
        malformed(e.what());
    }
}

} // namespace

std::string Disclosure::encoded() const { return b64(canonical(Json::array({salt, name, value}))); }

std::string Disclosure::digest() const { return base64url_encode(crypto::sha256(as_bytes(encoded()))); }

Disclosure Disclosure::decode(std::string_view encoded) {
    auto j = parse_canonical(unb64(encoded));
    if (!j.is_array() || j.size() != 3 || !j[0].is_string() || !j[1].is_string()) malformed("disclosure shape");
    return {j[0].get<std::string>(), j[1].get<std::string>(), j[2]};
}

Json SdJwtCredential::body() const {
    Json j{{"iss", issuer.full()},
           {"sub", subject.full()},
           {"_sd", claim_digests},
           {"_sd_alg", kSdAlg},
           {"nbf", to_unix(validity.not_before)},
           {"exp", to_unix(validity.not_after)},
           {"kid", issuer_key_id}};
    if (status) j["status"] = {{"list", status->list_id}, {"idx", status->index}};
    return j;
}

std::vector<std::string> SdJwtCredential::claim_names() const {
    std::vector<std::string> names;
    for (auto &d : disclosures) names.push_back(d.name);
    return names;
}

std::string SdJwtCredential::serialize() const {
    auto seg = encode_segments(*this);
    return seg.signed_part + "." + seg.disclosures_part + ".";
}

SdJwtCredential SdJwtCredential::parse(std::string_view compact) {
    auto parts = split3(compact);
    if (!parts[2].empty()) malformed("credential carries a holder binding");
    return decode_credential(parts[0], parts[1]);
}

Json HolderBinding::payload() const {
    return {{"nonce", nonce}, {"aud", audience}, {"iat", to_unix(issued_at)}, {"sd_hash", sd_hash}, {"kid", key_id}};
}

std::string Presentation::serialize() const {
    auto seg = encode_segments(credential);
    std::string binding;
    if (holder_binding)
        binding = b64(canonical(
            Json{{"payload", holder_binding->payload()}, {"signature", base64url_encode(holder_binding->signature)}}));
    return seg.signed_part + "." + seg.disclosures_part + "." + binding;
}

Presentation Presentation::parse(std::string_view compact) {
    auto parts = split3(compact);
    Presentation p{decode_credential(parts[0], parts[1]), std::nullopt};
    if (!parts[2].empty()) {
        try {
            auto j = parse_canonical(unb64(parts[2]));
            const Json &pl = j.at("payload");
            HolderBinding hb{string_field(pl, "nonce"), string_field(pl, "aud"), seconds_field(pl, "iat"),
                             string_field(pl, "kid"),   string_field(pl, "sd_hash"),
                             base64url_decode(string_field(j, "signature"))};
            if (hb.payload() != pl || j.size() != 2) malformed("unexpected binding fields");
            p.holder_binding = std::move(hb);
        } catch (const Json::exception &e) {
            malformed(e.what());
        }
    }
    return p;
}

SdJwtCredential issue(const KeyPair &issuer_key, const Did &issuer, const Did &subject, const Json &claims,
                      const ValidityWindow &validity, const std::optional<StatusRef> &status,
                      const std::string &issuer_key_id) {
    if (!claims.is_object() || claims.empty()) throw Error(ErrorCode::EmptyClaims);
    SdJwtCredential c{issuer, subject, {}, {}, validity, status, qualify(issuer, issuer_key_id), {}};
    for (auto &[name, value] : claims.items()) {
        Disclosure d{base64url_encode(crypto::random_bytes(16)), name, value};
        c.claim_digests.push_back(d.digest());
        c.disclosures.push_back(std::move(d));
    }
    std::sort(c.claim_digests.begin(), c.claim_digests.end());
    c.signature = issuer_key.sign(as_bytes(canonical(c.body())));
    return c;
}

Presentation derive_presentation(const SdJwtCredential &credential, const std::vector<std::string> &disclose,
                                 const std::optional<HolderProof> &holder) {
    Presentation p{credential, std::nullopt};
    p.credential.disclosures.clear();
    for (auto &name : disclose) {
        auto it = std::find_if(credential.disclosures.begin(), credential.disclosures.end(),
                               [&](const Disclosure &d) { return d.name == name; });
        if (it == credential.disclosures.end()) throw Error(ErrorCode::UnknownClaim, name);
        if (std::find(p.credential.disclosures.begin(), p.credential.disclosures.end(), *it) ==
            p.credential.disclosures.end())
            p.credential.disclosures.push_back(*it);
    }
    if (holder) {
        if (!holder->key) throw Error(ErrorCode::UsageError, "holder proof without a key");
        auto seg = encode_segments(p.credential);
        HolderBinding hb{holder->nonce,
                         holder->audience,
                         Timestamp(std::chrono::duration_cast<std::chrono::seconds>(holder->at.time_since_epoch())),
                         qualify(credential.subject, holder->key_id),
                         sd_hash(seg.signed_part + "." + seg.disclosures_part),
                         {}};
        hb.signature = holder->key->sign(as_bytes(canonical(hb.payload())));
        p.holder_binding = std::move(hb);
    }
    return p;
}

std::string_view to_string(ClaimStatus status) noexcept {
    switch (status) {
    case ClaimStatus::valid: return "valid";
    case ClaimStatus::expired: return "expired";
    case ClaimStatus::revoked: return "revoked";
    }
    return "valid";
}

namespace {

DidDocument resolve_or_fail(DidResolver &resolver, const Did &did, const CachePolicy &policy) {
    try {
        return resolver.resolve(did, policy).document;
    } catch (const Error &e) {
        throw Error(ErrorCode::ResolutionFailed, std::string(e.code_string()) + ": " + did.full());
    }
}

bool key_verifies(const DidDocument &doc, const std::string &key_id, Purpose purpose, ByteView message,
                  ByteView signature) {
    const auto *vm = doc.find_method(key_id);
    if (!vm || !vm->purposes.has(purpose)) return false;
    return crypto::verify(vm->key_type, vm->public_key, message, signature);
}

} // namespace

VerifiedClaims verify_presentation(const Presentation &p, const VerifyPolicy &policy, DidResolver &resolver,
                                   StatusChecker *status_checker) {
    const auto &c = p.credential;

    if (!policy.accepted_issuers.empty() &&
        std::find(policy.accepted_issuers.begin(), policy.accepted_issuers.end(), c.issuer) ==
            policy.accepted_issuers.end())
        throw Error(ErrorCode::IssuerNotAccepted, c.issuer.full());

    auto issuer_doc = resolve_or_fail(resolver, c.issuer, policy.cache_policy);
    if (!key_verifies(issuer_doc, c.issuer_key_id, Purpose::assertion, as_bytes(canonical(c.body())), c.signature))
        throw Error(ErrorCode::BadIssuerSignature, c.issuer_key_id);

    VerifiedClaims out{Json::object(), c.issuer, c.subject, ClaimStatus::valid, false};
    std::set<std::string> seen;
    for (auto &d : c.disclosures) {
        if (!std::binary_search(c.claim_digests.begin(), c.claim_digests.end(), d.digest()) ||
            !seen.insert(d.name).second)
            throw Error(ErrorCode::DigestMismatch, d.name);
        out.claims[d.name] = d.value;
    }

    if (policy.now + policy.clock_skew < c.validity.not_before || policy.now - policy.clock_skew >= c.validity.not_after)
        throw Error(ErrorCode::Expired);

    if (c.status) {
        if (!status_checker) throw Error(ErrorCode::Revoked, "no status source for " + c.status->list_id);
        if (check_status(*c.status, *status_checker) == CredentialStatus::revoked)
            throw Error(ErrorCode::Revoked, c.status->list_id + "/" + std::to_string(c.status->index));
    }

    bool waived = policy.expected_subject && *policy.expected_subject == c.subject;
    if (!p.holder_binding) {
        if (!waived) throw Error(ErrorCode::HolderBindingRequired, c.subject.full());
        return out;
    }
    const auto &hb = *p.holder_binding;
    auto seg = encode_segments(c);
    if (hb.sd_hash != sd_hash(seg.signed_part + "." + seg.disclosures_part))
        throw Error(ErrorCode::HolderBindingInvalid, "sd_hash");
    if (policy.nonce && hb.nonce != *policy.nonce) throw Error(ErrorCode::HolderBindingInvalid, "nonce");
    if (policy.audience && hb.audience != *policy.audience) throw Error(ErrorCode::HolderBindingInvalid, "audience");
    auto subject_doc = resolve_or_fail(resolver, c.subject, policy.cache_policy);
    if (!key_verifies(subject_doc, hb.key_id, Purpose::authentication, as_bytes(canonical(hb.payload())),
                      hb.signature))
        throw Error(ErrorCode::HolderBindingInvalid, "signature");
    out.holder_binding_checked = true;
    return out;
}

CredentialStatus check_status(const StatusRef &ref, StatusChecker &checker) {
    return checker.check_status(ref.list_id, ref.index);
}

} // namespace didlink::vc

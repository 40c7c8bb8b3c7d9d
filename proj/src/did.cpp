#include "didlink/did.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <sodium.h>

#include "didlink/error.hpp"

namespace didlink {

namespace {

constexpr std::uint8_t kEd25519Codec[] = {0xed, 0x01};
constexpr std::uint8_t kX25519Codec[] = {0xec, 0x01};
constexpr std::uint8_t kP256Codec[] = {0x80, 0x24};

ByteView codec_prefix(KeyType type) {
    switch (type) {
    case KeyType::Ed25519: return kEd25519Codec;
    case KeyType::X25519: return kX25519Codec;
    case KeyType::EcdsaP256: return kP256Codec;
    }
    return {};
}

std::string_view vm_type_name(KeyType type) {
    switch (type) {
    case KeyType::Ed25519: return "Ed25519VerificationKey2020";
    case KeyType::X25519: return "X25519KeyAgreementKey2020";
    case KeyType::EcdsaP256: return "EcdsaSecp256r1VerificationKey2019";
    }
    return "";
}

std::optional<KeyType> vm_type_from_name(std::string_view name) {
    for (auto t : {KeyType::Ed25519, KeyType::X25519, KeyType::EcdsaP256})
        if (vm_type_name(t) == name) return t;
    return std::nullopt;
}

bool subject_char_ok(char c) {
    auto u = static_cast<unsigned char>(c);
    return u > 0x20 && u != 0x7f;
}

std::string fragment_of(std::string_view key_id) {
    auto hash = key_id.find('#');
    if (hash != std::string_view::npos) return std::string(key_id.substr(hash));
    return "#" + std::string(key_id);
}

void check_key_length(KeyType type, const Bytes &key) {
    bool ok = type == KeyType::EcdsaP256 ? key.size() == 33 : key.size() == 32;
    if (!ok) throw Error(ErrorCode::MalformedDocument, "public key length does not match key type");
}

DidDocument key_document(const Did &did, ByteView key) {
    VerificationMethod vm{"#" + encode_multibase_key(KeyType::Ed25519, key), KeyType::Ed25519,
                          Bytes(key.begin(), key.end()), Purposes{Purpose::authentication, Purpose::assertion}};
    return DidDocument(did, {std::move(vm)}, 1, from_unix(0));
}

struct SodiumInit {
    SodiumInit() {
        if (sodium_init() < 0) throw Error(ErrorCode::IoFailure, "libsodium initialisation failed");
    }
};

} // namespace

Did Did::parse(std::string_view text) {
    if (text.substr(0, 4) != "did:") throw Error(ErrorCode::MalformedDid, "missing did: prefix");
    auto rest = text.substr(4);
    auto colon = rest.find(':');
    if (colon == std::string_view::npos) throw Error(ErrorCode::MalformedDid, "missing method separator");
    auto method = rest.substr(0, colon);
    auto subject = rest.substr(colon + 1);
    if (method.empty()) throw Error(ErrorCode::MalformedDid, "empty method");
    if (subject.empty()) throw Error(ErrorCode::MalformedDid, "empty subject");
    for (char c : method)
        if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')))
            throw Error(ErrorCode::MalformedDid, "method must be lowercase letters or digits");
    for (char c : subject)
        if (!subject_char_ok(c)) throw Error(ErrorCode::MalformedDid, "illegal character in subject");
    Did did;
    did.method_ = std::string(method);
    did.subject_id_ = std::string(subject);
    did.full_ = std::string(text);
    return did;
}

bool is_did(std::string_view text) noexcept {
    try {
        Did::parse(text);
        return true;
    } catch (const Error &) {
        return false;
    }
}

std::string encode_multibase_key(KeyType type, ByteView public_key) {
    Bytes buf(codec_prefix(type).begin(), codec_prefix(type).end());
    buf.insert(buf.end(), public_key.begin(), public_key.end());
    return "z" + codec::base58_encode(buf);
}

std::pair<KeyType, Bytes> decode_multibase_key(std::string_view text) {
    if (text.empty() || text[0] != 'z') throw Error(ErrorCode::InvalidKey, "multibase must be base58btc ('z')");
    Bytes raw;
    try {
        raw = codec::base58_decode(text.substr(1));
    } catch (const Error &) {
        throw Error(ErrorCode::InvalidKey, "multibase key is not base58btc");
    }
    for (auto t : {KeyType::Ed25519, KeyType::X25519, KeyType::EcdsaP256}) {
        auto prefix = codec_prefix(t);
        if (raw.size() > 2 && raw[0] == prefix[0] && raw[1] == prefix[1]) {
            Bytes key(raw.begin() + 2, raw.end());
            bool ok = t == KeyType::EcdsaP256 ? key.size() == 33 : key.size() == 32;
            if (!ok) throw Error(ErrorCode::InvalidKey, "multicodec key has wrong length");
            return {t, std::move(key)};
        }
    }
    throw Error(ErrorCode::InvalidKey, "unknown multicodec prefix");
}

DidDocument::DidDocument(Did id, std::vector<VerificationMethod> methods, std::uint32_t version, Timestamp updated_at)
    : id_(std::move(id)), methods_(std::move(methods)), version_(version), updated_at_(updated_at) {
    if (methods_.empty()) throw Error(ErrorCode::MalformedDocument, "document needs at least one verification method");
    if (version_ < 1) throw Error(ErrorCode::MalformedDocument, "version is 1-based");
    std::set<std::string> ids;
    for (auto &vm : methods_) {
        if (vm.id.size() < 2 || vm.id[0] != '#') throw Error(ErrorCode::MalformedDocument, "method id must be a fragment");
        if (!ids.insert(vm.id).second) throw Error(ErrorCode::MalformedDocument, "duplicate verification method id");
        if (vm.purposes.empty()) throw Error(ErrorCode::MalformedDocument, "verification method without purpose");
        if (vm.key_type == KeyType::EcdsaP256 && vm.public_key.size() == 65) {
            try {
                vm.public_key = crypto::compress_p256(vm.public_key);
            } catch (const Error &) {
                throw Error(ErrorCode::MalformedDocument, "invalid P-256 point");
            }
        }
        check_key_length(vm.key_type, vm.public_key);
        if (vm.key_type == KeyType::X25519 && (vm.purposes.has(Purpose::authentication) || vm.purposes.has(Purpose::assertion)))
            throw Error(ErrorCode::MalformedDocument, "X25519 keys are key-agreement only");
        if (vm.key_type != KeyType::X25519 && vm.purposes.has(Purpose::key_agreement))
            throw Error(ErrorCode::MalformedDocument, "signing keys cannot be used for key agreement");
    }
}

const VerificationMethod *DidDocument::find_method(std::string_view key_id) const {
    if (key_id.find('#') != std::string_view::npos && key_id.substr(0, 4) == "did:") {
        auto base = key_id.substr(0, key_id.find('#'));
        if (base != id_.full()) return nullptr;
    }
    auto frag = fragment_of(key_id);
    for (auto &vm : methods_)
        if (vm.id == frag) return &vm;
    return nullptr;
}

const VerificationMethod *DidDocument::find_key(KeyType type, ByteView public_key, Purpose purpose) const {
    for (auto &vm : methods_) {
        if (vm.key_type != type || !vm.purposes.has(purpose)) continue;
        if (std::equal(vm.public_key.begin(), vm.public_key.end(), public_key.begin(), public_key.end())) return &vm;
    }
    return nullptr;
}

Json DidDocument::to_json() const {
    Json vms = Json::array();
    for (auto &vm : methods_) {
        Json purposes = Json::array();
        if (vm.purposes.has(Purpose::assertion)) purposes.push_back("assertion");
        if (vm.purposes.has(Purpose::authentication)) purposes.push_back("authentication");
        if (vm.purposes.has(Purpose::key_agreement)) purposes.push_back("keyAgreement");
        vms.push_back({{"id", vm.id},
                       {"type", vm_type_name(vm.key_type)},
                       {"publicKeyMultibase", encode_multibase_key(vm.key_type, vm.public_key)},
                       {"purpose", purposes}});
    }
    return {{"id", id_.full()}, {"verificationMethod", vms}, {"version", version_}, {"updatedAt", format_utc(updated_at_)}};
}

DidDocument DidDocument::from_json(const Json &json) {
    try {
        if (!json.is_object()) throw Error(ErrorCode::MalformedDocument, "document must be an object");
        auto id = Did::parse(json.at("id").get<std::string>());
        std::vector<VerificationMethod> methods;
        for (auto &item : json.at("verificationMethod")) {
            VerificationMethod vm;
            vm.id = item.at("id").get<std::string>();
            auto declared = vm_type_from_name(item.at("type").get<std::string>());
            if (!declared) throw Error(ErrorCode::MalformedDocument, "unknown verification method type");
            auto [type, key] = decode_multibase_key(item.at("publicKeyMultibase").get<std::string>());
            if (type != *declared) throw Error(ErrorCode::MalformedDocument, "multicodec does not match type");
            vm.key_type = type;
            vm.public_key = std::move(key);
            for (auto &p : item.at("purpose")) {
                auto name = p.get<std::string>();
                if (name == "authentication") vm.purposes.add(Purpose::authentication);
                else if (name == "assertion") vm.purposes.add(Purpose::assertion);
                else if (name == "keyAgreement") vm.purposes.add(Purpose::key_agreement);
                else throw Error(ErrorCode::MalformedDocument, "unknown purpose " + name);
            }
            methods.push_back(std::move(vm));
        }
        auto version = json.at("version").get<std::uint32_t>();
        auto updated = parse_utc(json.at("updatedAt").get<std::string>());
        return DidDocument(std::move(id), std::move(methods), version, updated);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::MalformedDocument, e.what());
    } catch (const Error &e) {
        if (e.code() == ErrorCode::MalformedDocument) throw;
        throw Error(ErrorCode::MalformedDocument, e.what());
    }
}

bool is_valid_ed25519_key(ByteView public_key) noexcept {
    static SodiumInit init;
    return public_key.size() == crypto_core_ed25519_BYTES && crypto_core_ed25519_is_valid_point(public_key.data()) == 1;
}

std::pair<Did, DidDocument> make_key_did(ByteView key) {
    if (!is_valid_ed25519_key(key)) throw Error(ErrorCode::InvalidKey, "not a valid Ed25519 public key");
    auto did = Did::parse("did:key:" + encode_multibase_key(KeyType::Ed25519, key));
    return {did, key_document(did, key)};
}

std::pair<Did, DidDocument> make_peer_did(ByteView key) {
    if (!is_valid_ed25519_key(key)) throw Error(ErrorCode::InvalidKey, "not a valid Ed25519 public key");
    auto did = Did::parse("did:peer:0" + encode_multibase_key(KeyType::Ed25519, key));
    return {did, key_document(did, key)};
}

DidDocument derive_document(const Did &did) {
    std::string_view encoded = did.subject_id();
    if (did.method() == "peer") {
        if (encoded.empty() || encoded[0] != '0') throw Error(ErrorCode::MalformedDid, "only did:peer numalgo 0 is supported");
        encoded.remove_prefix(1);
    } else if (did.method() != "key") {
        throw Error(ErrorCode::UnsupportedMethod, did.method());
    }
    auto [type, key] = decode_multibase_key(encoded);
    if (type != KeyType::Ed25519 || !is_valid_ed25519_key(key)) throw Error(ErrorCode::InvalidKey, "not an Ed25519 key DID");
    return key_document(did, key);
}

void export_document(const DidDocument &doc, const std::string &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    out << doc.canonical() << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
}

DidDocument import_document(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return DidDocument::from_json(parse_json(ss.str()));
}

} // namespace didlink

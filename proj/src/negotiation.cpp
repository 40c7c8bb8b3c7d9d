#include "didlink/negotiation.hpp"

#include <algorithm>

#include "didlink/error.hpp"

namespace didlink::negotiation {

namespace {

constexpr std::size_t kMaxPayload = 0xFFFF;

[[noreturn]] void malformed(const std::string &what) { throw Error(ErrorCode::MalformedPayload, what); }

void check_size(const Bytes &payload) {
    if (payload.size() > kMaxPayload) throw Error(ErrorCode::OversizePayload, "extension payload exceeds 65535 bytes");
}

const char *cell_name(ExtensionId id) {
    static const char *names[] = {"SNI", "CNI", "CMI", "SMI", "CPP", "SPA"};
    return names[static_cast<int>(id)];
}

bool cell_matches(Cell cell, bool present) {
    return cell == Cell::optional || (cell == Cell::yes) == present;
}

} // namespace

std::string_view to_string(ClientAuthMode mode) noexcept {
    switch (mode) {
    case ClientAuthMode::none: return "none";
    case ClientAuthMode::cert: return "cert";
    case ClientAuthMode::did: return "did";
    case ClientAuthMode::did_vc: return "did_vc";
    }
    return "";
}

std::string_view to_string(ServerAuthMode mode) noexcept {
    switch (mode) {
    case ServerAuthMode::cert_default: return "cert_default";
    case ServerAuthMode::cert: return "cert";
    case ServerAuthMode::did_default: return "did_default";
    case ServerAuthMode::did: return "did";
    case ServerAuthMode::did_vc_default: return "did_vc_default";
    case ServerAuthMode::did_vc: return "did_vc";
    }
    return "";
}

std::string_view to_string(RejectionReason reason) noexcept {
    switch (reason) {
    case RejectionReason::no_common_method: return "no_common_method";
    case RejectionReason::no_common_presentation_protocol: return "no_common_presentation_protocol";
    case RejectionReason::unknown_server_did: return "unknown_server_did";
    }
    return "";
}

ServerIdentity make_server_identity(CertBundle bundle, bool has_credentials) {
    std::string name;
    if (bundle.did) {
        name = bundle.did->full();
    } else {
        auto info = inspect_certificate(bundle.certificate_der);
        name = info.san_dns.empty() ? info.subject_cn : info.san_dns.front();
    }
    return {std::move(bundle), std::move(name), has_credentials};
}

Outcome negotiate(const NegotiationOffer &offer, const ServerCaps &caps) {
    NegotiationAgreement agreement;

    if (offer.target_server) {
        auto it = std::find_if(caps.identities.begin(), caps.identities.end(),
                               [&](const ServerIdentity &id) { return id.name == *offer.target_server; });
        if (it == caps.identities.end()) return Rejection{RejectionReason::unknown_server_did};
        agreement.identity_index = static_cast<std::size_t>(it - caps.identities.begin());
    } else {
        if (caps.default_identity >= caps.identities.size()) return Rejection{RejectionReason::unknown_server_did};
        agreement.identity_index = caps.default_identity;
    }

    std::vector<std::string> common;
    for (auto &m : offer.client_did_methods)
        if (std::find(caps.supported_methods.begin(), caps.supported_methods.end(), m) != caps.supported_methods.end())
            common.push_back(m);
    if (!offer.client_did_methods.empty() && common.empty()) return Rejection{RejectionReason::no_common_method};

    if (!offer.presentation_protocols.empty()) {
        for (auto &p : offer.presentation_protocols) {
            if (std::find(caps.supported_presentation_protocols.begin(), caps.supported_presentation_protocols.end(),
                          p) != caps.supported_presentation_protocols.end()) {
                agreement.agreed_presentation_protocol = p;
                break;
            }
        }
        if (!agreement.agreed_presentation_protocol)
            return Rejection{RejectionReason::no_common_presentation_protocol};
    }
    agreement.identification_enabled = agreement.agreed_presentation_protocol.has_value();

    if (caps.announce_methods && (caps.verify_client_did || agreement.identification_enabled))
        agreement.server_did_methods = std::move(common);

    const auto &identity = caps.identities[agreement.identity_index];
    bool by_name = offer.target_server.has_value();
    if (!identity.did_based())
        agreement.server_auth_mode = by_name ? ServerAuthMode::cert : ServerAuthMode::cert_default;
    else if (identity.has_credentials && agreement.identification_enabled)
        agreement.server_auth_mode = by_name ? ServerAuthMode::did_vc : ServerAuthMode::did_vc_default;
    else
        agreement.server_auth_mode = by_name ? ServerAuthMode::did : ServerAuthMode::did_default;
    return agreement;
}

Bytes encode_name_list(const std::string &host_name) {
    if (host_name.empty()) malformed("empty server name");
    if (host_name.size() + 5 > kMaxPayload) throw Error(ErrorCode::OversizePayload, "server name too long");
    Bytes out;
    codec::put_u16(out, static_cast<std::uint16_t>(host_name.size() + 3));
    out.push_back(0); // host_name
    codec::put_u16(out, static_cast<std::uint16_t>(host_name.size()));
    out.insert(out.end(), host_name.begin(), host_name.end());
    return out;
}

std::string decode_name_list(ByteView p) {
    if (p.size() < 2 || codec::get_u16(p.data()) != p.size() - 2) malformed("server_name list length");
    std::size_t pos = 2;
    std::optional<std::string> host;
    while (pos < p.size()) {
        if (p.size() - pos < 3) malformed("truncated server_name entry");
        auto type = p[pos];
        std::size_t len = codec::get_u16(p.data() + pos + 1);
        pos += 3;
        if (p.size() - pos < len) malformed("truncated server_name entry");
        if (type == 0) {
            if (host) malformed("duplicate host_name");
            if (len == 0) malformed("empty host_name");
            host.emplace(reinterpret_cast<const char *>(p.data() + pos), len);
        }
        pos += len;
    }
    if (!host) malformed("no host_name entry");
    return *host;
}

Bytes encode_did(const Did &did) {
    const auto &s = did.full();
    if (s.size() + 2 > kMaxPayload) throw Error(ErrorCode::OversizePayload, "DID too long for CNI");
    Bytes out;
    codec::put_u16(out, static_cast<std::uint16_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

Did decode_did(ByteView p) {
    if (p.size() < 2 || codec::get_u16(p.data()) != p.size() - 2) malformed("CNI length");
    try {
        return Did::parse(std::string_view(reinterpret_cast<const char *>(p.data() + 2), p.size() - 2));
    } catch (const Error &) {
        malformed("CNI does not carry a DID");
    }
}

Bytes encode_list(const std::vector<std::string> &entries) {
    if (entries.size() > 0xFFFF) throw Error(ErrorCode::OversizePayload, "too many list entries");
    Bytes out;
    codec::put_u16(out, static_cast<std::uint16_t>(entries.size()));
    for (auto &e : entries) {
        if (e.empty()) malformed("empty list entry");
        if (e.size() > 0xFF) throw Error(ErrorCode::OversizePayload, "list entry exceeds 255 bytes");
        out.push_back(static_cast<std::uint8_t>(e.size()));
        out.insert(out.end(), e.begin(), e.end());
    }
    check_size(out);
    return out;
}

std::vector<std::string> decode_list(ByteView p) {
    if (p.size() < 2) malformed("list count");
    std::size_t count = codec::get_u16(p.data());
    std::size_t pos = 2;
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (pos >= p.size()) malformed("truncated list");
        std::size_t len = p[pos++];
        if (len == 0) malformed("empty list entry");
        if (p.size() - pos < len) malformed("truncated list entry");
        out.emplace_back(reinterpret_cast<const char *>(p.data() + pos), len);
        pos += len;
    }
    if (pos != p.size()) malformed("trailing bytes after list");
    return out;
}

std::vector<Extension> encode_extensions(const OfferExtensions &offer) {
    std::vector<Extension> out;
    if (offer.target_server) out.push_back({ext::sni, encode_name_list(*offer.target_server)});
    if (offer.client_did) out.push_back({ext::cni, encode_did(*offer.client_did)});
    if (!offer.client_did_methods.empty()) out.push_back({ext::cmi, encode_list(offer.client_did_methods)});
    if (!offer.presentation_protocols.empty()) out.push_back({ext::cpp, encode_list(offer.presentation_protocols)});
    return out;
}

std::vector<Extension> encode_extensions(const AgreementExtensions &agreement) {
    std::vector<Extension> out;
    if (!agreement.server_did_methods.empty()) out.push_back({ext::smi, encode_list(agreement.server_did_methods)});
    if (agreement.agreed_presentation_protocol)
        out.push_back({ext::spa, encode_list({*agreement.agreed_presentation_protocol})});
    return out;
}

namespace {

void reject_duplicates(const std::vector<Extension> &extensions) {
    std::vector<std::uint16_t> codes;
    for (auto &e : extensions) codes.push_back(e.code);
    std::sort(codes.begin(), codes.end());
    if (std::adjacent_find(codes.begin(), codes.end()) != codes.end()) malformed("duplicate extension");
}

} // namespace

OfferExtensions decode_offer(const std::vector<Extension> &extensions) {
    reject_duplicates(extensions);
    OfferExtensions offer;
    for (auto &e : extensions) {
        switch (e.code) {
        case ext::sni: offer.target_server = decode_name_list(e.payload); break;
        case ext::cni: offer.client_did = decode_did(e.payload); break;
        case ext::cmi:
            offer.client_did_methods = decode_list(e.payload);
            if (offer.client_did_methods.empty()) malformed("empty CMI");
            break;
        case ext::cpp:
            offer.presentation_protocols = decode_list(e.payload);
            if (offer.presentation_protocols.empty()) malformed("empty CPP");
            break;
        default: break;
        }
    }
    return offer;
}

AgreementExtensions decode_agreement(const std::vector<Extension> &extensions) {
    reject_duplicates(extensions);
    AgreementExtensions agreement;
    for (auto &e : extensions) {
        switch (e.code) {
        case ext::smi:
            agreement.server_did_methods = decode_list(e.payload);
            if (agreement.server_did_methods.empty()) malformed("empty SMI");
            break;
        case ext::spa: {
            auto list = decode_list(e.payload);
            if (list.size() != 1) malformed("SPA must name exactly one protocol");
            agreement.agreed_presentation_protocol = list[0];
            break;
        }
        default: break;
        }
    }
    return agreement;
}

Bytes serialize_extensions(const std::vector<Extension> &extensions) {
    Bytes out;
    for (auto &e : extensions) {
        check_size(e.payload);
        codec::put_u16(out, e.code);
        codec::put_u16(out, static_cast<std::uint16_t>(e.payload.size()));
        out.insert(out.end(), e.payload.begin(), e.payload.end());
    }
    return out;
}

std::vector<Extension> parse_extensions(ByteView block) {
    std::vector<Extension> out;
    std::size_t pos = 0;
    while (pos < block.size()) {
        if (block.size() - pos < 4) malformed("truncated extension header");
        auto code = codec::get_u16(block.data() + pos);
        std::size_t len = codec::get_u16(block.data() + pos + 2);
        pos += 4;
        if (block.size() - pos < len) malformed("truncated extension payload");
        out.push_back({code, Bytes(block.begin() + pos, block.begin() + pos + len)});
        pos += len;
    }
    return out;
}

ExtensionSet extension_set(const OfferExtensions &offer, const AgreementExtensions &agreement) {
    ExtensionSet s;
    s[static_cast<int>(ExtensionId::SNI)] = offer.target_server.has_value();
    s[static_cast<int>(ExtensionId::CNI)] = offer.client_did.has_value();
    s[static_cast<int>(ExtensionId::CMI)] = !offer.client_did_methods.empty();
    s[static_cast<int>(ExtensionId::SMI)] = !agreement.server_did_methods.empty();
    s[static_cast<int>(ExtensionId::CPP)] = !offer.presentation_protocols.empty();
    s[static_cast<int>(ExtensionId::SPA)] = agreement.agreed_presentation_protocol.has_value();
    return s;
}

std::string describe(ExtensionSet set) {
    std::string out;
    for (int i = 0; i < 6; ++i) {
        if (!set[i]) continue;
        if (!out.empty()) out += ",";
        out += cell_name(static_cast<ExtensionId>(i));
    }
    return out.empty() ? "-" : out;
}

const std::vector<ScenarioRow> &scenario_rows() {
    using C = ClientAuthMode;
    using S = ServerAuthMode;
    constexpr auto Y = Cell::yes, N = Cell::no, O = Cell::optional;
    constexpr auto L = RowGroup::legacy, D = RowGroup::did_vc_enabled, H = RowGroup::hybrid;
    static const std::vector<ScenarioRow> rows = {
        {1, L, C::none, S::cert_default, N, N, N, N, false, "-", "Cer_def"},
        {2, L, C::none, S::cert, Y, N, N, N, false, "-", "Cer"},
        {3, L, C::cert, S::cert_default, N, N, N, N, false, "Cer", "Cer_def"},
        {4, L, C::cert, S::cert, Y, N, N, N, false, "Cer", "Cer"},
        {5, D, C::none, S::did_default, N, N, O, N, false, "-", "DID_def"},
        {6, D, C::none, S::did, Y, N, N, N, false, "-", "DID"},
        {7, D, C::did, S::did_default, N, N, Y, Y, false, "DID", "DID_def"},
        {8, D, C::did, S::did_default, N, Y, N, N, false, "DID", "DID_def"},
        {9, D, C::did, S::did, Y, N, Y, Y, false, "DID", "DID"},
        {10, D, C::did, S::did, Y, Y, N, N, false, "DID", "DID"},
        {11, D, C::none, S::did_vc_default, N, N, Y, Y, true, "-", "DID_def+VC"},
        {12, D, C::none, S::did_vc, Y, N, Y, Y, true, "-", "DID+VC"},
        {13, D, C::did_vc, S::did_vc_default, N, O, Y, Y, true, "DID+VC", "DID_def+VC"},
        {14, D, C::did_vc, S::did_vc, Y, O, Y, Y, true, "DID+VC", "DID+VC"},
        {15, D, C::did_vc, S::did_default, N, O, O, O, true, "DID+VC", "DID_def"},
        {16, D, C::did_vc, S::did, Y, O, O, O, true, "DID+VC", "DID"},
        {17, H, C::did, S::cert_default, N, Y, N, N, false, "DID", "Cer_def"},
        {18, H, C::did, S::cert_default, N, N, Y, Y, false, "DID", "Cer_def"},
        {19, H, C::did, S::cert, Y, N, O, N, false, "DID", "Cer"},
        {20, H, C::cert, S::did_default, N, N, O, N, false, "Cer", "DID_def"},
        {21, H, C::cert, S::did, Y, N, N, N, false, "Cer", "DID"},
        {22, H, C::did_vc, S::cert_default, N, O, Y, Y, true, "DID+VC", "Cer_def"},
        {23, H, C::did_vc, S::cert, Y, O, Y, Y, true, "DID+VC", "Cer"},
        {24, H, C::cert, S::did_vc_default, N, N, Y, Y, true, "Cer", "DID_def+VC"},
        {25, H, C::cert, S::did_vc, Y, N, Y, Y, true, "Cer", "DID+VC"},
    };
    return rows;
}

ScenarioClass classify_scenario(const NegotiationOffer &offer, const NegotiationAgreement &agreement) {
    auto set = extension_set(offer, agreement);
    bool cpp = set[static_cast<int>(ExtensionId::CPP)];
    bool spa = set[static_cast<int>(ExtensionId::SPA)];
    for (const auto &row : scenario_rows()) {
        if (row.client != offer.client_auth_mode || row.server != agreement.server_auth_mode) continue;
        if (!cell_matches(row.sni, set[static_cast<int>(ExtensionId::SNI)]) ||
            !cell_matches(row.cni, set[static_cast<int>(ExtensionId::CNI)]) ||
            !cell_matches(row.cmi, set[static_cast<int>(ExtensionId::CMI)]) ||
            !cell_matches(row.smi, set[static_cast<int>(ExtensionId::SMI)]))
            continue;
        if (cpp != row.credentials_involved || spa != row.credentials_involved) continue;
        return {row.row, row.group, row.client_label, row.server_label, set};
    }
    throw Error(ErrorCode::NoMatchingRow, std::string(to_string(offer.client_auth_mode)) + "/" +
                                              std::string(to_string(agreement.server_auth_mode)) + " with " +
                                              describe(set));
}

std::vector<ConformanceCase> conformance_cases() {
    auto validity = Validity::days(30);
    auto ca = make_ca_root("Conformance Root", validity);
    auto cer_default = make_server_identity(
        issue_ca_certificate(ca, "default.example", KeyPair::generate(KeyType::Ed25519), validity));
    auto cer_named =
        make_server_identity(issue_ca_certificate(ca, "named.example", KeyPair::generate(KeyType::Ed25519), validity));
    auto did_identity = [&](bool creds) {
        auto key = KeyPair::generate(KeyType::Ed25519);
        return make_server_identity(make_did_certificate(make_key_did(key.public_key()).first, key, validity), creds);
    };
    auto did_default = did_identity(false), did_named = did_identity(false);
    auto vc_default = did_identity(true), vc_named = did_identity(true);
    auto client_did = make_key_did(KeyPair::generate(KeyType::Ed25519).public_key()).first;

    auto options = [](Cell c) {
        if (c == Cell::optional) return std::vector<bool>{true, false};
        return std::vector<bool>{c == Cell::yes};
    };

    std::vector<ConformanceCase> out;
    for (const auto &row : scenario_rows()) {
        for (bool sni : options(row.sni))
            for (bool cni : options(row.cni))
                for (bool cmi : options(row.cmi))
                    for (bool smi : options(row.smi)) {
                        if (smi && !cmi) continue;
                        ConformanceCase c{row.row, {}, {}, {}};
                        c.offer.client_auth_mode = row.client;
                        c.caps.supported_methods = {"vdrsim", "key"};
                        c.caps.verify_client_did =
                            row.client == ClientAuthMode::did || row.client == ClientAuthMode::did_vc;

                        const ServerIdentity *chosen = nullptr;
                        const ServerIdentity *other = nullptr;
                        switch (row.server) {
                        case ServerAuthMode::cert_default: chosen = &cer_default; other = &did_named; break;
                        case ServerAuthMode::cert: chosen = &cer_named; other = &did_default; break;
                        case ServerAuthMode::did_default: chosen = &did_default; other = &cer_named; break;
                        case ServerAuthMode::did: chosen = &did_named; other = &cer_default; break;
                        case ServerAuthMode::did_vc_default: chosen = &vc_default; other = &cer_named; break;
                        case ServerAuthMode::did_vc: chosen = &vc_named; other = &did_default; break;
                        }
                        // Named selections sit behind a different default.
                        if (sni) {
                            c.caps.identities = {*other, *chosen};
                            c.caps.default_identity = 0;
                            c.offer.target_server = chosen->name;
                        } else {
                            c.caps.identities = {*chosen, *other};
                            c.caps.default_identity = 0;
                        }
                        if (cni) c.offer.client_did = client_did;
                        if (cmi) c.offer.client_did_methods = {"key", "vdrsim"};
                        if (row.credentials_involved) c.offer.presentation_protocols = {std::string(kDifPe2)};
                        c.caps.announce_methods = !(cmi && !smi);

                        c.expected[static_cast<int>(ExtensionId::SNI)] = sni;
                        c.expected[static_cast<int>(ExtensionId::CNI)] = cni;
                        c.expected[static_cast<int>(ExtensionId::CMI)] = cmi;
                        c.expected[static_cast<int>(ExtensionId::SMI)] = smi;
                        c.expected[static_cast<int>(ExtensionId::CPP)] = row.credentials_involved;
                        c.expected[static_cast<int>(ExtensionId::SPA)] = row.credentials_involved;
                        out.push_back(std::move(c));
                    }
    }
    return out;
}

} // namespace didlink::negotiation

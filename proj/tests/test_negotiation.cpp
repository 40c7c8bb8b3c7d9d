#include <gtest/gtest.h>

#include <random>
#include <set>

#include "didlink/error.hpp"
#include "didlink/negotiation.hpp"

using namespace didlink;
using namespace didlink::negotiation;

namespace {

ErrorCode code_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::UsageError;
}

std::string random_token(std::mt19937_64 &rng, std::size_t max_len) {
    static const std::string chars = "abcdefghijklmnopqrstuvwxyz0123456789-._:";
    std::uniform_int_distribution<std::size_t> len(1, max_len);
    std::string s(len(rng), 'a');
    for (auto &c : s) c = chars[rng() % chars.size()];
    return s;
}

OfferExtensions random_offer(std::mt19937_64 &rng) {
    OfferExtensions o;
    if (rng() % 2) o.target_server = rng() % 2 ? "did:vdrsim:" + random_token(rng, 40) : random_token(rng, 60);
    if (rng() % 2) o.client_did = Did::parse("did:" + std::string(1, 'a' + rng() % 26) + ":" + random_token(rng, 80));
    for (std::size_t i = 0, n = rng() % 5; i < n; ++i) o.client_did_methods.push_back(random_token(rng, 12));
    for (std::size_t i = 0, n = rng() % 3; i < n; ++i) o.presentation_protocols.push_back(random_token(rng, 255));
    return o;
}

ServerIdentity did_identity(bool creds = false) {
    auto key = KeyPair::generate(KeyType::Ed25519);
    return make_server_identity(make_did_certificate(make_key_did(key.public_key()).first, key, Validity::days(1)),
                                creds);
}

} // namespace

TEST(ExtensionCodec, CmiWireFormat) {
    OfferExtensions offer;
    offer.client_did_methods = {"key", "vdrsim"};
    auto exts = encode_extensions(offer);
    ASSERT_EQ(exts.size(), 1u);
    EXPECT_EQ(exts[0].code, 0xFF01);
    Bytes expected = {0x00, 0x02, 0x03, 'k', 'e', 'y', 0x06, 'v', 'd', 'r', 's', 'i', 'm'};
    EXPECT_EQ(exts[0].payload, expected);
}

TEST(ExtensionCodec, CniAndSniWireFormat) {
    OfferExtensions offer;
    offer.client_did = Did::parse("did:key:z1");
    offer.target_server = "did:vdrsim:ab";
    auto exts = encode_extensions(offer);
    ASSERT_EQ(exts.size(), 2u);
    EXPECT_EQ(exts[0].code, 0x0000);
    Bytes sni = {0x00, 0x10, 0x00, 0x00, 0x0d};
    for (char c : std::string("did:vdrsim:ab")) sni.push_back(static_cast<std::uint8_t>(c));
    EXPECT_EQ(exts[0].payload, sni);
    EXPECT_EQ(exts[1].code, 0xFF00);
    Bytes cni = {0x00, 0x0a};
    for (char c : std::string("did:key:z1")) cni.push_back(static_cast<std::uint8_t>(c));
    EXPECT_EQ(exts[1].payload, cni);
}

TEST(ExtensionCodec, AgreementWireFormat) {
    AgreementExtensions a;
    a.server_did_methods = {"vdrsim"};
    a.agreed_presentation_protocol = "dif-pe-2";
    auto exts = encode_extensions(a);
    ASSERT_EQ(exts.size(), 2u);
    EXPECT_EQ(exts[0].code, 0xFF02);
    EXPECT_EQ(exts[1].code, 0xFF04);
    Bytes spa = {0x00, 0x01, 0x08, 'd', 'i', 'f', '-', 'p', 'e', '-', '2'};
    EXPECT_EQ(exts[1].payload, spa);
}

TEST(ExtensionCodec, EmptyOfferEncodesToNothing) {
    EXPECT_TRUE(encode_extensions(OfferExtensions{}).empty());
    EXPECT_TRUE(encode_extensions(AgreementExtensions{}).empty());
    EXPECT_EQ(decode_offer({}), OfferExtensions{});
}

TEST(ExtensionCodec, RandomOfferRoundTrip) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 10000; ++i) {
        auto offer = random_offer(rng);
        auto exts = encode_extensions(offer);
        ASSERT_EQ(decode_offer(exts), offer);
        ASSERT_EQ(decode_offer(parse_extensions(serialize_extensions(exts))), offer);
    }
}

TEST(ExtensionCodec, RandomAgreementRoundTrip) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 10000; ++i) {
        AgreementExtensions a;
        for (std::size_t j = 0, n = rng() % 4; j < n; ++j) a.server_did_methods.push_back(random_token(rng, 20));
        if (rng() % 2) a.agreed_presentation_protocol = random_token(rng, 30);
        ASSERT_EQ(decode_agreement(parse_extensions(serialize_extensions(encode_extensions(a)))), a);
    }
}

TEST(ExtensionCodec, UnknownCodesIgnored) {
    OfferExtensions offer;
    offer.client_did_methods = {"key"};
    auto exts = encode_extensions(offer);
    exts.push_back({0xFF7E, {1, 2, 3}});
    exts.push_back({0x0010, {}});
    EXPECT_EQ(decode_offer(exts), offer);
}

TEST(ExtensionCodec, MalformedPayloads) {
    EXPECT_EQ(code_of([] { decode_offer({{ext::cmi, {0x00, 0x02, 0x03, 'k', 'e', 'y'}}}); }),
              ErrorCode::MalformedPayload);
    EXPECT_EQ(code_of([] { decode_offer({{ext::cmi, {0x00, 0x01, 0x01, 'k', 'x'}}}); }), ErrorCode::MalformedPayload);
    EXPECT_EQ(code_of([] { decode_offer({{ext::cmi, {0x00}}}); }), ErrorCode::MalformedPayload);
    EXPECT_EQ(code_of([] { decode_offer({{ext::cmi, {0x00, 0x00}}}); }), ErrorCode::MalformedPayload);
    EXPECT_EQ(code_of([] { decode_offer({{ext::cni, {0x00, 0x05, 'h', 't', 't', 'p', ':'}}}); }),
              ErrorCode::MalformedPayload);
    EXPECT_EQ(code_of([] { decode_offer({{ext::cni, {0x00, 0x09, 'd'}}}); }), ErrorCode::MalformedPayload);
    EXPECT_EQ(code_of([] { decode_agreement({{ext::spa, {0x00, 0x00}}}); }), ErrorCode::MalformedPayload);
    EXPECT_EQ(code_of([] { decode_offer({{ext::cmi, {0x00, 0x01, 0x01, 'k'}}, {ext::cmi, {0x00, 0x01, 0x01, 'k'}}}); }),
              ErrorCode::MalformedPayload);
    EXPECT_EQ(code_of([] { parse_extensions(Bytes{0xFF, 0x01, 0x00, 0x05, 0x00}); }), ErrorCode::MalformedPayload);
}

TEST(ExtensionCodec, Oversize) {
    OfferExtensions offer;
    offer.client_did_methods = {std::string(256, 'm')};
    EXPECT_EQ(code_of([&] { encode_extensions(offer); }), ErrorCode::OversizePayload);
    OfferExtensions many;
    many.presentation_protocols.assign(300, std::string(255, 'p'));
    EXPECT_EQ(code_of([&] { encode_extensions(many); }), ErrorCode::OversizePayload);
    OfferExtensions big_did;
    big_did.client_did = Did::parse("did:x:" + std::string(70000, 'a'));
    EXPECT_EQ(code_of([&] { encode_extensions(big_did); }), ErrorCode::OversizePayload);
}

TEST(Negotiate, MethodIntersectionKeepsClientOrder) {
    ServerCaps caps;
    caps.identities = {did_identity()};
    caps.supported_methods = {"vdrsim", "key"};
    caps.verify_client_did = true;
    NegotiationOffer offer;
    offer.client_auth_mode = ClientAuthMode::did;
    offer.client_did_methods = {"key", "web", "vdrsim"};
    auto a = std::get<NegotiationAgreement>(negotiate(offer, caps));
    EXPECT_EQ(a.server_did_methods, (std::vector<std::string>{"key", "vdrsim"}));

    caps.supported_methods = {"vdrsim"};
    offer.client_did_methods = {"key", "vdrsim"};
    a = std::get<NegotiationAgreement>(negotiate(offer, caps));
    EXPECT_EQ(a.server_did_methods, std::vector<std::string>{"vdrsim"});
}

TEST(Negotiate, NoCommonMethod) {
    ServerCaps caps;
    caps.identities = {did_identity()};
    caps.supported_methods = {"vdrsim"};
    NegotiationOffer offer;
    offer.client_auth_mode = ClientAuthMode::did;
    offer.client_did_methods = {"key"};
    auto out = negotiate(offer, caps);
    ASSERT_TRUE(std::holds_alternative<Rejection>(out));
    EXPECT_EQ(std::get<Rejection>(out).reason, RejectionReason::no_common_method);
}

TEST(Negotiate, PresentationAgreement) {
    ServerCaps caps;
    caps.identities = {did_identity(true)};
    caps.supported_presentation_protocols = {"other", "dif-pe-2"};
    NegotiationOffer offer;
    offer.presentation_protocols = {"dif-pe-2", "other"};
    auto a = std::get<NegotiationAgreement>(negotiate(offer, caps));
    EXPECT_EQ(a.agreed_presentation_protocol, "dif-pe-2");
    EXPECT_TRUE(a.identification_enabled);
    EXPECT_EQ(a.server_auth_mode, ServerAuthMode::did_vc_default);

    offer.presentation_protocols = {"unknown"};
    EXPECT_EQ(std::get<Rejection>(negotiate(offer, caps)).reason, RejectionReason::no_common_presentation_protocol);

    offer.presentation_protocols.clear();
    a = std::get<NegotiationAgreement>(negotiate(offer, caps));
    EXPECT_FALSE(a.identification_enabled);
    EXPECT_FALSE(a.agreed_presentation_protocol);
    EXPECT_EQ(a.server_auth_mode, ServerAuthMode::did_default);
}

TEST(Negotiate, ServerNameSelection) {
    ServerCaps caps;
    caps.identities = {did_identity(), did_identity()};
    NegotiationOffer offer;
    offer.target_server = caps.identities[1].name;
    auto a = std::get<NegotiationAgreement>(negotiate(offer, caps));
    EXPECT_EQ(a.identity_index, 1u);
    EXPECT_EQ(a.server_auth_mode, ServerAuthMode::did);

    offer.target_server = "did:key:z6MkUnknown";
    EXPECT_EQ(std::get<Rejection>(negotiate(offer, caps)).reason, RejectionReason::unknown_server_did);

    offer.target_server.reset();
    a = std::get<NegotiationAgreement>(negotiate(offer, caps));
    EXPECT_EQ(a.identity_index, 0u);
    EXPECT_EQ(a.server_auth_mode, ServerAuthMode::did_default);
}

TEST(Negotiate, DeterministicAndSubsetProperties) {
    std::mt19937_64 rng(3);
    std::vector<std::string> universe = {"key", "peer", "vdrsim", "web", "ion"};
    std::vector<std::string> protocols = {"dif-pe-2", "aries-pp-2", "oid4vp"};
    ServerCaps caps;
    caps.identities = {did_identity(true)};
    caps.verify_client_did = true;
    for (int i = 0; i < 2000; ++i) {
        caps.supported_methods.clear();
        for (auto &m : universe)
            if (rng() % 2) caps.supported_methods.push_back(m);
        caps.supported_presentation_protocols.clear();
        for (auto &p : protocols)
            if (rng() % 2) caps.supported_presentation_protocols.push_back(p);
        NegotiationOffer offer;
        for (auto &m : universe)
            if (rng() % 2) offer.client_did_methods.push_back(m);
        for (auto &p : protocols)
            if (rng() % 3 == 0) offer.presentation_protocols.push_back(p);

        auto first = negotiate(offer, caps);
        auto second = negotiate(offer, caps);
        ASSERT_EQ(first.index(), second.index());
        if (auto *a = std::get_if<NegotiationAgreement>(&first)) {
            auto &b = std::get<NegotiationAgreement>(second);
            ASSERT_EQ(static_cast<const AgreementExtensions &>(*a), static_cast<const AgreementExtensions &>(b));
            for (auto &m : a->server_did_methods)
                ASSERT_NE(std::find(offer.client_did_methods.begin(), offer.client_did_methods.end(), m),
                          offer.client_did_methods.end());
            if (a->agreed_presentation_protocol)
                ASSERT_NE(std::find(offer.presentation_protocols.begin(), offer.presentation_protocols.end(),
                                    *a->agreed_presentation_protocol),
                          offer.presentation_protocols.end());
            ASSERT_EQ(a->identification_enabled, a->agreed_presentation_protocol.has_value());
        }
    }
}

TEST(Classify, NamedExamples) {
    ServerCaps caps;
    caps.identities = {did_identity()};
    caps.supported_methods = {"vdrsim"};
    NegotiationOffer offer;
    auto a = std::get<NegotiationAgreement>(negotiate(offer, caps));
    auto cls = classify_scenario(offer, a);
    EXPECT_EQ(cls.row, 5);
    EXPECT_EQ(cls.client_label, "-");
    EXPECT_EQ(cls.server_label, "DID_def");

    offer.client_did_methods = {"vdrsim"};
    EXPECT_EQ(classify_scenario(offer, std::get<NegotiationAgreement>(negotiate(offer, caps))).row, 5);

    auto root = make_ca_root("r", Validity::days(1));
    ServerCaps legacy;
    legacy.identities = {make_server_identity(
        issue_ca_certificate(root, "h.example", KeyPair::generate(KeyType::Ed25519), Validity::days(1)))};
    NegotiationOffer cert_client;
    cert_client.client_auth_mode = ClientAuthMode::cert;
    cls = classify_scenario(cert_client, std::get<NegotiationAgreement>(negotiate(cert_client, legacy)));
    EXPECT_EQ(cls.row, 3);
    EXPECT_EQ(cls.group, RowGroup::legacy);
}

TEST(Classify, OutsideMatrix) {
    NegotiationOffer offer;
    offer.client_auth_mode = ClientAuthMode::cert;
    NegotiationAgreement agreement;
    agreement.server_auth_mode = ServerAuthMode::cert_default;
    agreement.server_did_methods = {"key"};
    EXPECT_EQ(code_of([&] { classify_scenario(offer, agreement); }), ErrorCode::NoMatchingRow);
}

TEST(Classify, RowsAreMutuallyExclusive) {
    // Every concrete combination matches at most one row.
    std::set<std::string> seen;
    for (auto &row : scenario_rows()) {
        for (int bits = 0; bits < 16; ++bits) {
            bool cells[4] = {bool(bits & 1), bool(bits & 2), bool(bits & 4), bool(bits & 8)};
            Cell spec[4] = {row.sni, row.cni, row.cmi, row.smi};
            bool ok = true;
            for (int i = 0; i < 4; ++i)
                ok &= spec[i] == Cell::optional || (spec[i] == Cell::yes) == cells[i];
            if (!ok) continue;
            auto key = std::to_string(static_cast<int>(row.client)) + "/" + std::to_string(static_cast<int>(row.server)) +
                       "/" + std::to_string(bits) + "/" + std::to_string(row.credentials_involved);
            EXPECT_TRUE(seen.insert(key).second) << "row " << row.row;
        }
    }
    EXPECT_EQ(scenario_rows().size(), 25u);
}

TEST(Classify, EveryRowReproducible) {
    auto cases = conformance_cases();
    std::set<int> rows;
    for (auto &c : cases) {
        auto out = negotiate(c.offer, c.caps);
        ASSERT_TRUE(std::holds_alternative<NegotiationAgreement>(out)) << "row " << c.row;
        auto cls = classify_scenario(c.offer, std::get<NegotiationAgreement>(out));
        EXPECT_EQ(cls.row, c.row);
        EXPECT_EQ(cls.extensions_present, c.expected) << "row " << c.row << " got " << describe(cls.extensions_present);
        // The wire form reproduces the same classification.
        NegotiationOffer wire_offer;
        static_cast<OfferExtensions &>(wire_offer) = decode_offer(encode_extensions(c.offer));
        wire_offer.client_auth_mode = c.offer.client_auth_mode;
        NegotiationAgreement wire_agreement = std::get<NegotiationAgreement>(out);
        static_cast<AgreementExtensions &>(wire_agreement) = decode_agreement(encode_extensions(wire_agreement));
        EXPECT_EQ(classify_scenario(wire_offer, wire_agreement).row, c.row);
        rows.insert(c.row);
    }
    EXPECT_EQ(rows.size(), 25u);
}

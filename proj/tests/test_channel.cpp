#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "didlink/channel.hpp"
#include "didlink/error.hpp"
#include "support.hpp"

using namespace didlink;
using namespace didlink::channel;
namespace neg = didlink::negotiation;
using didlink::testing::anchored_identity;
using didlink::testing::LedgerHandler;

namespace {

class SlowHandler final : public MethodHandler {
  public:
    SlowHandler(std::shared_ptr<MethodHandler> inner, std::chrono::milliseconds delay)
        : inner_(std::move(inner)), delay_(delay) {}
    DidDocument resolve(const Did &did) override {
        std::this_thread::sleep_for(delay_);
        return inner_->resolve(did);
    }

  private:
    std::shared_ptr<MethodHandler> inner_;
    std::chrono::milliseconds delay_;
};

struct Outcome {
    std::optional<SecureSession> session;
    std::optional<ErrorCode> error;
    std::string detail;
};

template <typename Fn> Outcome capture(Fn &&fn) {
    Outcome out;
    try {
        out.session.emplace(fn());
    } catch (const Error &e) {
        out.error = e.code();
        out.detail = e.detail();
    }
    return out;
}

struct Pair {
    Outcome client;
    Outcome server;
};

Pair handshake(const ServerConfig &server_cfg, const ClientConfig &client_cfg) {
    auto listener = net::TcpListener::bind({"127.0.0.1", 0});
    auto endpoint = listener.local_endpoint();
    TlsServer server(server_cfg);
    auto server_side = std::async(std::launch::async, [&] { return capture([&] { return server.accept(listener); }); });
    TlsClient client(client_cfg);
    Pair p;
    p.client = capture([&] { return client.connect(endpoint); });
    // Hello-transport clients only learn about late server failures on read.
    if (p.client.session && client_cfg.transport == ExtensionTransport::hello) {
        std::uint8_t b;
        try {
            p.client.session->try_read(std::span<std::uint8_t>(&b, 1));
        } catch (const Error &) {
        }
    }
    p.server = server_side.get();
    return p;
}

class ChannelTest : public ::testing::Test {
  protected:
    void SetUp() override {
        ledger = std::make_shared<vdr::Ledger>();
        handler = std::make_shared<LedgerHandler>(ledger);
        resolver = std::make_shared<DidResolver>();
        resolver->register_handler("vdrsim", handler);
        server_id.emplace(anchored_identity(*ledger));
        client_id.emplace(anchored_identity(*ledger));
        server_bundle_ = make_did_certificate(server_id->document.id(), server_id->key, Validity::days(1));
        client_bundle_ = make_did_certificate(client_id->document.id(), client_id->key, Validity::days(1));
    }

    VerifySettings settings(bool parallel = true) const {
        VerifySettings v;
        v.resolver = resolver;
        v.cache_policy = CachePolicy::force();
        v.parallel = parallel;
        return v;
    }

    ServerConfig server_config(ExtensionTransport t = ExtensionTransport::preamble) const {
        ServerConfig cfg;
        cfg.caps.supported_methods = {"vdrsim", "key"};
        cfg.caps.identities = {neg::make_server_identity(*server_bundle_, true)};
        cfg.caps.verify_client_did = true;
        cfg.verify = settings();
        cfg.transport = t;
        return cfg;
    }

    ClientConfig client_config(ExtensionTransport t = ExtensionTransport::preamble) const {
        ClientConfig cfg;
        cfg.identity = client_bundle_;
        cfg.offer.target_server = server_id->document.id().full();
        cfg.offer.client_did = client_id->document.id();
        cfg.offer.client_did_methods = {"vdrsim"};
        cfg.verify = settings();
        cfg.transport = t;
        return cfg;
    }

    std::shared_ptr<vdr::Ledger> ledger;
    std::shared_ptr<LedgerHandler> handler;
    std::shared_ptr<DidResolver> resolver;
    std::optional<didlink::testing::Identity> server_id;
    std::optional<didlink::testing::Identity> client_id;
    std::optional<CertBundle> server_bundle_;
    std::optional<CertBundle> client_bundle_;
};

class BothTransports : public ChannelTest, public ::testing::WithParamInterface<ExtensionTransport> {};

TEST_P(BothTransports, MutualDidAuthentication) {
    auto p = handshake(server_config(GetParam()), client_config(GetParam()));
    ASSERT_TRUE(p.client.session) << p.client.detail;
    ASSERT_TRUE(p.server.session) << p.server.detail;
    auto &c = *p.client.session;
    auto &s = *p.server.session;
    EXPECT_EQ(c.peer().mode, PeerMode::did);
    EXPECT_EQ(c.peer().peer_did->full(), server_id->document.id().full());
    EXPECT_EQ(s.peer().mode, PeerMode::did);
    EXPECT_EQ(s.peer().peer_did->full(), client_id->document.id().full());
    EXPECT_EQ(c.peer().binding->matched_method_id, "#key-1");
    EXPECT_EQ(c.negotiated().server_did_methods, std::vector<std::string>{"vdrsim"});
    EXPECT_EQ(s.negotiated().server_did_methods, std::vector<std::string>{"vdrsim"});
    EXPECT_EQ(s.offer().client_did->full(), client_id->document.id().full());
    EXPECT_EQ(s.negotiated().server_auth_mode, neg::ServerAuthMode::did);
    EXPECT_EQ(s.offer().client_auth_mode, neg::ClientAuthMode::did);
    EXPECT_EQ(c.transport(), GetParam());

    c.write(as_bytes("ping"));
    std::uint8_t buf[8];
    auto n = s.read(buf, std::chrono::milliseconds(2000));
    EXPECT_EQ(std::string(buf, buf + n), "ping");
    s.write(as_bytes("pong"));
    n = c.read(buf, std::chrono::milliseconds(2000));
    EXPECT_EQ(std::string(buf, buf + n), "pong");
    EXPECT_GT(c.bytes_sent(), 0u);
    EXPECT_GT(c.bytes_received(), 0u);
}

TEST_P(BothTransports, PresentationProtocolAgreement) {
    auto ccfg = client_config(GetParam());
    ccfg.offer.presentation_protocols = {"other-proto", std::string(neg::kDifPe2)};
    auto p = handshake(server_config(GetParam()), ccfg);
    ASSERT_TRUE(p.client.session) << p.client.detail;
    ASSERT_TRUE(p.server.session) << p.server.detail;
    EXPECT_EQ(p.client.session->negotiated().agreed_presentation_protocol, std::string(neg::kDifPe2));
    EXPECT_TRUE(p.server.session->negotiated().identification_enabled);
    EXPECT_EQ(p.client.session->peer().mode, PeerMode::did_pending_vc);
    EXPECT_EQ(p.server.session->peer().mode, PeerMode::did_pending_vc);
    EXPECT_EQ(p.server.session->negotiated().server_auth_mode, neg::ServerAuthMode::did_vc);
}

TEST_P(BothTransports, RejectionsReachTheClient) {
    struct Case {
        std::function<void(ClientConfig &)> tweak;
        std::string reason;
    };
    std::vector<Case> cases = {
        {[](ClientConfig &c) { c.offer.target_server = "did:key:z6MkhaXgBZDvotDkL5257faiztiGiC2QtKLGpbnnEGta2doK"; },
         "unknown_server_did"},
        {[](ClientConfig &c) { c.offer.client_did_methods = {"web"}; }, "no_common_method"},
        {[](ClientConfig &c) { c.offer.presentation_protocols = {"nope"}; }, "no_common_presentation_protocol"},
    };
    for (auto &tc : cases) {
        auto ccfg = client_config(GetParam());
        tc.tweak(ccfg);
        auto p = handshake(server_config(GetParam()), ccfg);
        EXPECT_EQ(p.client.error, ErrorCode::HandshakeRejected) << tc.reason;
        EXPECT_EQ(p.client.detail, tc.reason);
        EXPECT_EQ(p.server.error, ErrorCode::HandshakeRejected) << tc.reason;
        EXPECT_EQ(p.server.detail, tc.reason);
    }
}

INSTANTIATE_TEST_SUITE_P(Transport, BothTransports,
                         ::testing::Values(ExtensionTransport::preamble, ExtensionTransport::hello));

TEST_F(ChannelTest, SecondConnectionUsesCache) {
    auto scfg = server_config();
    auto ccfg = client_config();
    ccfg.verify.cache_policy = CachePolicy{};
    scfg.verify.cache_policy = CachePolicy{};
    auto first = handshake(scfg, ccfg);
    ASSERT_TRUE(first.client.session);
    EXPECT_EQ(first.client.session->peer().resolution_source, ResolutionOrigin::method_handler);
    int calls = handler->calls.load();
    auto second = handshake(scfg, ccfg);
    ASSERT_TRUE(second.client.session) << second.client.detail;
    EXPECT_EQ(second.client.session->peer().resolution_source, ResolutionOrigin::cache);
    EXPECT_EQ(second.client.session->peer().resolve_ms, 0.0);
    EXPECT_EQ(handler->calls.load(), calls);
}

TEST_F(ChannelTest, ImpersonatorFailsHandshake) {
    // Claims the server's public key but holds a different private key.
    auto attacker = KeyPair::generate(KeyType::Ed25519);
    auto forged = KeyPair::from_parts(KeyType::Ed25519, server_id->key.public_key(),
                                      Bytes(attacker.private_key().expose().begin(),
                                            attacker.private_key().expose().end()));
    auto scfg = server_config();
    try {
        scfg.caps.identities = {
            neg::make_server_identity(make_did_certificate(server_id->document.id(), forged, Validity::days(1)))};
    } catch (const Error &) {
        SUCCEED() << "certificate could not even be produced";
        return;
    }
    auto p = handshake(scfg, client_config());
    EXPECT_FALSE(p.client.session);
    EXPECT_FALSE(p.server.session);
}

TEST_F(ChannelTest, KeyNotInDocumentIsRejected) {
    auto other = KeyPair::generate(KeyType::Ed25519);
    auto scfg = server_config();
    scfg.caps.identities = {
        neg::make_server_identity(make_did_certificate(server_id->document.id(), other, Validity::days(1)))};
    auto p = handshake(scfg, client_config());
    EXPECT_EQ(p.client.error, ErrorCode::BindingInvalid);
    EXPECT_EQ(p.client.detail, "key_not_in_document");
}

TEST_F(ChannelTest, RotatedKeyInvalidatesOldCertificate) {
    auto fresh = KeyPair::generate(KeyType::Ed25519);
    DidDocument v2(server_id->document.id(),
                   {{"#key-2", KeyType::Ed25519, fresh.public_key(), {Purpose::authentication, Purpose::assertion}}},
                   2, didlink::now());
    ledger->update(v2.id(), v2, server_id->key.sign(as_bytes(v2.canonical())), "#key-1");
    auto p = handshake(server_config(), client_config());
    EXPECT_EQ(p.client.error, ErrorCode::BindingInvalid);

    auto scfg = server_config();
    scfg.caps.identities = {
        neg::make_server_identity(make_did_certificate(server_id->document.id(), fresh, Validity::days(1)))};
    auto q = handshake(scfg, client_config());
    ASSERT_TRUE(q.client.session) << q.client.detail;
    EXPECT_EQ(q.client.session->peer().binding->matched_method_id, "#key-2");
}

TEST_F(ChannelTest, UnresolvableDidFails) {
    auto stranger = KeyPair::generate(KeyType::Ed25519);
    auto doc = vdr::make_vdrsim_document(stranger, std::nullopt);
    auto ccfg = client_config();
    ccfg.identity = make_did_certificate(doc.id(), stranger, Validity::days(1));
    auto p = handshake(server_config(), ccfg);
    EXPECT_EQ(p.server.error, ErrorCode::ResolutionFailed);
    EXPECT_FALSE(p.client.session && p.server.session);
}

TEST_F(ChannelTest, ResolutionLatencyIsReported) {
    auto slow = std::make_shared<DidResolver>();
    slow->register_handler("vdrsim", std::make_shared<SlowHandler>(handler, std::chrono::milliseconds(50)));
    for (bool parallel : {false, true}) {
        auto ccfg = client_config();
        ccfg.verify.resolver = slow;
        ccfg.verify.parallel = parallel;
        auto p = handshake(server_config(), ccfg);
        ASSERT_TRUE(p.client.session) << p.client.detail;
        EXPECT_GE(p.client.session->peer().resolve_ms, 50.0);
        EXPECT_GE(p.client.session->peer().handshake_ms, 50.0);
    }
}

TEST_F(ChannelTest, SequentialAndParallelAgree) {
    for (auto t : {ExtensionTransport::preamble, ExtensionTransport::hello}) {
        auto seq_c = client_config(t);
        auto seq_s = server_config(t);
        seq_c.verify.parallel = seq_s.verify.parallel = false;
        auto a = handshake(seq_s, seq_c);
        auto b = handshake(server_config(t), client_config(t));
        ASSERT_TRUE(a.client.session && b.client.session && a.server.session && b.server.session);
        EXPECT_EQ(a.client.session->peer().peer_did, b.client.session->peer().peer_did);
        EXPECT_EQ(a.server.session->peer().peer_did, b.server.session->peer().peer_did);
        EXPECT_EQ(a.client.session->negotiated().server_did_methods,
                  b.client.session->negotiated().server_did_methods);
        EXPECT_EQ(a.client.session->peer().mode, b.client.session->peer().mode);
    }
}

TEST_F(ChannelTest, RequiredClientAuthWithoutCertificate) {
    auto scfg = server_config();
    scfg.client_auth = ClientAuth::required;
    auto ccfg = client_config();
    ccfg.identity.reset();
    ccfg.offer.client_did.reset();
    auto p = handshake(scfg, ccfg);
    EXPECT_EQ(p.server.error, ErrorCode::HandshakeRejected);
    EXPECT_EQ(p.server.detail, "client_certificate_required");
    EXPECT_EQ(p.client.error, ErrorCode::HandshakeRejected);
    EXPECT_EQ(p.client.detail, "client_certificate_required");
}

TEST_F(ChannelTest, AnonymousClientWhenOptional) {
    auto ccfg = client_config();
    ccfg.identity.reset();
    ccfg.offer.client_did.reset();
    ccfg.offer.client_did_methods.clear();
    auto p = handshake(server_config(), ccfg);
    ASSERT_TRUE(p.server.session) << p.server.detail;
    EXPECT_EQ(p.server.session->peer().mode, PeerMode::anonymous);
    EXPECT_EQ(p.server.session->offer().client_auth_mode, neg::ClientAuthMode::none);
    EXPECT_EQ(p.client.session->peer().mode, PeerMode::did);
}

TEST_F(ChannelTest, CaCertifiedServerWithDidClient) {
    auto root = make_ca_root("Test Root");
    auto leaf = issue_ca_certificate(root, "server.example", KeyPair::generate(KeyType::Ed25519), Validity::days(1));
    auto scfg = server_config();
    scfg.caps.identities = {neg::make_server_identity(leaf)};
    auto ccfg = client_config();
    ccfg.offer.target_server = "server.example";
    ccfg.verify.trust_roots = {root.certificate_der};
    auto p = handshake(scfg, ccfg);
    ASSERT_TRUE(p.client.session) << p.client.detail;
    ASSERT_TRUE(p.server.session) << p.server.detail;
    EXPECT_EQ(p.client.session->peer().mode, PeerMode::cert_chain);
    EXPECT_EQ(p.client.session->peer().peer_name, "server.example");
    EXPECT_EQ(p.server.session->peer().mode, PeerMode::did);
    EXPECT_EQ(p.server.session->negotiated().server_auth_mode, neg::ServerAuthMode::cert);

    ccfg.verify.trust_roots.clear();
    auto untrusted = handshake(scfg, ccfg);
    EXPECT_EQ(untrusted.client.error, ErrorCode::HandshakeFailed);

    ccfg.verify.trust_roots = {root.certificate_der};
    ccfg.offer.target_server.reset();
    ccfg.expected_peer = "elsewhere.example";
    auto wrong_host = handshake(scfg, ccfg);
    EXPECT_EQ(wrong_host.client.error, ErrorCode::HandshakeFailed);
}

TEST_F(ChannelTest, DerivedIdentifierPeers) {
    auto skey = KeyPair::generate(KeyType::Ed25519);
    auto scfg = server_config();
    scfg.caps.identities = {neg::make_server_identity(make_derived_id_certificate(skey, Validity::days(1)))};
    auto ccfg = client_config();
    ccfg.offer = {};
    ccfg.identity = make_derived_id_certificate(KeyPair::generate(KeyType::Ed25519), Validity::days(1));
    auto p = handshake(scfg, ccfg);
    ASSERT_TRUE(p.client.session) << p.client.detail;
    EXPECT_EQ(p.client.session->peer().mode, PeerMode::derived_identifier);
    EXPECT_EQ(p.client.session->peer().peer_name, derived_identifier(skey.public_key()));
    EXPECT_EQ(p.server.session->peer().mode, PeerMode::derived_identifier);

    ccfg.verify.accept_derived_identifiers = false;
    auto refused = handshake(scfg, ccfg);
    EXPECT_EQ(refused.client.error, ErrorCode::HandshakeFailed);
}

TEST_F(ChannelTest, SniSelectsIdentity) {
    auto alt_id = anchored_identity(*ledger);
    auto alt = make_did_certificate(alt_id.document.id(), alt_id.key, Validity::days(1));
    auto scfg = server_config();
    scfg.caps.identities.push_back(neg::make_server_identity(alt));
    auto ccfg = client_config();
    ccfg.offer.target_server = alt_id.document.id().full();
    auto p = handshake(scfg, ccfg);
    ASSERT_TRUE(p.client.session) << p.client.detail;
    EXPECT_EQ(p.client.session->peer().peer_did->full(), alt_id.document.id().full());
    EXPECT_EQ(p.server.session->negotiated().identity_index, 1u);

    ccfg.offer.target_server.reset();
    auto d = handshake(scfg, ccfg);
    ASSERT_TRUE(d.client.session) << d.client.detail;
    EXPECT_EQ(d.client.session->peer().peer_did->full(), server_id->document.id().full());
    EXPECT_EQ(d.server.session->negotiated().server_auth_mode, neg::ServerAuthMode::did_default);
}

TEST_F(ChannelTest, PeerDidOfferedButDifferentDidPresented) {
    auto ccfg = client_config();
    ccfg.expected_peer = client_id->document.id().full();
    auto p = handshake(server_config(), ccfg);
    EXPECT_EQ(p.client.error, ErrorCode::BindingInvalid);
}

TEST_F(ChannelTest, SessionTicketsAreCounted) {
    auto p = handshake(server_config(), client_config());
    ASSERT_TRUE(p.client.session);
    p.client.session->drain_tickets(std::chrono::milliseconds(1000));
    EXPECT_GT(p.client.session->session_tickets_bytes(), 0u);
    EXPECT_EQ(p.client.session->session_tickets_bytes(), p.server.session->session_tickets_bytes());
}

TEST_F(ChannelTest, FramesRoundTripOverSession) {
    auto p = handshake(server_config(), client_config());
    ASSERT_TRUE(p.client.session && p.server.session);
    frame::Frame f{frame::FrameType::presentation, 1, Bytes(100000, 0x5a)};
    p.client.session->write_frame(f);
    auto got = p.server.session->read_frame(std::chrono::milliseconds(2000));
    ASSERT_TRUE(got);
    EXPECT_EQ(*got, f);
    p.client.session->close();
    EXPECT_FALSE(p.server.session->read_frame(std::chrono::milliseconds(2000)));
}

TEST_F(ChannelTest, ReadTimesOut) {
    auto p = handshake(server_config(), client_config());
    ASSERT_TRUE(p.client.session);
    std::uint8_t b[4];
    EXPECT_THROW(p.server.session->read(b, std::chrono::milliseconds(50)), Error);
    EXPECT_FALSE(p.server.session->try_read(b).has_value());
}

TEST(VerifyPeer, DispatchesOnCertificateShape) {
    VerifySettings v;
    v.resolver = std::make_shared<DidResolver>();
    auto key = KeyPair::generate(KeyType::Ed25519);
    auto [did, doc] = make_key_did(key.public_key());
    auto cert = make_did_certificate(did, key, Validity::days(1));
    auto r = verify_peer({cert.certificate_der}, v);
    EXPECT_EQ(r.mode, PeerMode::did);
    EXPECT_EQ(r.peer_did->full(), did.full());

    auto derived = make_derived_id_certificate(key, Validity::days(1));
    EXPECT_EQ(verify_peer({derived.certificate_der}, v).mode, PeerMode::derived_identifier);

    auto plain = make_self_issued_certificate(key, "someone", {}, Validity::days(1));
    EXPECT_THROW(verify_peer({plain}, v), Error);
    v.trust_roots = {plain};
    EXPECT_EQ(verify_peer({plain}, v).mode, PeerMode::cert_chain);

    auto two = make_self_issued_certificate(key, "x", {did.full(), did.full() + "x"}, Validity::days(1));
    try {
        verify_peer({two}, v);
        ADD_FAILURE();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::BindingInvalid);
    }
}

} // namespace

#include <gtest/gtest.h>

#include <algorithm>
#include <future>
#include <random>
#include <thread>

#include "didlink/error.hpp"
#include "didlink/identity.hpp"
#include "support.hpp"

using namespace didlink;
using namespace didlink::identity;
using frame::Frame;
using frame::FrameType;
using didlink::testing::anchored_identity;
using didlink::testing::LedgerHandler;

namespace {

ErrorCode code_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.code();
    }
    return ErrorCode::UsageError;
}

TEST(Frames, HeaderLayout) {
    Frame f{FrameType::presentation, 1, {0xAA, 0xBB}};
    auto bytes = frame::encode_frame(f);
    Bytes expected{'D', 'I', 'D', 'L', 0x01, 0x02, 0x01, 0x00, 0x00, 0x00, 0x02, 0xAA, 0xBB};
    EXPECT_EQ(bytes, expected);
}

TEST(Frames, RandomRoundTripAndChunkedReader) {
    std::mt19937 rng(7);
    const FrameType types[] = {FrameType::presentation_request, FrameType::presentation, FrameType::result,
                               FrameType::error, FrameType::negotiation_preamble, FrameType::identification_complete};
    Bytes stream;
    std::vector<Frame> sent;
    for (int i = 0; i < 10000; ++i) {
        Frame f{types[rng() % 6], static_cast<std::uint8_t>(rng() % 2), Bytes(rng() % 300)};
        for (auto &b : f.payload) b = static_cast<std::uint8_t>(rng());
        auto bytes = frame::encode_frame(f);
        std::size_t used = 0;
        ASSERT_EQ(frame::decode_frame(bytes, &used), f);
        ASSERT_EQ(used, bytes.size());
        stream.insert(stream.end(), bytes.begin(), bytes.end());
        sent.push_back(std::move(f));
    }
    frame::FrameReader reader;
    std::vector<Frame> got;
    for (std::size_t off = 0; off < stream.size();) {
        std::size_t n = std::min<std::size_t>(1 + rng() % 997, stream.size() - off);
        reader.feed(ByteView(stream.data() + off, n));
        off += n;
        while (auto f = reader.next()) got.push_back(std::move(*f));
    }
    EXPECT_EQ(got, sent);
    EXPECT_EQ(reader.buffered(), 0u);
}

TEST(Frames, DecodeErrors) {
    auto good = frame::encode_frame({FrameType::result, 0, {1, 2, 3}});
    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(code_of([&] { frame::decode_frame(bad_magic); }), ErrorCode::BadMagic);
    auto bad_version = good;
    bad_version[4] = 0x02;
    EXPECT_EQ(code_of([&] { frame::decode_frame(bad_version); }), ErrorCode::UnsupportedVersion);
    for (std::size_t cut = 0; cut < good.size(); ++cut)
        EXPECT_EQ(code_of([&] { frame::decode_frame(ByteView(good.data(), cut)); }), ErrorCode::Truncated) << cut;
    auto huge = good;
    huge[7] = 0x7F;
    EXPECT_EQ(code_of([&] { frame::decode_frame(huge); }), ErrorCode::ProtocolViolation);
}

TEST(PresentationRequestJson, RoundTrip) {
    auto issuer = make_key_did(KeyPair::generate(KeyType::Ed25519).public_key()).first;
    auto r = PresentationRequest::make({"org", "role"}, {issuer});
    r.domain = "did:example:verifier";
    auto back = PresentationRequest::from_json(r.to_json());
    EXPECT_EQ(back.request_id, r.request_id);
    EXPECT_EQ(back.required_claims, r.required_claims);
    EXPECT_EQ(back.accepted_issuers, r.accepted_issuers);
    EXPECT_EQ(back.nonce, r.nonce);
    EXPECT_EQ(back.domain, r.domain);
    EXPECT_NE(PresentationRequest::make({}).nonce, PresentationRequest::make({}).nonce);
    EXPECT_EQ(code_of([] { PresentationRequest::from_json({{"options", Json::object()}}); }),
              ErrorCode::ProtocolViolation);
}

TEST(ModeNames, RoundTrip) {
    for (auto m : {Mode::client_first, Mode::server_first, Mode::parallel}) EXPECT_EQ(mode_from_string(to_string(m)), m);
    EXPECT_EQ(code_of([] { mode_from_string("sideways"); }), ErrorCode::UsageError);
}

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

struct Result {
    std::optional<Outcome> outcome;
    std::optional<ErrorCode> error;
    std::string detail;
};

Result capture(channel::SecureSession &session, const Config &cfg) {
    Result r;
    try {
        r.outcome = run_identification(session, cfg);
    } catch (const Error &e) {
        r.error = e.code();
        r.detail = e.detail();
    }
    return r;
}

class IdentityTest : public ::testing::Test {
  protected:
    void SetUp() override {
        ledger = std::make_shared<vdr::Ledger>();
        resolver = std::make_shared<DidResolver>();
        resolver->register_handler("vdrsim", std::make_shared<LedgerHandler>(ledger));
        issuer.emplace(anchored_identity(*ledger));
        server_id.emplace(anchored_identity(*ledger));
        client_id.emplace(anchored_identity(*ledger));
        server_bundle = make_did_certificate(server_id->document.id(), server_id->key, Validity::days(1));
        client_bundle = make_did_certificate(client_id->document.id(), client_id->key, Validity::days(1));
    }

    vc::SdJwtCredential credential_for(const didlink::testing::Identity &who, const Json &claims) {
        auto now = didlink::now();
        return vc::issue(issuer->key, issuer->document.id(), who.document.id(), claims,
                         {now - std::chrono::hours(1), now + std::chrono::hours(1)});
    }

    struct Sessions {
        std::optional<channel::SecureSession> client;
        std::optional<channel::SecureSession> server;
    };

    Sessions connect() {
        channel::VerifySettings v;
        v.resolver = resolver;
        v.cache_policy = CachePolicy::force();
        channel::ServerConfig scfg;
        scfg.caps.supported_methods = {"vdrsim"};
        scfg.caps.identities = {negotiation::make_server_identity(*server_bundle, true)};
        scfg.caps.verify_client_did = true;
        scfg.verify = v;
        channel::ClientConfig ccfg;
        ccfg.identity = client_bundle;
        ccfg.offer.target_server = server_id->document.id().full();
        ccfg.offer.client_did = client_id->document.id();
        ccfg.offer.client_did_methods = {"vdrsim"};
        ccfg.offer.presentation_protocols = {std::string(negotiation::kDifPe2)};
        ccfg.verify = v;
        auto listener = net::TcpListener::bind({"127.0.0.1", 0});
        auto endpoint = listener.local_endpoint();
        channel::TlsServer server(scfg);
        auto s = std::async(std::launch::async, [&] { return server.accept(listener); });
        channel::TlsClient client(ccfg);
        Sessions out;
        out.client.emplace(client.connect(endpoint));
        out.server.emplace(s.get());
        return out;
    }

    Config base(const didlink::testing::Identity &self, std::shared_ptr<DidResolver> r = nullptr) {
        Config cfg;
        cfg.holder_key = &self.key;
        cfg.resolver = r ? r : resolver;
        cfg.cache_policy = CachePolicy::force();
        cfg.self_did = self.document.id();
        return cfg;
    }

    std::pair<Result, Result> run(const Config &client_cfg, const Config &server_cfg) {
        auto sessions = connect();
        auto server_side = std::async(std::launch::async, [&] { return capture(*sessions.server, server_cfg); });
        auto client_result = capture(*sessions.client, client_cfg);
        if (client_result.error) sessions.client->close();
        return {client_result, server_side.get()};
    }

    std::shared_ptr<vdr::Ledger> ledger;
    std::shared_ptr<DidResolver> resolver;
    std::optional<didlink::testing::Identity> issuer, server_id, client_id;
    std::optional<CertBundle> server_bundle, client_bundle;
};

class AllModes : public IdentityTest, public ::testing::WithParamInterface<Mode> {};

TEST_P(AllModes, MutualIdentification) {
    auto client_cfg = base(*client_id);
    client_cfg.mode = GetParam();
    client_cfg.credentials = {credential_for(*client_id, {{"org", "acme"}, {"role", "operator"}, {"clearance", 3}})};
    client_cfg.request = PresentationRequest::make({"operator_licence"}, {issuer->document.id()});
    auto server_cfg = base(*server_id);
    server_cfg.mode = GetParam();
    server_cfg.credentials = {credential_for(*server_id, {{"operator_licence", "OP-42"}, {"region", "eu"}})};
    server_cfg.request = PresentationRequest::make({"org", "role"}, {issuer->document.id()});

    auto [c, s] = run(client_cfg, server_cfg);
    ASSERT_TRUE(c.outcome) << c.detail;
    ASSERT_TRUE(s.outcome) << s.detail;
    ASSERT_TRUE(c.outcome->peer);
    EXPECT_EQ(c.outcome->peer->peer_claims, Json({{"operator_licence", "OP-42"}}));
    EXPECT_EQ(c.outcome->peer->peer_subject_did, server_id->document.id());
    EXPECT_FALSE(c.outcome->peer->holder_binding_checked);
    ASSERT_TRUE(s.outcome->peer);
    EXPECT_EQ(s.outcome->peer->peer_claims, Json({{"org", "acme"}, {"role", "operator"}}));
    EXPECT_FALSE(s.outcome->peer->peer_claims.contains("clearance"));
    EXPECT_EQ(c.outcome->presented_accepted, true);
    EXPECT_EQ(s.outcome->presented_accepted, true);
    EXPECT_GT(c.outcome->duration_ms, 0);
}

INSTANTIATE_TEST_SUITE_P(Modes, AllModes, ::testing::Values(Mode::client_first, Mode::server_first, Mode::parallel),
                         [](const auto &info) { return std::string(to_string(info.param)); });

TEST_F(IdentityTest, OneSidedRequest) {
    auto client_cfg = base(*client_id);
    client_cfg.credentials = {credential_for(*client_id, {{"org", "acme"}})};
    auto server_cfg = base(*server_id);
    server_cfg.request = PresentationRequest::make({"org"});
    auto [c, s] = run(client_cfg, server_cfg);
    ASSERT_TRUE(c.outcome) << c.detail;
    ASSERT_TRUE(s.outcome) << s.detail;
    EXPECT_FALSE(c.outcome->peer);
    EXPECT_FALSE(s.outcome->presented_accepted);
    EXPECT_EQ(c.outcome->presented_accepted, true);
    EXPECT_EQ(s.outcome->peer->peer_claims, Json({{"org", "acme"}}));
}

TEST_F(IdentityTest, ThirdPartyCredentialNeedsHolderBinding) {
    auto holder = anchored_identity(*ledger);
    auto client_cfg = base(*client_id);
    client_cfg.credentials = {credential_for(holder, {{"org", "acme"}})};
    client_cfg.holder_key = &holder.key;
    auto server_cfg = base(*server_id);
    server_cfg.request = PresentationRequest::make({"org"});
    auto [c, s] = run(client_cfg, server_cfg);
    ASSERT_TRUE(s.outcome) << s.detail;
    EXPECT_TRUE(s.outcome->peer->holder_binding_checked);
    EXPECT_EQ(s.outcome->peer->peer_subject_did, holder.document.id());

    client_cfg.holder_key = nullptr;
    auto [c2, s2] = run(client_cfg, server_cfg);
    EXPECT_EQ(s2.error, ErrorCode::VerificationFailed);
    EXPECT_EQ(s2.detail, "holder_binding_required");
    ASSERT_TRUE(c2.outcome) << c2.detail;
    EXPECT_EQ(c2.outcome->presented_accepted, false);
    EXPECT_EQ(c2.outcome->presented_rejection, "holder_binding_required");
}

TEST_F(IdentityTest, IssuerNotAccepted) {
    auto other = anchored_identity(*ledger);
    auto client_cfg = base(*client_id);
    client_cfg.credentials = {credential_for(*client_id, {{"org", "acme"}})};
    auto server_cfg = base(*server_id);
    // The prover filters on the issuer list, so it refuses rather than sends.
    server_cfg.request = PresentationRequest::make({"org"}, {other.document.id()});
    auto [c, s] = run(client_cfg, server_cfg);
    EXPECT_EQ(s.error, ErrorCode::PeerRefused);
    ASSERT_TRUE(c.outcome) << c.detail;
    EXPECT_EQ(c.outcome->presented_rejection, "peer_refused");
}

TEST_F(IdentityTest, RevokedCredentialRejected) {
    auto signer = issuer->document.id().full() + "#key-1";
    auto create = vdr::status_create_message("list-1", issuer->document.id(), 64);
    ledger->create_status_list("list-1", issuer->document.id(), 64, signer, issuer->key.sign(as_bytes(create)));
    auto now = didlink::now();
    auto cred = vc::issue(issuer->key, issuer->document.id(), client_id->document.id(), {{"org", "acme"}},
                          {now - std::chrono::hours(1), now + std::chrono::hours(1)}, vc::StatusRef{"list-1", 5});
    auto set = vdr::status_set_message("list-1", 5, true, 2);
    ledger->set_status("list-1", 5, true, 2, signer, issuer->key.sign(as_bytes(set)));
    auto client_cfg = base(*client_id);
    client_cfg.credentials = {cred};
    auto server_cfg = base(*server_id);
    server_cfg.request = PresentationRequest::make({"org"});
    server_cfg.status = std::make_shared<didlink::testing::LedgerStatus>(ledger);
    auto [c, s] = run(client_cfg, server_cfg);
    EXPECT_EQ(s.error, ErrorCode::VerificationFailed);
    EXPECT_EQ(s.detail, "revoked");
}

TEST_F(IdentityTest, ProtocolViolationOnUnexpectedFrame) {
    auto sessions = connect();
    auto server_cfg = base(*server_id);
    server_cfg.request = PresentationRequest::make({"org"});
    server_cfg.timeout = std::chrono::milliseconds(3000);
    auto server_side = std::async(std::launch::async, [&] { return capture(*sessions.server, server_cfg); });
    sessions.client->write_frame({FrameType::result, 1, Bytes{'{', '}'}});
    auto s = server_side.get();
    EXPECT_EQ(s.error, ErrorCode::ProtocolViolation);
}

TEST_F(IdentityTest, TimesOutWhenPeerSilent) {
    auto sessions = connect();
    auto server_cfg = base(*server_id);
    server_cfg.request = PresentationRequest::make({"org"});
    server_cfg.timeout = std::chrono::milliseconds(300);
    auto s = capture(*sessions.server, server_cfg);
    EXPECT_EQ(s.error, ErrorCode::Timeout);
}

TEST_F(IdentityTest, ParallelBeatsSequentialUnderResolutionLatency) {
    auto slow = std::make_shared<DidResolver>();
    slow->register_handler("vdrsim",
                                          std::make_shared<SlowHandler>(std::make_shared<LedgerHandler>(ledger),
                                                         std::chrono::milliseconds(40)));
    auto client_cred = credential_for(*client_id, {{"org", "acme"}});
    auto server_cred = credential_for(*server_id, {{"licence", "L1"}});
    auto measure = [&](Mode mode) {
        std::vector<double> durations;
        for (int i = 0; i < 15; ++i) {
            auto client_cfg = base(*client_id, slow);
            client_cfg.mode = mode;
            client_cfg.credentials = {client_cred};
            client_cfg.request = PresentationRequest::make({"licence"});
            auto server_cfg = base(*server_id, slow);
            server_cfg.mode = mode;
            server_cfg.credentials = {server_cred};
            server_cfg.request = PresentationRequest::make({"org"});
            auto [c, s] = run(client_cfg, server_cfg);
            EXPECT_TRUE(c.outcome && s.outcome) << c.detail << s.detail;
            if (c.outcome) durations.push_back(c.outcome->duration_ms);
        }
        std::sort(durations.begin(), durations.end());
        return durations[durations.size() / 2];
    };
    double parallel = measure(Mode::parallel);
    double sequential = measure(Mode::client_first);
    EXPECT_GE(sequential, 80.0);
    EXPECT_LT(parallel, sequential - 25.0) << parallel << " vs " << sequential;
}

} // namespace

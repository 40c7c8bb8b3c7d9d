#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "didlink/error.hpp"
#include "didlink/resolver.hpp"
#include "support.hpp"

using namespace didlink;
using didlink::testing::FakeClock;
using didlink::testing::LedgerHandler;

namespace {

// Textbook big-number base58 decode, kept separate from the library codec.
Bytes oracle_base58_decode(const std::string &text) {
    static const std::string alphabet = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";
    std::vector<int> digits; // little-endian base-256
    for (char c : text) {
        int carry = static_cast<int>(alphabet.find(c));
        if (carry < 0) throw std::runtime_error("bad char");
        for (auto &d : digits) {
            carry += d * 58;
            d = carry & 0xff;
            carry >>= 8;
        }
        while (carry) {
            digits.push_back(carry & 0xff);
            carry >>= 8;
        }
    }
    Bytes out;
    for (char c : text) {
        if (c != '1') break;
        out.push_back(0);
    }
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) out.push_back(static_cast<std::uint8_t>(*it));
    return out;
}

ErrorCode code_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::UsageError;
}

} // namespace

TEST(ParseDid, AcceptsWellFormed) {
    auto d = parse_did("did:key:z6MkhaXgBZDvotDkL5257faiztiGiC2QtKLGpbnnEGta2doK");
    EXPECT_EQ(d.method(), "key");
    EXPECT_EQ(d.subject_id(), "z6MkhaXgBZDvotDkL5257faiztiGiC2QtKLGpbnnEGta2doK");

    auto v = parse_did("did:vdrsim:abc123");
    EXPECT_EQ(v.method(), "vdrsim");
    EXPECT_EQ(v.subject_id(), "abc123");
    EXPECT_EQ(parse_did(v.full()).full(), v.full());
}

TEST(ParseDid, RejectsMalformed) {
    for (const char *bad : {"http://example.com", "did:", "did::abc", "did:key:", "did:Key:abc", "did:key:a b",
                            "did:ke-y:abc", "did:key:ab\tc", "DID:key:abc"}) {
        EXPECT_EQ(code_of([&] { parse_did(bad); }), ErrorCode::MalformedDid) << bad;
    }
}

TEST(KeyDid, ZeroKeyIsInvalid) {
    Bytes zero(32, 0);
    EXPECT_EQ(code_of([&] { make_key_did(zero); }), ErrorCode::InvalidKey);
    EXPECT_EQ(code_of([&] { make_key_did(Bytes(31, 7)); }), ErrorCode::InvalidKey);
}

TEST(KeyDid, Deterministic) {
    auto key = KeyPair::generate(KeyType::Ed25519);
    auto [d1, doc1] = make_key_did(key.public_key());
    auto [d2, doc2] = make_key_did(key.public_key());
    EXPECT_EQ(d1, d2);
    EXPECT_EQ(doc1.canonical(), doc2.canonical());
}

TEST(KeyDid, EncodesKeyWithMulticodecPrefix) {
    auto key = KeyPair::generate(KeyType::Ed25519);
    auto [did, doc] = make_key_did(key.public_key());
    // Ed25519 did:key identifiers conventionally start with z6Mk.
    ASSERT_EQ(did.subject_id().substr(0, 4), "z6Mk");
    auto raw = oracle_base58_decode(did.subject_id().substr(1));
    ASSERT_EQ(raw.size(), 34u);
    EXPECT_EQ(raw[0], 0xed);
    EXPECT_EQ(raw[1], 0x01);
    EXPECT_EQ(Bytes(raw.begin() + 2, raw.end()), key.public_key());

    ASSERT_EQ(doc.verification_methods().size(), 1u);
    const auto &vm = doc.verification_methods()[0];
    EXPECT_EQ(vm.public_key, key.public_key());
    EXPECT_TRUE(vm.purposes.has(Purpose::authentication));
    EXPECT_TRUE(vm.purposes.has(Purpose::assertion));
}

TEST(KeyDid, ResolvesWithoutRegistry) {
    auto key = KeyPair::generate(KeyType::Ed25519);
    auto [did, doc] = make_key_did(key.public_key());
    DidResolver resolver;
    for (auto policy : {CachePolicy{}, CachePolicy::force(), CachePolicy::cached_only()}) {
        auto r = resolver.resolve(did, policy);
        EXPECT_EQ(r.source, ResolutionSource::method_handler);
        EXPECT_EQ(r.document.verification_methods().at(0).public_key, key.public_key());
        EXPECT_EQ(r.document, doc);
    }
}

TEST(KeyDid, PeerVariantDerivesSameKey) {
    auto key = KeyPair::generate(KeyType::Ed25519);
    auto [did, doc] = make_peer_did(key.public_key());
    EXPECT_EQ(did.method(), "peer");
    EXPECT_EQ(did.subject_id()[0], '0');
    DidResolver resolver;
    EXPECT_EQ(resolver.resolve(did).document.verification_methods().at(0).public_key, key.public_key());
}

TEST(KeyDid, NoCollisionsOverTenThousandKeys) {
    std::set<std::string> seen;
    for (int i = 0; i < 10000; ++i) {
        auto key = KeyPair::generate(KeyType::Ed25519);
        ASSERT_TRUE(seen.insert(make_key_did(key.public_key()).first.full()).second);
    }
}

TEST(DidDocument, JsonRoundTripAndSchema) {
    auto key = KeyPair::generate(KeyType::Ed25519);
    auto p256 = KeyPair::generate(KeyType::EcdsaP256);
    auto x = KeyPair::generate(KeyType::X25519);
    DidDocument doc(parse_did("did:vdrsim:abc"),
                    {{"#k1", KeyType::Ed25519, key.public_key(), {Purpose::authentication}},
                     {"#k2", KeyType::EcdsaP256, p256.public_key(), {Purpose::authentication, Purpose::assertion}},
                     {"#x", KeyType::X25519, x.public_key(), {Purpose::key_agreement}}},
                    3, from_unix(1'700'000'000));
    auto json = doc.to_json();
    EXPECT_EQ(json.at("id"), "did:vdrsim:abc");
    EXPECT_EQ(json.at("version"), 3);
    EXPECT_EQ(json.at("updatedAt"), "2023-11-14T22:13:20Z");
    EXPECT_EQ(json.at("verificationMethod").size(), 3u);
    EXPECT_TRUE(json.at("verificationMethod")[0].contains("publicKeyMultibase"));
    EXPECT_EQ(DidDocument::from_json(json), doc);
    EXPECT_EQ(parse_canonical(doc.canonical()), json);
}

TEST(DidDocument, RejectsInvariantViolations) {
    auto key = KeyPair::generate(KeyType::Ed25519);
    auto id = parse_did("did:vdrsim:abc");
    auto t = from_unix(0);
    EXPECT_EQ(code_of([&] { DidDocument(id, {}, 1, t); }), ErrorCode::MalformedDocument);
    EXPECT_EQ(code_of([&] {
                  DidDocument(id,
                              {{"#a", KeyType::Ed25519, key.public_key(), {Purpose::authentication}},
                               {"#a", KeyType::Ed25519, key.public_key(), {Purpose::assertion}}},
                              1, t);
              }),
              ErrorCode::MalformedDocument);
    EXPECT_EQ(code_of([&] { DidDocument(id, {{"#a", KeyType::Ed25519, Bytes(31, 1), {Purpose::authentication}}}, 1, t); }),
              ErrorCode::MalformedDocument);
}

TEST(DidDocument, P256UncompressedStoredCompressed) {
    auto p256 = KeyPair::generate(KeyType::EcdsaP256);
    ASSERT_EQ(p256.public_key().size(), 33u);
    // Rebuild the uncompressed point through OpenSSL and check it canonicalises back.
    auto evp = crypto::public_evp(KeyType::EcdsaP256, p256.public_key());
    std::size_t len = 0;
    ASSERT_EQ(EVP_PKEY_get_octet_string_param(evp.get(), "encoded-pub-key", nullptr, 0, &len), 1);
    Bytes point(len);
    ASSERT_EQ(EVP_PKEY_get_octet_string_param(evp.get(), "encoded-pub-key", point.data(), point.size(), &len), 1);
    Bytes uncompressed = point;
    if (uncompressed.size() == 33) {
        // Some builds report the compressed form; uncompress via the EC API.
        auto group = EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1);
        auto pt = EC_POINT_new(group);
        ASSERT_EQ(EC_POINT_oct2point(group, pt, point.data(), point.size(), nullptr), 1);
        uncompressed.resize(65);
        EC_POINT_point2oct(group, pt, POINT_CONVERSION_UNCOMPRESSED, uncompressed.data(), 65, nullptr);
        EC_POINT_free(pt);
        EC_GROUP_free(group);
    }
    ASSERT_EQ(uncompressed.size(), 65u);
    EXPECT_EQ(crypto::compress_p256(uncompressed), p256.public_key());
}

TEST(DidDocument, FileExportImport) {
    didlink::testing::TempDir dir;
    auto [did, doc] = make_key_did(KeyPair::generate(KeyType::Ed25519).public_key());
    auto path = (dir.path() / "doc.json").string();
    export_document(doc, path);
    EXPECT_EQ(import_document(path), doc);
}

class ResolverTest : public ::testing::Test {
  protected:
    FakeClock clock;
    std::shared_ptr<vdr::Ledger> ledger = std::make_shared<vdr::Ledger>(std::nullopt, clock.fn());
    std::shared_ptr<LedgerHandler> handler = std::make_shared<LedgerHandler>(ledger);
    DidResolver resolver{clock.fn()};

    void SetUp() override { resolver.register_handler("vdrsim", handler); }

    void expect_accounting() {
        EXPECT_EQ(resolver.handler_calls(), resolver.cache_misses() + resolver.forced_resolves());
        EXPECT_EQ(static_cast<std::uint64_t>(handler->calls.load()), resolver.handler_calls());
    }
};

TEST_F(ResolverTest, SecondResolveComesFromCache) {
    auto id = didlink::testing::anchored_identity(*ledger);
    auto first = resolver.resolve(id.document.id(), CachePolicy{std::chrono::seconds(300), CacheMode::prefer_cache});
    auto second = resolver.resolve(id.document.id(), CachePolicy{std::chrono::seconds(300), CacheMode::prefer_cache});
    EXPECT_EQ(first.source, ResolutionSource::method_handler);
    EXPECT_EQ(second.source, ResolutionSource::cache);
    EXPECT_EQ(handler->calls.load(), 1);
    EXPECT_EQ(second.document, id.document);
    expect_accounting();
}

TEST_F(ResolverTest, UnanchoredIsNotFound) {
    auto doc = vdr::make_vdrsim_document(KeyPair::generate(KeyType::Ed25519), std::nullopt);
    EXPECT_EQ(code_of([&] { resolver.resolve(doc.id()); }), ErrorCode::NotFound);
    expect_accounting();
}

TEST_F(ResolverTest, UnknownMethod) {
    EXPECT_EQ(code_of([&] { resolver.resolve(parse_did("did:web:example.com")); }), ErrorCode::UnsupportedMethod);
}

TEST_F(ResolverTest, SeededDocumentServesCacheOnly) {
    auto id = didlink::testing::anchored_identity(*ledger);
    resolver.seed_cache(id.document, clock.now() + std::chrono::hours(1));
    auto r = resolver.resolve(id.document.id(), CachePolicy::cached_only());
    EXPECT_EQ(r.source, ResolutionSource::cache);
    EXPECT_EQ(r.document, id.document);
    EXPECT_EQ(handler->calls.load(), 0);
}

TEST_F(ResolverTest, FreshSeedWinsOverNewerRegistryVersion) {
    auto id = didlink::testing::anchored_identity(*ledger);
    resolver.seed_cache(id.document, clock.now() + std::chrono::hours(1));
    auto rotated = KeyPair::generate(KeyType::Ed25519);
    DidDocument v2(id.document.id(), {{"#key-2", KeyType::Ed25519, rotated.public_key(), {Purpose::authentication}}}, 2,
                   clock.now());
    ledger->update(v2.id(), v2, id.key.sign(as_bytes(v2.canonical())), "#key-1");

    EXPECT_EQ(resolver.resolve(id.document.id()).document.version(), 1u);
    auto forced = resolver.resolve(id.document.id(), CachePolicy::force());
    EXPECT_EQ(forced.document.canonical(), ledger->lookup(id.document.id()).canonical());
    EXPECT_EQ(forced.document.version(), 2u);
    expect_accounting();
}

TEST_F(ResolverTest, StaleSeedConsultsHandler) {
    auto id = didlink::testing::anchored_identity(*ledger);
    resolver.seed_cache(id.document, clock.now() - std::chrono::seconds(1));
    auto r = resolver.resolve(id.document.id());
    EXPECT_EQ(r.source, ResolutionSource::method_handler);
    EXPECT_EQ(handler->calls.load(), 1);
    expect_accounting();
}

TEST_F(ResolverTest, CacheOnlyMissesOnAbsentAndStale) {
    auto id = didlink::testing::anchored_identity(*ledger);
    EXPECT_EQ(code_of([&] { resolver.resolve(id.document.id(), CachePolicy::cached_only()); }), ErrorCode::CacheMiss);
    resolver.resolve(id.document.id());
    clock.advance(std::chrono::seconds(301));
    EXPECT_EQ(code_of([&] { resolver.resolve(id.document.id(), CachePolicy::cached_only()); }), ErrorCode::CacheMiss);
    EXPECT_EQ(handler->calls.load(), 1);
}

TEST_F(ResolverTest, MaxAgeExpiresEntries) {
    auto id = didlink::testing::anchored_identity(*ledger);
    CachePolicy policy{std::chrono::seconds(10), CacheMode::prefer_cache};
    resolver.resolve(id.document.id(), policy);
    clock.advance(std::chrono::seconds(5));
    EXPECT_EQ(resolver.resolve(id.document.id(), policy).source, ResolutionSource::cache);
    clock.advance(std::chrono::seconds(6));
    EXPECT_EQ(resolver.resolve(id.document.id(), policy).source, ResolutionSource::method_handler);
    expect_accounting();
}

TEST_F(ResolverTest, AccountingHoldsUnderMixedConcurrentLoad) {
    std::vector<DidDocument> docs;
    for (int i = 0; i < 8; ++i) docs.push_back(didlink::testing::anchored_identity(*ledger).document);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&, t] {
            std::mt19937 rng(t);
            for (int i = 0; i < 500; ++i) {
                const auto &doc = docs[rng() % docs.size()];
                auto policy = rng() % 5 == 0 ? CachePolicy::force() : CachePolicy{};
                auto r = resolver.resolve(doc.id(), policy);
                ASSERT_EQ(r.document, doc);
                if (rng() % 50 == 0) resolver.evict(doc.id());
            }
        });
    }
    for (auto &th : threads) th.join();
    expect_accounting();
}

TEST(VdrResolution, UnreachableRegistryIsUnavailableNotNotFound) {
    // Bind and close to find a port nobody listens on.
    auto listener = net::TcpListener::bind({"127.0.0.1", 0});
    auto ep = listener.local_endpoint();
    listener.close();
    DidResolver resolver;
    resolver.register_handler("vdrsim", std::make_shared<vdr::VdrMethodHandler>(
                                            std::make_shared<vdr::VdrClient>(ep, std::chrono::milliseconds(500))));
    EXPECT_EQ(code_of([&] { resolver.resolve(parse_did("did:vdrsim:abc")); }), ErrorCode::RegistryUnavailable);
}

#include <gtest/gtest.h>

#include <openssl/evp.h>

#include <random>
#include <set>

#include "didlink/error.hpp"
#include "didlink/vc.hpp"
#include "support.hpp"

using namespace didlink;
using namespace didlink::vc;
using didlink::testing::anchored_identity;
using didlink::testing::LedgerHandler;
using didlink::testing::LedgerStatus;

namespace {

ErrorCode code_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.code();
    }
    return ErrorCode::UsageError;
}

// Independent digest: OpenSSL SHA-256 and standard base64, then the URL-safe
// alphabet without padding.
std::string oracle_digest(const std::string &disclosure) {
    unsigned char md[32];
    unsigned int len = 0;
    EVP_Digest(disclosure.data(), disclosure.size(), md, &len, EVP_sha256(), nullptr);
    unsigned char b64[64];
    int n = EVP_EncodeBlock(b64, md, 32);
    std::string out(reinterpret_cast<char *>(b64), n);
    for (auto &c : out) c = c == '+' ? '-' : c == '/' ? '_' : c;
    while (!out.empty() && out.back() == '=') out.pop_back();
    return out;
}

std::string oracle_disclosure(const std::string &salt, const std::string &name, const Json &value) {
    std::string json = Json::array({salt, name, value}).dump();
    unsigned char b64[4096];
    int n = EVP_EncodeBlock(b64, reinterpret_cast<const unsigned char *>(json.data()), static_cast<int>(json.size()));
    std::string out(reinterpret_cast<char *>(b64), n);
    for (auto &c : out) c = c == '+' ? '-' : c == '/' ? '_' : c;
    while (!out.empty() && out.back() == '=') out.pop_back();
    return out;
}

class VcTest : public ::testing::Test {
  protected:
    void SetUp() override {
        ledger = std::make_shared<vdr::Ledger>();
        resolver = std::make_shared<DidResolver>();
        resolver->register_handler("vdrsim", std::make_shared<LedgerHandler>(ledger));
        issuer.emplace(anchored_identity(*ledger));
        holder.emplace(anchored_identity(*ledger));
        status = std::make_unique<LedgerStatus>(ledger);
    }

    ValidityWindow window() const { return {didlink::now() - std::chrono::hours(1), didlink::now() + std::chrono::hours(24)}; }

    SdJwtCredential make(const Json &claims, std::optional<StatusRef> ref = std::nullopt) {
        return issue(issuer->key, issuer->document.id(), holder->document.id(), claims, window(), ref);
    }

    VerifyPolicy channel_policy() const {
        VerifyPolicy p;
        p.expected_subject = holder->document.id();
        p.accepted_issuers = {issuer->document.id()};
        return p;
    }

    VerifiedClaims verify(const Presentation &p, const VerifyPolicy &policy) {
        return verify_presentation(Presentation::parse(p.serialize()), policy, *resolver, status.get());
    }

    std::shared_ptr<vdr::Ledger> ledger;
    std::shared_ptr<DidResolver> resolver;
    std::optional<didlink::testing::Identity> issuer;
    std::optional<didlink::testing::Identity> holder;
    std::unique_ptr<LedgerStatus> status;
};

TEST_F(VcTest, SingleClaimHasOneDigestAndDisclosure) {
    auto c = make({{"org", "ExampleCo"}});
    ASSERT_EQ(c.claim_digests.size(), 1u);
    ASSERT_EQ(c.disclosures.size(), 1u);
    const auto &d = c.disclosures[0];
    EXPECT_EQ(codec::base64url_decode(d.salt).size(), 16u);
    EXPECT_EQ(d.encoded(), oracle_disclosure(d.salt, "org", "ExampleCo"));
    EXPECT_EQ(c.claim_digests[0], oracle_digest(d.encoded()));
}

TEST_F(VcTest, EmptyClaimsRejected) {
    EXPECT_EQ(code_of([&] { make(Json::object()); }), ErrorCode::EmptyClaims);
}

TEST_F(VcTest, RoundTripReproducesClaims) {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Json claims = Json::object();
        int n = 1 + static_cast<int>(rng() % 6);
        for (int i = 0; i < n; ++i) {
            std::string name = "c" + std::to_string(i);
            switch (rng() % 4) {
            case 0: claims[name] = "v" + std::to_string(rng()); break;
            case 1: claims[name] = static_cast<int>(rng() % 100000); break;
            case 2: claims[name] = Json::array({1, "two", false}); break;
            default: claims[name] = {{"nested", {{"k", rng() % 2 == 0}}}}; break;
            }
        }
        auto c = make(claims);
        auto reparsed = SdJwtCredential::parse(c.serialize());
        EXPECT_EQ(reparsed.serialize(), c.serialize());
        auto p = derive_presentation(reparsed, reparsed.claim_names());
        auto v = verify(p, channel_policy());
        EXPECT_EQ(v.claims, claims);
        EXPECT_EQ(v.subject, holder->document.id());
        EXPECT_EQ(v.status, ClaimStatus::valid);
    }
}

TEST_F(VcTest, MinimalDisclosure) {
    auto c = make({{"a", "alpha-visible"}, {"b", "bravo-secret-9731"}, {"c", "charlie-secret-2264"}});
    auto p = derive_presentation(c, {"a"});
    auto wire = p.serialize();
    // Check the decoded segments as well as the compact string.
    std::string decoded;
    for (auto &d : p.credential.disclosures) decoded += to_string(codec::base64url_decode(d.encoded()));
    EXPECT_NE(decoded.find("alpha-visible"), std::string::npos);
    for (const char *secret : {"bravo-secret-9731", "charlie-secret-2264"}) {
        EXPECT_EQ(wire.find(secret), std::string::npos);
        EXPECT_EQ(decoded.find(secret), std::string::npos);
        EXPECT_EQ(wire.find(codec::base64url_encode(as_bytes(secret))), std::string::npos);
    }
    auto v = verify(p, channel_policy());
    EXPECT_EQ(v.claims, (Json{{"a", "alpha-visible"}}));

    auto none = derive_presentation(c, {});
    EXPECT_EQ(verify(none, channel_policy()).claims, Json::object());

    EXPECT_EQ(code_of([&] { derive_presentation(c, {"d"}); }), ErrorCode::UnknownClaim);
}

TEST_F(VcTest, SaltsAreUnique) {
    std::set<std::string> digests;
    std::set<std::string> salts;
    for (int i = 0; i < 10000; ++i) {
        Disclosure d{codec::base64url_encode(crypto::random_bytes(16)), "org", "ExampleCo"};
        salts.insert(d.salt);
        digests.insert(d.digest());
    }
    EXPECT_EQ(salts.size(), 10000u);
    EXPECT_EQ(digests.size(), 10000u);

    auto a = make({{"org", "ExampleCo"}});
    auto b = make({{"org", "ExampleCo"}});
    EXPECT_NE(a.claim_digests, b.claim_digests);
}

TEST_F(VcTest, HolderBindingMatrix) {
    auto c = make({{"org", "ExampleCo"}});
    HolderProof proof{&holder->key, "#key-1", "n-123", "did:vdrsim:verifier", didlink::now()};
    auto bare = derive_presentation(c, {"org"});
    auto bound = derive_presentation(c, {"org"}, proof);

    auto same = channel_policy();
    same.nonce = "n-123";
    same.audience = "did:vdrsim:verifier";
    auto other = same;
    other.expected_subject = issuer->document.id();
    auto absent = same;
    absent.expected_subject.reset();

    // subject == channel DID: binding optional.
    EXPECT_FALSE(verify(bare, same).holder_binding_checked);
    EXPECT_TRUE(verify(bound, same).holder_binding_checked);
    // subject != channel DID (or no channel DID): binding required.
    EXPECT_EQ(code_of([&] { verify(bare, other); }), ErrorCode::HolderBindingRequired);
    EXPECT_EQ(code_of([&] { verify(bare, absent); }), ErrorCode::HolderBindingRequired);
    EXPECT_TRUE(verify(bound, other).holder_binding_checked);
    EXPECT_TRUE(verify(bound, absent).holder_binding_checked);
}

TEST_F(VcTest, HolderBindingChecks) {
    auto c = make({{"org", "ExampleCo"}});
    auto policy = channel_policy();
    policy.expected_subject.reset();
    policy.nonce = "N";
    policy.audience = "aud";
    auto with = [&](HolderProof proof) { return derive_presentation(c, {"org"}, proof); };

    EXPECT_TRUE(verify(with({&holder->key, "#key-1", "N", "aud"}), policy).holder_binding_checked);
    // Replayed against a different nonce.
    EXPECT_EQ(code_of([&] { verify(with({&holder->key, "#key-1", "N-old", "aud"}), policy); }),
              ErrorCode::HolderBindingInvalid);
    EXPECT_EQ(code_of([&] { verify(with({&holder->key, "#key-1", "N", "elsewhere"}), policy); }),
              ErrorCode::HolderBindingInvalid);
    auto stranger = KeyPair::generate(KeyType::Ed25519);
    EXPECT_EQ(code_of([&] { verify(with({&stranger, "#key-1", "N", "aud"}), policy); }),
              ErrorCode::HolderBindingInvalid);
    // Binding made over a different disclosure set.
    auto bound_all = with({&holder->key, "#key-1", "N", "aud"});
    bound_all.credential.disclosures.clear();
    EXPECT_EQ(code_of([&] { verify(bound_all, policy); }), ErrorCode::HolderBindingInvalid);
}

TEST_F(VcTest, IssuerPolicyAndSignature) {
    auto c = make({{"org", "ExampleCo"}});
    auto p = derive_presentation(c, {"org"});
    auto policy = channel_policy();
    policy.accepted_issuers = {holder->document.id()};
    EXPECT_EQ(code_of([&] { verify(p, policy); }), ErrorCode::IssuerNotAccepted);

    // Signed by a key that is not in the issuer's document.
    auto rogue = KeyPair::generate(KeyType::Ed25519);
    auto forged = issue(rogue, issuer->document.id(), holder->document.id(), {{"org", "x"}}, window());
    EXPECT_EQ(code_of([&] { verify(derive_presentation(forged, {"org"}), channel_policy()); }),
              ErrorCode::BadIssuerSignature);

    // Issuer whose DID the registry does not know.
    auto unknown_key = KeyPair::generate(KeyType::Ed25519);
    auto unknown_doc = vdr::make_vdrsim_document(unknown_key, std::nullopt);
    auto orphan = issue(unknown_key, unknown_doc.id(), holder->document.id(), {{"org", "x"}}, window());
    auto open = channel_policy();
    open.accepted_issuers.clear();
    EXPECT_EQ(code_of([&] { verify(derive_presentation(orphan, {"org"}), open); }), ErrorCode::ResolutionFailed);
}

TEST_F(VcTest, FlippedDisclosureBitIsDigestMismatch) {
    auto c = make({{"org", "ExampleCo"}});
    auto p = derive_presentation(c, {"org"});
    p.credential.disclosures[0].value = "ExampleCp";
    EXPECT_EQ(code_of([&] { verify(p, channel_policy()); }), ErrorCode::DigestMismatch);
}

TEST_F(VcTest, ValidityWindow) {
    auto now = didlink::now();
    auto expired = issue(issuer->key, issuer->document.id(), holder->document.id(), {{"a", 1}},
                         {now - std::chrono::hours(48), now - std::chrono::hours(1)});
    EXPECT_EQ(code_of([&] { verify(derive_presentation(expired, {"a"}), channel_policy()); }), ErrorCode::Expired);
    auto future = issue(issuer->key, issuer->document.id(), holder->document.id(), {{"a", 1}},
                        {now + std::chrono::hours(1), now + std::chrono::hours(48)});
    EXPECT_EQ(code_of([&] { verify(derive_presentation(future, {"a"}), channel_policy()); }), ErrorCode::Expired);
    // Within the 60 s skew.
    auto edge = issue(issuer->key, issuer->document.id(), holder->document.id(), {{"a", 1}},
                      {now + std::chrono::seconds(30), now + std::chrono::hours(1)});
    EXPECT_NO_THROW(verify(derive_presentation(edge, {"a"}), channel_policy()));
}

TEST_F(VcTest, RevocationThroughStatusList) {
    const std::string list = "issuer-list-1";
    auto signer = issuer->document.id().full() + "#key-1";
    auto create = vdr::status_create_message(list, issuer->document.id(), 64);
    ledger->create_status_list(list, issuer->document.id(), 64, signer, issuer->key.sign(as_bytes(create)));

    EXPECT_EQ(check_status({list, 5}, *status), CredentialStatus::valid);
    auto c = make({{"org", "ExampleCo"}}, StatusRef{list, 5});
    auto p = derive_presentation(c, {"org"});
    EXPECT_EQ(verify(p, channel_policy()).status, ClaimStatus::valid);

    auto set = vdr::status_set_message(list, 5, true, 2);
    ledger->set_status(list, 5, true, 2, signer, issuer->key.sign(as_bytes(set)));
    EXPECT_EQ(check_status({list, 5}, *status), CredentialStatus::revoked);
    EXPECT_EQ(code_of([&] { verify(p, channel_policy()); }), ErrorCode::Revoked);

    EXPECT_EQ(code_of([&] { check_status({"no-such-list", 0}, *status); }), ErrorCode::NotFound);
}

TEST_F(VcTest, SingleByteMutationsAreRejected) {
    auto c = make({{"org", "ExampleCo"}, {"role", "admin"}});
    HolderProof proof{&holder->key, "#key-1", "N", "aud"};
    auto wire = derive_presentation(c, {"org", "role"}, proof).serialize();
    auto policy = channel_policy();
    policy.nonce = "N";
    policy.audience = "aud";
    ASSERT_NO_THROW(verify_presentation(Presentation::parse(wire), policy, *resolver, status.get()));

    std::mt19937 rng(2024);
    int rejected = 0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
        std::string mutated = wire;
        auto pos = rng() % mutated.size();
        char replacement;
        do {
            replacement = static_cast<char>(rng() % 256);
        } while (replacement == mutated[pos]);
        mutated[pos] = replacement;
        try {
            verify_presentation(Presentation::parse(mutated), policy, *resolver, status.get());
        } catch (const Error &) {
            ++rejected;
        }
    }
    EXPECT_EQ(rejected, trials);
}

TEST_F(VcTest, DecodedComponentMutationsAreRejected) {
    auto c = make({{"org", "ExampleCo"}});
    auto p = derive_presentation(c, {"org"});
    std::mt19937 rng(99);
    for (int i = 0; i < 300; ++i) {
        auto q = p;
        switch (i % 3) {
        case 0: q.credential.signature[rng() % q.credential.signature.size()] ^= 1u << (rng() % 8); break;
        case 1: {
            auto &salt = q.credential.disclosures[0].salt;
            auto raw = codec::base64url_decode(salt);
            raw[rng() % raw.size()] ^= 1u << (rng() % 8);
            salt = codec::base64url_encode(raw);
            break;
        }
        default: {
            auto &digest = q.credential.claim_digests[0];
            auto raw = codec::base64url_decode(digest);
            raw[rng() % raw.size()] ^= 1u << (rng() % 8);
            digest = codec::base64url_encode(raw);
            break;
        }
        }
        EXPECT_THROW(verify(q, channel_policy()), Error);
    }
}

} // namespace

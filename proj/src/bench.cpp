#include "didlink/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include "didlink/error.hpp"
#include "didlink/identity.hpp"
#include "didlink/vc.hpp"

namespace didlink::bench {

using Clock = std::chrono::steady_clock;
using channel::ExtensionTransport;
using codec::base64url_decode;
using codec::base64url_encode;

namespace {

constexpr std::string_view kScenarioNames[] = {"I",   "II",   "III", "IV", "V",  "VI",
                                               "VII", "VIII", "IX",  "X",  "XI", "XII"};
const std::string kCaServerName = "server.bench.invalid";
const std::string kCaClientName = "client.bench.invalid";

} // namespace

std::string_view to_string(ScenarioId id) noexcept { return kScenarioNames[static_cast<int>(id)]; }

ScenarioId scenario_from_string(std::string_view text) {
    for (std::size_t i = 0; i < std::size(kScenarioNames); ++i)
        if (kScenarioNames[i] == text) return static_cast<ScenarioId>(i);
    throw Error(ErrorCode::UsageError, "unknown scenario " + std::string(text));
}

const std::vector<ScenarioId> &all_scenarios() {
    static const std::vector<ScenarioId> ids = [] {
        std::vector<ScenarioId> v;
        for (std::size_t i = 0; i < std::size(kScenarioNames); ++i) v.push_back(static_cast<ScenarioId>(i));
        return v;
    }();
    return ids;
}

std::string_view to_string(AuthKind kind) noexcept {
    switch (kind) {
    case AuthKind::anonymous: return "anonymous";
    case AuthKind::derived_identifier: return "derived_identifier";
    case AuthKind::ca_issued: return "ca_issued";
    case AuthKind::did: return "did";
    }
    return "anonymous";
}

std::string_view to_string(DidKind kind) noexcept { return kind == DidKind::peer ? "peer" : "vdr_anchored"; }

Scenario Scenario::preset(ScenarioId id, std::uint32_t reps) {
    Scenario s;
    s.id = id;
    s.reps = reps;
    auto resolving = [&](bool at_client, bool at_server, vdr::LatencyProfile latency) {
        s.client_auth = s.server_auth = AuthKind::did;
        s.cache_seeding = {!at_client, !at_server};
        s.vdr_latency = latency;
    };
    switch (id) {
    case ScenarioId::I: break;
    case ScenarioId::II:
        s.server_auth = AuthKind::ca_issued;
        s.client_auth = AuthKind::anonymous;
        break;
    case ScenarioId::III:
        s.server_auth = AuthKind::ca_issued;
        s.client_auth = AuthKind::derived_identifier;
        break;
    case ScenarioId::IV: s.server_auth = s.client_auth = AuthKind::ca_issued; break;
    case ScenarioId::V: resolving(false, false, {}); break;
    case ScenarioId::VI:
        resolving(false, false, {});
        s.did_kind = DidKind::peer;
        break;
    case ScenarioId::VII: resolving(true, false, kLocalLedger); break;
    case ScenarioId::VIII: resolving(false, true, kLocalLedger); break;
    case ScenarioId::IX: resolving(true, true, kLocalLedger); break;
    case ScenarioId::X: resolving(true, false, kRemoteLedger); break;
    case ScenarioId::XI: resolving(false, true, kRemoteLedger); break;
    case ScenarioId::XII: resolving(true, true, kRemoteLedger); break;
    }
    return s;
}

void Scenario::validate() const {
    if (reps == 0) throw Error(ErrorCode::UsageError, "reps must be positive");
    bool did_pair = client_auth == AuthKind::did && server_auth == AuthKind::did;
    if (did_kind == DidKind::peer && (client_auth == AuthKind::did || server_auth == AuthKind::did) &&
        !(cache_seeding.client_has_server_doc && cache_seeding.server_has_client_doc))
        throw Error(ErrorCode::ScenarioInfeasible, "peer DIDs are never resolved through the registry");
    if (identification && !did_pair)
        throw Error(ErrorCode::ScenarioInfeasible, "identification needs DID authentication on both sides");
    if (client_auth == AuthKind::did && server_auth != AuthKind::did && server_auth != AuthKind::ca_issued)
        throw Error(ErrorCode::ScenarioInfeasible, "a DID client needs a DID or CA-certified server");
}

int Scenario::resolutions() const {
    if (did_kind == DidKind::peer) return 0;
    int n = 0;
    if (server_auth == AuthKind::did && !cache_seeding.client_has_server_doc) ++n;
    if (client_auth == AuthKind::did && !cache_seeding.server_has_client_doc) ++n;
    return n;
}

Json Scenario::to_json() const {
    Json j{{"id", to_string(id)},
           {"clientAuth", to_string(client_auth)},
           {"serverAuth", to_string(server_auth)},
           {"clientHasServerDoc", cache_seeding.client_has_server_doc},
           {"serverHasClientDoc", cache_seeding.server_has_client_doc},
           {"didKind", to_string(did_kind)},
           {"readDelayMs", vdr_latency.read_delay.count()},
           {"writeDelayMs", vdr_latency.write_delay.count()},
           {"jitterMs", vdr_latency.jitter.count()},
           {"identification", identification},
           {"reps", reps},
           {"warmup", warmup},
           {"transport", channel::to_string(transport)},
           {"resolutions", resolutions()}};
    if (vdr) j["vdr"] = vdr->str();
    return j;
}

// ---- statistics ----

Summary summarize(const std::vector<double> &values, const std::vector<bool> &excluded) {
    std::vector<double> kept;
    Summary s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i < excluded.size() && excluded[i])
            ++s.outliers_removed;
        else
            kept.push_back(values[i]);
    }
    s.count = kept.size();
    if (kept.empty()) return s;
    s.mean = std::accumulate(kept.begin(), kept.end(), 0.0) / kept.size();
    double sq = 0;
    for (double v : kept) sq += (v - s.mean) * (v - s.mean);
    s.stddev = kept.size() > 1 ? std::sqrt(sq / (kept.size() - 1)) : 0;
    std::sort(kept.begin(), kept.end());
    auto rank = static_cast<std::size_t>(std::ceil(0.95 * kept.size()));
    s.p95 = kept[std::clamp<std::size_t>(rank, 1, kept.size()) - 1];
    return s;
}

namespace {

std::vector<bool> outlier_mask(const std::vector<double> &values) {
    std::vector<bool> mask(values.size(), false);
    if (values.empty()) return mask;
    auto sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::size_t n = sorted.size();
    double median = n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2;
    for (std::size_t i = 0; i < n; ++i) mask[i] = median > 0 && values[i] > 5 * median;
    return mask;
}

} // namespace

Summary summarize(const std::vector<double> &values) { return summarize(values, outlier_mask(values)); }

// ---- reports ----

namespace {

struct Column {
    const char *name;
    double RepSample::*field;
};
constexpr Column kColumns[] = {
    {"client_handshake_ms", &RepSample::client_handshake_ms},
    {"server_handshake_ms", &RepSample::server_handshake_ms},
    {"client_resolve_ms", &RepSample::client_resolve_ms},
    {"server_resolve_ms", &RepSample::server_resolve_ms},
    {"client_identification_ms", &RepSample::client_identification_ms},
    {"server_identification_ms", &RepSample::server_identification_ms},
    {"total_ms", &RepSample::total_ms},
};

Json summary_json(const Summary &s) {
    return {{"mean", s.mean}, {"stddev", s.stddev}, {"p95", s.p95}, {"count", s.count},
            {"outliers_removed", s.outliers_removed}};
}

Summary summary_from(const Json &j) {
    return {j.at("mean").get<double>(), j.at("stddev").get<double>(), j.at("p95").get<double>(),
            j.at("count").get<std::size_t>(), j.at("outliers_removed").get<std::size_t>()};
}

} // namespace

void BenchReport::finalize() {
    std::vector<double> totals;
    for (auto &r : reps) totals.push_back(r.total_ms);
    auto mask = outlier_mask(totals);
    for (std::size_t i = 0; i < reps.size(); ++i) reps[i].outlier = mask[i];
    summary.clear();
    for (auto &c : kColumns) {
        std::vector<double> v;
        for (auto &r : reps) v.push_back(r.*c.field);
        summary[c.name] = summarize(v, mask);
    }
}

Json BenchReport::to_json() const {
    Json rows = Json::array();
    for (auto &r : reps) {
        Json row;
        for (auto &c : kColumns) row[c.name] = r.*c.field;
        row["client_bytes_sent"] = r.client_bytes_sent;
        row["server_bytes_sent"] = r.server_bytes_sent;
        row["outlier"] = r.outlier;
        rows.push_back(row);
    }
    Json sum = Json::object();
    for (auto &[k, v] : summary) sum[k] = summary_json(v);
    return {{"scenario", scenario}, {"transport", transport}, {"parameters", parameters}, {"reps", rows},
            {"summary", sum}};
}

BenchReport BenchReport::from_json(const Json &j) {
    try {
        BenchReport r;
        r.scenario = j.at("scenario").get<std::string>();
        r.transport = j.at("transport").get<std::string>();
        r.parameters = j.at("parameters");
        for (auto &row : j.at("reps")) {
            RepSample s;
            for (auto &c : kColumns) s.*c.field = row.at(c.name).get<double>();
            s.client_bytes_sent = row.at("client_bytes_sent").get<std::uint64_t>();
            s.server_bytes_sent = row.at("server_bytes_sent").get<std::uint64_t>();
            s.outlier = row.at("outlier").get<bool>();
            r.reps.push_back(s);
        }
        for (auto &[k, v] : j.at("summary").items()) r.summary[k] = summary_from(v);
        return r;
    } catch (const Json::exception &e) {
        throw Error(ErrorCode::Malformed, std::string("bench report: ") + e.what());
    }
}

std::string BenchReport::to_csv() const {
    std::ostringstream out;
    out << "rep";
    for (auto &c : kColumns) out << ',' << c.name;
    out << ",client_bytes_sent,server_bytes_sent,outlier\n";
    out.precision(6);
    out << std::fixed;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        out << i;
        for (auto &c : kColumns) out << ',' << reps[i].*c.field;
        out << ',' << reps[i].client_bytes_sent << ',' << reps[i].server_bytes_sent << ','
            << (reps[i].outlier ? 1 : 0) << '\n';
    }
    return out.str();
}

void emit_report(const BenchReport &report, ReportFormat format, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    if (format == ReportFormat::json)
        out << report.to_json().dump(2) << '\n';
    else
        out << report.to_csv();
    out.flush();
    if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

// ---- scenario runner ----

namespace {

struct Party {
    std::optional<KeyPair> key;
    std::optional<KeyPair> agreement;
    std::optional<DidDocument> document;
    std::optional<CertBundle> bundle;
};

std::optional<Did> did_of(const Party &p) {
    if (p.document) return p.document->id();
    return std::nullopt;
}

// In-process registry unless the scenario names one.
struct Registry {
    std::unique_ptr<vdr::VdrServer> server;
    std::shared_ptr<vdr::VdrClient> client;

    explicit Registry(const Scenario &s) {
        net::Endpoint endpoint;
        if (s.vdr) {
            endpoint = *s.vdr;
        } else {
            server = std::make_unique<vdr::VdrServer>(std::make_shared<vdr::Ledger>(), vdr::LatencyProfile{});
            server->start({"127.0.0.1", 0});
            endpoint = server->endpoint();
        }
        client = std::make_shared<vdr::VdrClient>(endpoint);
        try {
            client->call({{"op", "lookup"}, {"did", "did:vdrsim:probe"}});
        } catch (const Error &e) {
            if (e.code() == ErrorCode::RegistryUnavailable) throw Error(ErrorCode::ServiceUnavailable, e.detail());
        }
    }

    // Latency is applied after setup so anchoring stays fast.
    void set_latency(const vdr::LatencyProfile &latency) {
        if (server) server->set_latency(latency);
    }
};

Party make_party(AuthKind auth, DidKind kind, const std::string &ca_name, const CertBundle &root, Registry &registry) {
    Party p;
    auto validity = Validity::days(1);
    switch (auth) {
    case AuthKind::anonymous: break;
    case AuthKind::derived_identifier:
        p.key = KeyPair::generate(KeyType::Ed25519);
        p.bundle = make_derived_id_certificate(*p.key, validity);
        break;
    case AuthKind::ca_issued:
        p.key = KeyPair::generate(KeyType::Ed25519);
        p.bundle = issue_ca_certificate(root, ca_name, *p.key, validity);
        break;
    case AuthKind::did:
        p.key = KeyPair::generate(KeyType::Ed25519);
        if (kind == DidKind::peer) {
            p.document = make_peer_did(p.key->public_key()).second;
        } else {
            p.agreement = KeyPair::generate(KeyType::X25519);
            p.document = vdr::make_vdrsim_document(*p.key, *p.agreement);
            registry.client->anchor(*p.document, *p.key);
        }
        p.bundle = make_did_certificate(p.document->id(), *p.key, validity);
        break;
    }
    return p;
}

Party anchored_party(Registry &registry) {
    Party p;
    p.key = KeyPair::generate(KeyType::Ed25519);
    p.agreement = KeyPair::generate(KeyType::X25519);
    p.document = vdr::make_vdrsim_document(*p.key, *p.agreement);
    registry.client->anchor(*p.document, *p.key);
    return p;
}

std::shared_ptr<DidResolver> make_resolver(const Registry &registry) {
    auto r = std::make_shared<DidResolver>();
    r->register_handler("vdrsim", std::make_shared<vdr::VdrMethodHandler>(registry.client));
    return r;
}

struct SideResult {
    double handshake_ms = 0;
    double resolve_ms = 0;
    double identification_ms = 0;
    Clock::time_point finished;
    std::uint64_t bytes_sent = 0;
};

SideResult finish_side(channel::SecureSession &session, const std::optional<identity::Config> &ident) {
    SideResult r;
    r.handshake_ms = session.peer().handshake_ms;
    r.resolve_ms = session.peer().resolve_ms;
    r.finished = session.handshake_finished();
    if (ident) r.identification_ms = identity::run_identification(session, *ident).duration_ms;
    r.bytes_sent = session.bytes_sent();
    return r;
}

} // namespace

BenchReport run_scenario(const Scenario &scenario) {
    scenario.validate();
    Registry registry(scenario);
    auto root = make_ca_root("didlink bench root");
    auto server = make_party(scenario.server_auth, scenario.did_kind, kCaServerName, root, registry);
    auto client = make_party(scenario.client_auth, scenario.did_kind, kCaClientName, root, registry);
    std::optional<Party> issuer;
    if (scenario.identification) issuer = anchored_party(registry);

    auto client_resolver = make_resolver(registry);
    auto server_resolver = make_resolver(registry);
    auto fresh_until = didlink::now() + std::chrono::hours(24);
    bool client_cached = scenario.cache_seeding.client_has_server_doc;
    bool server_cached = scenario.cache_seeding.server_has_client_doc;
    if (client_cached) {
        if (server.document) client_resolver->seed_cache(*server.document, fresh_until);
        if (issuer) client_resolver->seed_cache(*issuer->document, fresh_until);
    }
    if (server_cached) {
        if (client.document) server_resolver->seed_cache(*client.document, fresh_until);
        if (issuer) server_resolver->seed_cache(*issuer->document, fresh_until);
    }
    auto client_policy = client_cached ? CachePolicy{} : CachePolicy::force();
    auto server_policy = server_cached ? CachePolicy{} : CachePolicy::force();

    channel::ServerConfig scfg;
    scfg.caps.supported_methods = {"vdrsim", "peer", "key"};
    if (!server.bundle) throw Error(ErrorCode::ScenarioInfeasible, "the server needs a certificate");
    scfg.caps.identities = {negotiation::make_server_identity(*server.bundle, scenario.identification)};
    scfg.caps.verify_client_did = scenario.client_auth == AuthKind::did;
    scfg.client_auth = scenario.client_auth == AuthKind::anonymous ? channel::ClientAuth::none
                                                                   : channel::ClientAuth::optional;
    scfg.verify.resolver = server_resolver;
    scfg.verify.cache_policy = server_policy;
    if (scenario.client_auth == AuthKind::ca_issued) scfg.verify.trust_roots = {root.certificate_der};
    scfg.transport = scenario.transport;

    channel::ClientConfig ccfg;
    ccfg.identity = client.bundle;
    if (scenario.server_auth == AuthKind::did) ccfg.offer.target_server = server.document->id().full();
    if (scenario.server_auth == AuthKind::ca_issued) ccfg.offer.target_server = kCaServerName;
    if (auto d = did_of(client)) {
        ccfg.offer.client_did = *d;
        ccfg.offer.client_did_methods = {d->method()};
    }
    if (scenario.identification) ccfg.offer.presentation_protocols = {std::string(negotiation::kDifPe2)};
    ccfg.verify.resolver = client_resolver;
    ccfg.verify.cache_policy = client_policy;
    if (scenario.server_auth == AuthKind::ca_issued) ccfg.verify.trust_roots = {root.certificate_der};
    ccfg.transport = scenario.transport;

    std::optional<vc::SdJwtCredential> client_cred, server_cred;
    if (issuer) {
        auto now = didlink::now();
        vc::ValidityWindow window{now - std::chrono::hours(1), now + std::chrono::hours(24)};
        client_cred = vc::issue(*issuer->key, issuer->document->id(), client.document->id(),
                                {{"org", "ExampleCo"}, {"role", "operator"}}, window);
        server_cred = vc::issue(*issuer->key, issuer->document->id(), server.document->id(),
                                {{"org", "ExampleServer"}, {"service", "bench"}}, window);
    }
    auto ident_config = [&](const Party &self, const vc::SdJwtCredential &cred, const std::string &ask,
                            std::shared_ptr<DidResolver> resolver, CachePolicy policy) {
        identity::Config c;
        c.credentials = {cred};
        c.holder_key = &*self.key;
        c.request = identity::PresentationRequest::make({ask}, {issuer->document->id()});
        c.resolver = std::move(resolver);
        c.cache_policy = policy;
        c.self_did = self.document->id();
        return c;
    };

    channel::TlsServer tls_server(scfg);
    channel::TlsClient tls_client(ccfg);
    auto listener = net::TcpListener::bind({"127.0.0.1", 0});
    auto endpoint = listener.local_endpoint();
    registry.set_latency(scenario.vdr_latency);

    BenchReport report;
    report.scenario = std::string(to_string(scenario.id));
    report.transport = std::string(channel::to_string(scenario.transport));
    report.parameters = scenario.to_json();

    for (std::uint32_t i = 0; i < scenario.warmup + scenario.reps; ++i) {
        std::optional<identity::Config> client_ident, server_ident;
        if (issuer) {
            client_ident = ident_config(client, *client_cred, "service", client_resolver, client_policy);
            server_ident = ident_config(server, *server_cred, "org", server_resolver, server_policy);
        }
        auto server_side = std::async(std::launch::async, [&] {
            auto stream = listener.accept(std::chrono::seconds(30));
            if (!stream) throw Error(ErrorCode::Timeout, "no client connected");
            auto session = tls_server.accept(std::move(*stream));
            auto r = finish_side(session, server_ident);
            session.close();
            return r;
        });
        auto started = Clock::now();
        SideResult c;
        try {
            auto session = tls_client.connect(endpoint);
            c = finish_side(session, client_ident);
            session.close();
        } catch (...) {
            listener.close();
            try {
                server_side.get();
            } catch (...) {
            }
            throw;
        }
        auto s = server_side.get();
        if (i < scenario.warmup) continue;
        RepSample sample;
        sample.client_handshake_ms = c.handshake_ms;
        sample.server_handshake_ms = s.handshake_ms;
        sample.client_resolve_ms = c.resolve_ms;
        sample.server_resolve_ms = s.resolve_ms;
        sample.client_identification_ms = c.identification_ms;
        sample.server_identification_ms = s.identification_ms;
        sample.total_ms = to_ms(std::max(c.finished, s.finished) - started);
        sample.client_bytes_sent = c.bytes_sent;
        sample.server_bytes_sent = s.bytes_sent;
        report.reps.push_back(sample);
    }
    report.finalize();
    return report;
}

// ---- envelope ----

namespace {

constexpr std::string_view kEnvelopeAlg = "ECDH-1PU+A256KW";
constexpr std::size_t kTagSize = 16;

const VerificationMethod *agreement_key(const DidDocument &doc) {
    for (auto &m : doc.verification_methods())
        if (m.key_type == KeyType::X25519 && m.purposes.has(Purpose::key_agreement)) return &m;
    return nullptr;
}

Bytes concat(std::initializer_list<ByteView> parts) {
    Bytes out;
    for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

Bytes derive_kek(ByteView ze, ByteView zs, const Json &header, ByteView tag) {
    auto apu = header.at("apu").get<std::string>();
    auto apv = header.at("apv").get<std::string>();
    auto info = concat({as_bytes(kEnvelopeAlg), as_bytes(apu), as_bytes(apv), tag});
    return crypto::hkdf_sha256(concat({ze, zs}), {}, info, 32);
}

Json decode_header(const std::string &protected_header) {
    try {
        return Json::parse(didlink::to_string(base64url_decode(protected_header)));
    } catch (const Json::exception &) {
        throw Error(ErrorCode::Malformed, "envelope header is not JSON");
    }
}

} // namespace

Bytes Envelope::ephemeral_public_key() const {
    auto h = decode_header(protected_header);
    try {
        return base64url_decode(h.at("epk").at("x").get<std::string>());
    } catch (const Json::exception &) {
        throw Error(ErrorCode::Malformed, "envelope header lacks epk");
    }
}

std::string Envelope::sender_key_id() const {
    auto h = decode_header(protected_header);
    if (!h.contains("skid") || !h["skid"].is_string()) throw Error(ErrorCode::Malformed, "envelope header lacks skid");
    return h["skid"].get<std::string>();
}

std::string Envelope::serialize() const {
    Json j{{"protected", protected_header},
           {"recipients",
            Json::array({{{"header", {{"kid", recipient_key_id}}}, {"encrypted_key", base64url_encode(encrypted_key)}}})},
           {"iv", base64url_encode(iv)},
           {"ciphertext", base64url_encode(ciphertext)},
           {"tag", base64url_encode(tag)}};
    return canonical(j);
}

Envelope Envelope::parse(std::string_view text) {
    try {
        auto j = Json::parse(text);
        Envelope e;
        e.protected_header = j.at("protected").get<std::string>();
        const auto &r = j.at("recipients").at(0);
        e.recipient_key_id = r.at("header").at("kid").get<std::string>();
        e.encrypted_key = base64url_decode(r.at("encrypted_key").get<std::string>());
        e.iv = base64url_decode(j.at("iv").get<std::string>());
        e.ciphertext = base64url_decode(j.at("ciphertext").get<std::string>());
        e.tag = base64url_decode(j.at("tag").get<std::string>());
        return e;
    } catch (const Json::exception &e) {
        throw Error(ErrorCode::Malformed, std::string("envelope: ") + e.what());
    }
}

Envelope wrap_envelope(ByteView plaintext, const KeyPair &sender, const std::string &sender_key_id,
                       const DidDocument &recipient_doc) {
    const auto *recipient = agreement_key(recipient_doc);
    if (!recipient) throw Error(ErrorCode::UnknownKey, "no key agreement key in " + recipient_doc.id().full());
    auto recipient_kid = recipient_doc.id().full() + recipient->id;
    auto ephemeral = KeyPair::generate(KeyType::X25519);
    auto ze = crypto::x25519(ephemeral, recipient->public_key);
    auto zs = crypto::x25519(sender, recipient->public_key);

    Json header{{"typ", "application/didcomm-encrypted+json"},
                {"alg", kEnvelopeAlg},
                {"enc", "A256GCM"},
                {"skid", sender_key_id},
                {"apu", base64url_encode(as_bytes(sender_key_id))},
                {"apv", base64url_encode(crypto::sha256(as_bytes(recipient_kid)))},
                {"epk", {{"kty", "OKP"}, {"crv", "X25519"}, {"x", base64url_encode(ephemeral.public_key())}}}};
    Envelope e;
    e.protected_header = base64url_encode(as_bytes(canonical(header)));
    e.recipient_key_id = recipient_kid;
    e.iv = crypto::random_bytes(12);
    auto cek = crypto::random_bytes(32);
    auto sealed = crypto::aead_seal(cek, e.iv, as_bytes(e.protected_header), plaintext);
    e.ciphertext.assign(sealed.begin(), sealed.end() - kTagSize);
    e.tag.assign(sealed.end() - kTagSize, sealed.end());
    e.encrypted_key = crypto::key_wrap(derive_kek(ze, zs, header, e.tag), cek);
    return e;
}

Bytes unwrap_envelope(const Envelope &envelope, const KeyPair &recipient, const DidDocument &sender_doc) {
    auto header = decode_header(envelope.protected_header);
    if (header.value("alg", "") != kEnvelopeAlg) throw Error(ErrorCode::Malformed, "unsupported envelope alg");
    const auto *sender = sender_doc.find_method(envelope.sender_key_id());
    if (!sender || sender->key_type != KeyType::X25519 || !sender->purposes.has(Purpose::key_agreement))
        throw Error(ErrorCode::UnknownKey, "sender key " + envelope.sender_key_id());
    auto epk = envelope.ephemeral_public_key();
    if (epk.size() != 32 || envelope.tag.size() != kTagSize || envelope.iv.size() != 12)
        throw Error(ErrorCode::DecryptFailed, "malformed envelope fields");
    auto ze = crypto::x25519(recipient, epk);
    auto zs = crypto::x25519(recipient, sender->public_key);
    auto cek = crypto::key_unwrap(derive_kek(ze, zs, header, envelope.tag), envelope.encrypted_key);
    return crypto::aead_open(cek, envelope.iv, as_bytes(envelope.protected_header),
                             concat({envelope.ciphertext, envelope.tag}));
}

// ---- transfer comparison ----

void TransferReport::finalize() {
    std::vector<double> times;
    double bytes = 0;
    for (auto &r : reps) {
        times.push_back(r.ms);
        bytes += static_cast<double>(r.bytes);
    }
    time = summarize(times);
    mean_bytes = reps.empty() ? 0 : bytes / reps.size();
}

Json TransferReport::to_json() const {
    Json rows = Json::array();
    for (auto &r : reps) rows.push_back({{"ms", r.ms}, {"bytes", r.bytes}});
    return {{"channel", channel},       {"payloadSize", payload_size}, {"packets", packets},
            {"meanBytes", mean_bytes}, {"time", summary_json(time)},  {"reps", rows}};
}

Json TransferComparison::to_json() const { return {{"session", session.to_json()}, {"envelope", envelope.to_json()}}; }

TransferComparison run_transfer_comparison(std::size_t payload_size, std::size_t packets, std::uint32_t reps) {
    if (packets == 0 || reps == 0) throw Error(ErrorCode::UsageError, "packets and reps must be positive");
    Scenario setup = Scenario::preset(ScenarioId::V);
    Registry registry(setup);
    auto root = make_ca_root("unused");
    auto server = make_party(AuthKind::did, DidKind::vdr_anchored, "", root, registry);
    auto client = make_party(AuthKind::did, DidKind::vdr_anchored, "", root, registry);
    auto fresh_until = didlink::now() + std::chrono::hours(24);
    auto client_resolver = make_resolver(registry);
    auto server_resolver = make_resolver(registry);
    client_resolver->seed_cache(*server.document, fresh_until);
    server_resolver->seed_cache(*client.document, fresh_until);

    channel::ServerConfig scfg;
    scfg.caps.supported_methods = {"vdrsim"};
    scfg.caps.identities = {negotiation::make_server_identity(*server.bundle)};
    scfg.caps.verify_client_did = true;
    scfg.verify.resolver = server_resolver;
    scfg.transport = ExtensionTransport::hello;
    channel::ClientConfig ccfg;
    ccfg.identity = client.bundle;
    ccfg.offer.target_server = server.document->id().full();
    ccfg.offer.client_did = client.document->id();
    ccfg.offer.client_did_methods = {"vdrsim"};
    ccfg.verify.resolver = client_resolver;
    ccfg.transport = ExtensionTransport::hello;
    channel::TlsServer tls_server(scfg);
    channel::TlsClient tls_client(ccfg);

    auto listener = net::TcpListener::bind({"127.0.0.1", 0});
    auto endpoint = listener.local_endpoint();
    Bytes payload = crypto::random_bytes(payload_size);
    const std::size_t expected = payload_size * packets;

    TransferComparison out;
    out.session = {"session", payload_size, packets, {}, {}, 0};
    out.envelope = {"envelope", payload_size, packets, {}, {}, 0};
    const std::uint32_t warmup = 2;

    for (std::uint32_t i = 0; i < warmup + reps; ++i) {
        auto server_side = std::async(std::launch::async, [&] {
            auto stream = listener.accept(std::chrono::seconds(30));
            if (!stream) throw Error(ErrorCode::Timeout, "no client connected");
            auto session = tls_server.accept(std::move(*stream));
            std::vector<std::uint8_t> buf(64 * 1024);
            std::size_t got = 0;
            while (got < expected) {
                auto n = session.read(buf, std::chrono::seconds(30));
                if (n == 0) throw Error(ErrorCode::TransportError, "session closed early");
                got += n;
            }
            auto done = Clock::now();
            auto sent = session.bytes_sent();
            session.close();
            return std::pair{done, sent};
        });
        auto started = Clock::now();
        auto session = tls_client.connect(endpoint);
        for (std::size_t p = 0; p < packets; ++p) session.write(payload);
        auto [done, server_sent] = server_side.get();
        auto client_sent = session.bytes_sent();
        session.close();
        if (i >= warmup) out.session.reps.push_back({to_ms(done - started), client_sent + server_sent});
    }

    const auto &client_agreement = *client.agreement;
    auto sender_kid = client.document->id().full() + agreement_key(*client.document)->id;
    for (std::uint32_t i = 0; i < warmup + reps; ++i) {
        auto server_side = std::async(std::launch::async, [&] {
            auto stream = listener.accept(std::chrono::seconds(30));
            if (!stream) throw Error(ErrorCode::Timeout, "no client connected");
            stream->set_io_timeout(std::chrono::seconds(30));
            std::size_t got = 0;
            for (std::size_t p = 0; p < packets; ++p) {
                auto text = net::read_frame(*stream);
                if (!text) throw Error(ErrorCode::TransportError, "stream closed early");
                auto envelope = Envelope::parse(*text);
                auto sender = server_resolver->resolve(Did::parse(envelope.sender_key_id().substr(
                                                           0, envelope.sender_key_id().find('#'))))
                                  .document;
                got += unwrap_envelope(envelope, *server.agreement, sender).size();
            }
            if (got != expected) throw Error(ErrorCode::TransportError, "payload size mismatch");
            return std::pair{Clock::now(), stream->bytes_sent()};
        });
        auto started = Clock::now();
        auto stream = net::TcpStream::connect(endpoint, std::chrono::seconds(5));
        for (std::size_t p = 0; p < packets; ++p) {
            auto recipient = client_resolver->resolve(server.document->id()).document;
            net::write_frame(stream, wrap_envelope(payload, client_agreement, sender_kid, recipient).serialize());
        }
        auto [done, server_sent] = server_side.get();
        auto client_sent = stream.bytes_sent();
        stream.close();
        if (i >= warmup) out.envelope.reps.push_back({to_ms(done - started), client_sent + server_sent});
    }
    out.session.finalize();
    out.envelope.finalize();
    return out;
}

LinearFit fit_line(const std::vector<double> &x, const std::vector<double> &y) {
    LinearFit f;
    std::size_t n = std::min(x.size(), y.size());
    if (n < 2) return f;
    double mx = std::accumulate(x.begin(), x.begin() + n, 0.0) / n;
    double my = std::accumulate(y.begin(), y.begin() + n, 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0) return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return f;
}

// ---- charts ----

namespace {

std::string svg_open(int width, int height) {
    std::ostringstream o;
    o << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << width << R"(" height=")" << height
      << R"(" font-family="sans-serif" font-size="11">)" << '\n';
    return o.str();
}

} // namespace

std::string scenario_svg(const std::vector<BenchReport> &reports) {
    const int bar = 14, gap = 18, left = 50, top = 20, plot_h = 260;
    int width = left + static_cast<int>(reports.size()) * (2 * bar + gap) + 20;
    double max_v = 1;
    for (auto &r : reports)
        for (auto key : {"client_handshake_ms", "server_handshake_ms"})
            if (r.summary.count(key)) max_v = std::max(max_v, r.summary.at(key).mean);
    std::ostringstream o;
    o << svg_open(width, plot_h + top + 40);
    o << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - 10 << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
    o << "<text x=\"4\" y=\"" << top << "\">" << std::lround(max_v) << " ms</text>\n";
    int x = left + gap / 2;
    for (auto &r : reports) {
        const char *colors[] = {"#1b7837", "#5aae61"};
        int k = 0;
        for (auto key : {"client_handshake_ms", "server_handshake_ms"}) {
            double v = r.summary.count(key) ? r.summary.at(key).mean : 0;
            int h = static_cast<int>(plot_h * v / max_v);
            o << "<rect x=\"" << x + k * bar << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar - 2
              << "\" height=\"" << h << "\" fill=\"" << colors[k] << "\"/>\n";
            ++k;
        }
        o << "<text x=\"" << x << "\" y=\"" << top + plot_h + 15 << "\">" << r.scenario << "</text>\n";
        x += 2 * bar + gap;
    }
    o << "</svg>\n";
    return o.str();
}

std::string transfer_svg(const std::vector<TransferComparison> &series) {
    const int left = 50, top = 20, plot_w = 480, plot_h = 260;
    double max_n = 1, max_t = 1;
    for (auto &c : series) {
        max_n = std::max(max_n, static_cast<double>(c.session.packets));
        max_t = std::max({max_t, c.session.time.mean, c.envelope.time.mean});
    }
    auto point = [&](double n, double t) {
        std::ostringstream p;
        p << left + plot_w * n / max_n << ',' << top + plot_h - plot_h * t / max_t;
        return p.str();
    };
    std::ostringstream o;
    o << svg_open(left + plot_w + 30, top + plot_h + 40);
    o << "<text x=\"4\" y=\"" << top << "\">" << std::lround(max_t) << " ms</text>\n";
    o << "<text x=\"" << left + plot_w - 60 << "\" y=\"" << top + plot_h + 25 << "\">" << max_n
      << " packets</text>\n";
    for (int k = 0; k < 2; ++k) {
        o << "<polyline fill=\"none\" stroke=\"" << (k == 0 ? "#1b7837" : "#b2182b") << "\" points=\"";
        for (auto &c : series) {
            const auto &r = k == 0 ? c.session : c.envelope;
            o << point(static_cast<double>(r.packets), r.time.mean) << ' ';
        }
        o << "\"/>\n";
    }
    o << "</svg>\n";
    return o.str();
}

} // namespace didlink::bench

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <pthread.h>

#include <CLI11.hpp>

#include "didlink/bench.hpp"
#include "didlink/cert.hpp"
#include "didlink/channel.hpp"
#include "didlink/codec.hpp"
#include "didlink/error.hpp"
#include "didlink/resolver.hpp"
#include "didlink/vc.hpp"
#include "didlink/vdr.hpp"

using namespace didlink;
namespace fs = std::filesystem;

namespace {

constexpr const char *kDefaultVdr = "127.0.0.1:7400";
const std::vector<std::string> kMethods{"vdrsim", "key", "peer"};

struct CliConfig {
    std::string vdr_address = kDefaultVdr;
    fs::path data_dir;
    std::chrono::seconds cache_max_age{300};
    std::string log_level = "warn";
    bool json = false;

    const fs::path &data() const {
        fs::create_directories(data_dir);
        return data_dir;
    }
    net::Endpoint vdr() const { return net::Endpoint::parse(vdr_address); }
    CachePolicy cache_policy() const { return {cache_max_age, CacheMode::prefer_cache}; }
    bool debug() const { return log_level == "debug"; }
};

std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path &path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

Json read_json(const fs::path &path) {
    try {
        return Json::parse(read_file(path));
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::Malformed, path.string() + ": " + e.what());
    }
}

void emit(const CliConfig &cfg, const Json &json, const std::string &text = {}) {
    if (cfg.json || text.empty())
        std::cout << json.dump(2) << '\n';
    else
        std::cout << text << '\n';
}

// A DID together with the keys that control it.
struct IdentityFile {
    DidDocument document;
    KeyPair signing;
    std::optional<KeyPair> agreement;

    const Did &did() const { return document.id(); }

    std::string signing_key_id() const {
        auto *vm = document.find_key(signing.type(), signing.public_key(), Purpose::authentication);
        if (!vm) throw Error(ErrorCode::UnknownKey, "signing key is not in the document");
        return vm->id;
    }
    std::string assertion_key_id() const {
        auto *vm = document.find_key(signing.type(), signing.public_key(), Purpose::assertion);
        if (!vm) throw Error(ErrorCode::UnknownKey, "no assertion key for " + did().full());
        return vm->id;
    }

    Json to_json() const {
        Json j{{"did", did().full()}, {"document", document.to_json()}, {"signingKey", signing.to_private_pem()}};
        if (agreement) j["agreementKey"] = agreement->to_private_pem();
        return j;
    }
    static IdentityFile from_json(const Json &j) {
        try {
            std::optional<KeyPair> agreement;
            if (j.contains("agreementKey")) agreement = KeyPair::from_private_pem(j.at("agreementKey").get<std::string>());
            return {DidDocument::from_json(j.at("document")),
                    KeyPair::from_private_pem(j.at("signingKey").get<std::string>()), std::move(agreement)};
        } catch (const nlohmann::json::exception &e) {
            throw Error(ErrorCode::Malformed, std::string("identity file: ") + e.what());
        }
    }
    void save(const fs::path &path) const {
        write_file(path, to_json().dump(2) + "\n");
        fs::permissions(path, fs::perms::owner_read | fs::perms::owner_write);
    }
    static IdentityFile load(const fs::path &path) { return from_json(read_json(path)); }
};

std::shared_ptr<DidResolver> make_resolver(const CliConfig &cfg) {
    auto resolver = std::make_shared<DidResolver>();
    auto client = std::make_shared<vdr::VdrClient>(cfg.vdr());
    resolver->register_handler("vdrsim", std::make_shared<vdr::VdrMethodHandler>(client));
    return resolver;
}

// Bundle JSON, PEM or DER.
Bytes read_certificate(const fs::path &path) {
    auto content = read_file(path);
    if (!content.empty() && content.front() == '{') return CertBundle::from_json(read_json(path)).certificate_der;
    if (content.find("-----BEGIN CERTIFICATE-----") != std::string::npos) return x509::pem_to_der(content);
    return Bytes(content.begin(), content.end());
}

Json claim_value(const std::string &text) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception &) {
        return text;
    }
}

std::string file_name_for(const Did &did) {
    std::string name = did.method() + "-" + did.subject_id().substr(0, 24);
    for (auto &c : name)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-') c = '_';
    return name + ".json";
}

channel::ExtensionTransport transport_from(const std::string &name) {
    if (name == "hello") return channel::ExtensionTransport::hello;
    if (name == "preamble") return channel::ExtensionTransport::preamble;
    throw Error(ErrorCode::UsageError, "transport must be hello or preamble");
}

Validity validity_days(int days) {
    if (days <= 0) throw Error(ErrorCode::UsageError, "--days must be positive");
    return Validity::days(days);
}

void save_bundle(const CliConfig &cfg, const CertBundle &bundle, const fs::path &out, const std::string &pem_out) {
    bundle.save(out.string());
    if (!pem_out.empty()) write_file(pem_out, bundle.certificate_pem());
    auto info = inspect_certificate(bundle.certificate_der);
    Json j{{"bundle", out.string()}, {"kind", to_string(bundle.kind)}, {"certificate", info.to_json()}};
    emit(cfg, j, std::string(to_string(bundle.kind)) + " certificate written to " + out.string());
}

// ---- did ----

void add_did_commands(CLI::App &app, CliConfig &cfg) {
    auto *did = app.add_subcommand("did", "Create, resolve and rotate DIDs");
    did->require_subcommand(1);

    auto *create = did->add_subcommand("create", "Generate keys and a DID; vdrsim DIDs are anchored");
    auto method = std::make_shared<std::string>("vdrsim");
    auto out = std::make_shared<std::string>();
    create->add_option("--method", *method, "vdrsim, key or peer")->check(CLI::IsMember(kMethods));
    create->add_option("--out", *out, "Identity file (default: data dir)");
    create->callback([&cfg, method, out] {
        auto signing = KeyPair::generate(KeyType::Ed25519);
        std::optional<DidDocument> doc;
        std::optional<KeyPair> agreement;
        std::optional<std::uint64_t> seq;
        if (*method == "vdrsim") {
            agreement = KeyPair::generate(KeyType::X25519);
            doc = vdr::make_vdrsim_document(signing, agreement);
            seq = vdr::VdrClient(cfg.vdr()).anchor(*doc, signing);
        } else {
            doc = (*method == "key" ? make_key_did(signing.public_key()) : make_peer_did(signing.public_key())).second;
        }
        IdentityFile id{*doc, signing, agreement};
        fs::path path = out->empty() ? cfg.data() / file_name_for(id.did()) : fs::path(*out);
        id.save(path);
        Json j{{"did", id.did().full()}, {"identity", path.string()}};
        if (seq) j["seq"] = *seq;
        emit(cfg, j, id.did().full());
    });

    auto *resolve = did->add_subcommand("resolve", "Print the current DID document");
    auto target = std::make_shared<std::string>();
    resolve->add_option("did", *target)->required();
    resolve->callback([&cfg, target] {
        auto result = make_resolver(cfg)->resolve(Did::parse(*target), CachePolicy::force());
        emit(cfg, result.document.to_json());
    });

    auto *update = did->add_subcommand("update", "Rotate the authentication key of an anchored DID");
    auto identity = std::make_shared<std::string>();
    update->add_option("--identity", *identity, "Identity file")->required()->check(CLI::ExistingFile);
    update->callback([&cfg, identity] {
        auto id = IdentityFile::load(*identity);
        if (id.did().method() != "vdrsim") throw Error(ErrorCode::UnsupportedMethod, "only vdrsim DIDs can be updated");
        auto old_key_id = id.signing_key_id();
        auto fresh = KeyPair::generate(KeyType::Ed25519);
        auto version = id.document.version() + 1;
        std::vector<VerificationMethod> methods{{"#key-" + std::to_string(version),
                                                 KeyType::Ed25519,
                                                 fresh.public_key(),
                                                 {Purpose::authentication, Purpose::assertion}}};
        for (auto &vm : id.document.verification_methods())
            if (vm.purposes.has(Purpose::key_agreement)) methods.push_back(vm);
        DidDocument next(id.did(), std::move(methods), version, didlink::now());
        auto seq = vdr::VdrClient(cfg.vdr()).update(next, id.signing, old_key_id);
        IdentityFile{next, fresh, id.agreement}.save(*identity);
        emit(cfg, {{"did", id.did().full()}, {"version", version}, {"seq", seq}},
             id.did().full() + " now at version " + std::to_string(version));
    });
}

// ---- vdr ----

void add_vdr_commands(CLI::App &app, CliConfig &cfg) {
    auto *vdr_cmd = app.add_subcommand("vdr", "Run or query the registry");
    vdr_cmd->require_subcommand(1);

    struct ServeOpts {
        std::string bind = kDefaultVdr;
        std::string data;
        int read_delay = 0, write_delay = 0, jitter = 0;
    };
    auto opts = std::make_shared<ServeOpts>();
    auto *serve = vdr_cmd->add_subcommand("serve", "Serve a ledger until interrupted");
    serve->add_option("--bind", opts->bind, "host:port");
    serve->add_option("--data", opts->data, "Ledger log file (default: data dir)");
    serve->add_option("--read-delay-ms", opts->read_delay)->check(CLI::NonNegativeNumber);
    serve->add_option("--write-delay-ms", opts->write_delay)->check(CLI::NonNegativeNumber);
    serve->add_option("--jitter-ms", opts->jitter)->check(CLI::NonNegativeNumber);
    serve->callback([&cfg, opts] {
        fs::path log = opts->data.empty() ? cfg.data() / "ledger.jsonl" : fs::path(opts->data);
        auto ledger = std::make_shared<vdr::Ledger>(log);
        vdr::VdrServer server(ledger, {std::chrono::milliseconds(opts->read_delay),
                                       std::chrono::milliseconds(opts->write_delay),
                                       std::chrono::milliseconds(opts->jitter)});
        sigset_t set;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set, nullptr);
        server.start(net::Endpoint::parse(opts->bind));
        emit(cfg, {{"listening", server.endpoint().str()}, {"log", log.string()}, {"height", ledger->height()}},
             "registry listening on " + server.endpoint().str() + " (height " + std::to_string(ledger->height()) + ")");
        std::cout.flush();
        int sig = 0;
        sigwait(&set, &sig);
        server.stop();
    });

    auto *status = vdr_cmd->add_subcommand("status", "Check the registry or read a status-list entry");
    auto list = std::make_shared<std::string>();
    auto index = std::make_shared<std::uint32_t>(0);
    status->add_option("--list", *list, "Status list id");
    status->add_option("--index", *index, "Entry index");
    status->callback([&cfg, list, index] {
        vdr::VdrClient client(cfg.vdr());
        if (list->empty()) {
            try {
                client.lookup(Did::parse("did:vdrsim:status-probe"));
            } catch (const Error &e) {
                if (e.code() != ErrorCode::NotFound) throw;
            }
            emit(cfg, {{"vdr", cfg.vdr_address}, {"reachable", true}}, cfg.vdr_address + " reachable");
            return;
        }
        auto reading = client.get_status(*list, *index);
        emit(cfg, {{"list", *list}, {"index", *index}, {"revoked", reading.revoked}, {"version", reading.version}},
             reading.revoked ? "revoked" : "valid");
    });
}

// ---- cert ----

void add_cert_commands(CLI::App &app, CliConfig &cfg) {
    auto *cert = app.add_subcommand("cert", "Issue and inspect certificates");
    cert->require_subcommand(1);

    struct Opts {
        std::string identity, out, pem, name, ca, key_type = "Ed25519";
        int days = 365;
    };

    auto add_common = [](CLI::App *cmd, Opts &o) {
        cmd->add_option("--out", o.out, "Bundle file")->required();
        cmd->add_option("--pem", o.pem, "Also write the certificate as PEM");
        cmd->add_option("--days", o.days, "Validity in days");
    };
    auto key_type = [](const std::string &name) {
        auto t = key_type_from_string(name);
        if (!t || *t == KeyType::X25519) throw Error(ErrorCode::UsageError, "key type must be Ed25519 or EcdsaP256");
        return *t;
    };

    auto did_opts = std::make_shared<Opts>();
    auto *make_did = cert->add_subcommand("make-did", "Self-issued certificate naming the identity's DID");
    make_did->add_option("--identity", did_opts->identity, "Identity file")->required()->check(CLI::ExistingFile);
    add_common(make_did, *did_opts);
    make_did->callback([&cfg, did_opts] {
        auto id = IdentityFile::load(did_opts->identity);
        save_bundle(cfg, make_did_certificate(id.did(), id.signing, validity_days(did_opts->days)), did_opts->out,
                    did_opts->pem);
    });

    auto derived_opts = std::make_shared<Opts>();
    auto *make_derived = cert->add_subcommand("make-derived", "Self-issued certificate with a derived identifier");
    make_derived->add_option("--key-type", derived_opts->key_type, "Ed25519 or EcdsaP256");
    add_common(make_derived, *derived_opts);
    make_derived->callback([&cfg, derived_opts, key_type] {
        auto key = KeyPair::generate(key_type(derived_opts->key_type));
        save_bundle(cfg, make_derived_id_certificate(key, validity_days(derived_opts->days)), derived_opts->out,
                    derived_opts->pem);
    });

    auto root_opts = std::make_shared<Opts>();
    root_opts->days = 3650;
    auto *ca_root = cert->add_subcommand("ca-root", "Self-signed CA root");
    ca_root->add_option("--name", root_opts->name, "Common name")->required();
    ca_root->add_option("--key-type", root_opts->key_type, "Ed25519 or EcdsaP256");
    add_common(ca_root, *root_opts);
    ca_root->callback([&cfg, root_opts, key_type] {
        save_bundle(cfg, make_ca_root(root_opts->name, validity_days(root_opts->days), key_type(root_opts->key_type)),
                    root_opts->out, root_opts->pem);
    });

    auto issue_opts = std::make_shared<Opts>();
    auto *ca_issue = cert->add_subcommand("ca-issue", "Leaf certificate signed by a CA root");
    ca_issue->add_option("--ca", issue_opts->ca, "CA root bundle")->required()->check(CLI::ExistingFile);
    ca_issue->add_option("--name", issue_opts->name, "Host name")->required();
    ca_issue->add_option("--key-type", issue_opts->key_type, "Ed25519 or EcdsaP256");
    add_common(ca_issue, *issue_opts);
    ca_issue->callback([&cfg, issue_opts, key_type] {
        auto root = CertBundle::load(issue_opts->ca);
        auto key = KeyPair::generate(key_type(issue_opts->key_type));
        save_bundle(cfg, issue_ca_certificate(root, issue_opts->name, key, validity_days(issue_opts->days)),
                    issue_opts->out, issue_opts->pem);
    });

    auto file = std::make_shared<std::string>();
    auto *inspect = cert->add_subcommand("inspect", "Decode a bundle, PEM or DER certificate");
    inspect->add_option("file", *file)->required()->check(CLI::ExistingFile);
    inspect->callback([&cfg, file] {
        auto der = read_certificate(*file);
        auto j = inspect_certificate(der).to_json();
        try {
            j["did"] = extract_did(der).full();
        } catch (const Error &e) {
            if (e.code() == ErrorCode::Malformed) throw;
        }
        emit(cfg, j);
    });
}

// ---- vc ----

void add_vc_commands(CLI::App &app, CliConfig &cfg) {
    auto *vc_cmd = app.add_subcommand("vc", "Selective-disclosure credentials");
    vc_cmd->require_subcommand(1);

    struct IssueOpts {
        std::string issuer, subject, out, status_list;
        std::vector<std::string> claims;
        std::optional<std::uint32_t> status_index;
        std::uint32_t list_size = 1024;
        int days = 365;
    };
    auto io = std::make_shared<IssueOpts>();
    auto *issue = vc_cmd->add_subcommand("issue", "Issue a credential");
    issue->add_option("--issuer", io->issuer, "Issuer identity file")->required()->check(CLI::ExistingFile);
    issue->add_option("--subject", io->subject, "Subject DID")->required();
    issue->add_option("--claim", io->claims, "name=value (repeatable)")->required();
    issue->add_option("--days", io->days, "Validity in days");
    issue->add_option("--status-list", io->status_list, "Revocation list id (created when absent)");
    issue->add_option("--status-index", io->status_index, "Entry in the revocation list");
    issue->add_option("--list-size", io->list_size, "Size of a newly created list");
    issue->add_option("--out", io->out, "Write the credential here");
    issue->callback([&cfg, io] {
        auto id = IdentityFile::load(io->issuer);
        Json claims = Json::object();
        for (auto &c : io->claims) {
            auto eq = c.find('=');
            if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::UsageError, "claim must be name=value");
            claims[c.substr(0, eq)] = claim_value(c.substr(eq + 1));
        }
        std::optional<vc::StatusRef> status;
        if (!io->status_list.empty()) {
            if (!io->status_index) throw Error(ErrorCode::UsageError, "--status-list needs --status-index");
            vdr::VdrClient client(cfg.vdr());
            try {
                client.get_status(io->status_list, 0);
            } catch (const Error &e) {
                if (e.code() != ErrorCode::NotFound) throw;
                client.create_status_list(io->status_list, id.did(), io->list_size, id.signing,
                                          id.did().full() + id.assertion_key_id());
            }
            status = vc::StatusRef{io->status_list, *io->status_index};
        }
        auto now = didlink::now();
        vc::ValidityWindow window{now - std::chrono::minutes(1), now + std::chrono::hours(24) * io->days};
        auto cred = vc::issue(id.signing, id.did(), Did::parse(io->subject), claims, window, status,
                              id.did().full() + id.assertion_key_id());
        auto compact = cred.serialize();
        if (!io->out.empty()) write_file(io->out, compact + "\n");
        emit(cfg, {{"credential", compact}, {"claims", cred.claim_names()}}, compact);
    });

    struct PresentOpts {
        std::string credential, holder, nonce, audience, out;
        std::vector<std::string> disclose;
    };
    auto po = std::make_shared<PresentOpts>();
    auto *present = vc_cmd->add_subcommand("present", "Derive a presentation disclosing chosen claims");
    present->add_option("--credential", po->credential, "Credential file")->required()->check(CLI::ExistingFile);
    present->add_option("--disclose", po->disclose, "Claim name (repeatable; default all)");
    present->add_option("--holder", po->holder, "Holder identity file, adds a key-binding proof")
        ->check(CLI::ExistingFile);
    present->add_option("--nonce", po->nonce);
    present->add_option("--audience", po->audience);
    present->add_option("--out", po->out, "Write the presentation here");
    present->callback([&cfg, po] {
        auto cred = vc::SdJwtCredential::parse(CLI::detail::trim_copy(read_file(po->credential)));
        auto disclose = po->disclose.empty() ? cred.claim_names() : po->disclose;
        std::optional<IdentityFile> holder;
        std::optional<vc::HolderProof> proof;
        if (!po->holder.empty()) {
            holder = IdentityFile::load(po->holder);
            proof = vc::HolderProof{&holder->signing, holder->did().full() + holder->signing_key_id(), po->nonce,
                                    po->audience, didlink::now()};
        }
        auto compact = vc::derive_presentation(cred, disclose, proof).serialize();
        if (!po->out.empty()) write_file(po->out, compact + "\n");
        emit(cfg, {{"presentation", compact}, {"disclosed", disclose}}, compact);
    });

    struct VerifyOpts {
        std::string presentation, subject, nonce, audience;
        std::vector<std::string> issuers;
    };
    auto vo = std::make_shared<VerifyOpts>();
    auto *verify = vc_cmd->add_subcommand("verify", "Verify a presentation");
    verify->add_option("presentation", vo->presentation, "Presentation file")->required()->check(CLI::ExistingFile);
    verify->add_option("--subject", vo->subject, "DID authenticated on the channel");
    verify->add_option("--accept-issuer", vo->issuers, "Accepted issuer DID (repeatable; default any)");
    verify->add_option("--nonce", vo->nonce);
    verify->add_option("--audience", vo->audience);
    verify->callback([&cfg, vo] {
        auto presentation = vc::Presentation::parse(CLI::detail::trim_copy(read_file(vo->presentation)));
        vc::VerifyPolicy policy;
        if (!vo->subject.empty()) policy.expected_subject = Did::parse(vo->subject);
        for (auto &i : vo->issuers) policy.accepted_issuers.push_back(Did::parse(i));
        if (!vo->nonce.empty()) policy.nonce = vo->nonce;
        if (!vo->audience.empty()) policy.audience = vo->audience;
        policy.cache_policy = cfg.cache_policy();
        auto resolver = make_resolver(cfg);
        vdr::VdrClient status(cfg.vdr());
        auto verified = vc::verify_presentation(presentation, policy, *resolver, &status);
        Json j{{"status", vc::to_string(verified.status)},
               {"issuer", verified.issuer.full()},
               {"subject", verified.subject.full()},
               {"claims", verified.claims},
               {"holderBindingChecked", verified.holder_binding_checked}};
        emit(cfg, j, std::string(vc::to_string(verified.status)) + " " + verified.claims.dump());
    });

    struct RevokeOpts {
        std::string issuer, list;
        std::uint32_t index = 0;
        bool reinstate = false;
    };
    auto ro = std::make_shared<RevokeOpts>();
    auto *revoke = vc_cmd->add_subcommand("revoke", "Flip a revocation-list entry");
    revoke->add_option("--issuer", ro->issuer, "List owner identity file")->required()->check(CLI::ExistingFile);
    revoke->add_option("--list", ro->list, "Status list id")->required();
    revoke->add_option("--index", ro->index, "Entry index")->required();
    revoke->add_flag("--reinstate", ro->reinstate, "Mark the entry valid again");
    revoke->callback([&cfg, ro] {
        auto id = IdentityFile::load(ro->issuer);
        auto seq = vdr::VdrClient(cfg.vdr())
                       .set_status(ro->list, ro->index, !ro->reinstate, id.signing,
                                   id.did().full() + id.assertion_key_id());
        emit(cfg, {{"list", ro->list}, {"index", ro->index}, {"revoked", !ro->reinstate}, {"seq", seq}},
             ro->reinstate ? "reinstated" : "revoked");
    });
}

// ---- serve / connect ----

struct ChannelOpts {
    std::string identity, transport = "preamble", expect_did, address, bind = "127.0.0.1:9443";
    std::vector<std::string> trust_roots;
    bool require_client_auth = false;
    bool force_resolve = false;
    int count = 1;
};

channel::VerifySettings verify_settings(const CliConfig &cfg, const ChannelOpts &o) {
    channel::VerifySettings v;
    v.resolver = make_resolver(cfg);
    v.cache_policy = o.force_resolve ? CachePolicy::force() : cfg.cache_policy();
    for (auto &r : o.trust_roots) v.trust_roots.push_back(read_certificate(r));
    return v;
}

void add_channel_commands(CLI::App &app, CliConfig &cfg) {
    auto so = std::make_shared<ChannelOpts>();
    auto *serve = app.add_subcommand("serve", "Accept TLS connections and report each authenticated peer");
    serve->add_option("--identity", so->identity, "Certificate bundle")->required()->check(CLI::ExistingFile);
    serve->add_option("--bind", so->bind, "host:port");
    serve->add_flag("--require-client-auth", so->require_client_auth);
    serve->add_option("--trust-root", so->trust_roots, "CA certificate for client chains (repeatable)");
    serve->add_option("--transport", so->transport, "hello or preamble");
    serve->add_flag("--force-resolve", so->force_resolve, "Ignore cached DID documents");
    serve->add_option("--count", so->count, "Connections to accept; 0 serves forever");
    serve->callback([&cfg, so] {
        auto bundle = CertBundle::load(so->identity);
        channel::ServerConfig scfg;
        scfg.caps.supported_methods = kMethods;
        scfg.caps.identities = {negotiation::make_server_identity(bundle)};
        scfg.caps.verify_client_did = true;
        scfg.client_auth = so->require_client_auth ? channel::ClientAuth::required : channel::ClientAuth::optional;
        scfg.verify = verify_settings(cfg, *so);
        scfg.transport = transport_from(so->transport);
        channel::TlsServer server(scfg);
        auto listener = net::TcpListener::bind(net::Endpoint::parse(so->bind));
        std::cerr << "listening on " << listener.local_endpoint().str() << '\n';
        for (int served = 0; so->count == 0 || served < so->count; ++served) {
            try {
                auto session = server.accept(listener);
                std::cout << session.peer().to_json().dump() << '\n' << std::flush;
                session.close();
            } catch (const Error &e) {
                std::cout << Json{{"error", e.code_string()}, {"detail", e.detail()}}.dump() << '\n' << std::flush;
            }
        }
    });

    auto co = std::make_shared<ChannelOpts>();
    auto *connect = app.add_subcommand("connect", "Open a TLS session and report the authenticated server");
    connect->add_option("address", co->address, "host:port")->required();
    connect->add_option("--expect-did", co->expect_did, "DID (or host name) the server must prove");
    connect->add_option("--identity", co->identity, "Client certificate bundle")->check(CLI::ExistingFile);
    connect->add_option("--trust-root", co->trust_roots, "CA certificate for server chains (repeatable)");
    connect->add_option("--transport", co->transport, "hello or preamble");
    connect->add_flag("--force-resolve", co->force_resolve, "Ignore cached DID documents");
    connect->callback([&cfg, co] {
        channel::ClientConfig ccfg;
        if (!co->identity.empty()) {
            ccfg.identity = CertBundle::load(co->identity);
            if (ccfg.identity->did) {
                ccfg.offer.client_did = *ccfg.identity->did;
                ccfg.offer.client_did_methods = {ccfg.identity->did->method()};
            }
        }
        if (!co->expect_did.empty()) ccfg.offer.target_server = co->expect_did;
        ccfg.verify = verify_settings(cfg, *co);
        ccfg.transport = transport_from(co->transport);
        auto session = channel::connect(net::Endpoint::parse(co->address), ccfg);
        auto j = session.peer().to_json();
        j["transport"] = channel::to_string(session.transport());
        session.close();
        emit(cfg, j);
    });
}

// ---- bench ----

void add_bench_commands(CLI::App &app, CliConfig &cfg) {
    auto *bench_cmd = app.add_subcommand("bench", "Handshake and transfer measurements");
    bench_cmd->require_subcommand(1);

    struct ScenarioOpts {
        std::vector<std::string> ids;
        std::uint32_t reps = 100, warmup = 5;
        std::optional<int> read_delay, write_delay, jitter;
        std::string out, plot, transport = "hello", vdr;
        bool csv = false, identification = false;
    };
    auto so = std::make_shared<ScenarioOpts>();
    auto *scenario = bench_cmd->add_subcommand("scenario", "Repeat handshakes for fixed configurations");
    scenario->add_option("--id", so->ids, "I..XII or all (repeatable)")->required();
    scenario->add_option("--reps", so->reps)->check(CLI::PositiveNumber);
    scenario->add_option("--warmup", so->warmup);
    scenario->add_option("--read-delay-ms", so->read_delay, "Registry read latency")->check(CLI::NonNegativeNumber);
    scenario->add_option("--write-delay-ms", so->write_delay)->check(CLI::NonNegativeNumber);
    scenario->add_option("--jitter-ms", so->jitter)->check(CLI::NonNegativeNumber);
    scenario->add_option("--transport", so->transport, "hello or preamble");
    scenario->add_flag("--identification", so->identification, "Run mutual identification after each handshake");
    scenario->add_option("--registry", so->vdr, "External registry host:port (default: in-process)");
    scenario->add_option("--out", so->out, "Report file; one per scenario when several ids are given");
    scenario->add_flag("--csv", so->csv, "Write CSV instead of JSON");
    scenario->add_option("--plot", so->plot, "SVG chart of handshake means");
    scenario->callback([&cfg, so] {
        std::vector<bench::ScenarioId> ids;
        for (auto &text : so->ids) {
            if (text == "all") {
                ids.insert(ids.end(), bench::all_scenarios().begin(), bench::all_scenarios().end());
            } else {
                ids.push_back(bench::scenario_from_string(text));
            }
        }
        std::vector<bench::BenchReport> reports;
        Json summaries = Json::array();
        for (auto id : ids) {
            auto s = bench::Scenario::preset(id, so->reps);
            s.warmup = so->warmup;
            s.transport = transport_from(so->transport);
            s.identification = so->identification;
            if (so->read_delay) s.vdr_latency.read_delay = std::chrono::milliseconds(*so->read_delay);
            if (so->write_delay) s.vdr_latency.write_delay = std::chrono::milliseconds(*so->write_delay);
            if (so->jitter) s.vdr_latency.jitter = std::chrono::milliseconds(*so->jitter);
            if (!so->vdr.empty()) s.vdr = net::Endpoint::parse(so->vdr);
            if (cfg.debug()) std::cerr << s.to_json().dump() << '\n';
            auto report = bench::run_scenario(s);
            if (!so->out.empty()) {
                fs::path out = so->out;
                if (ids.size() > 1)
                    out = out.parent_path() /
                          (out.stem().string() + "-" + std::string(bench::to_string(id)) + out.extension().string());
                bench::emit_report(report, so->csv ? bench::ReportFormat::csv : bench::ReportFormat::json, out);
            }
            Json brief{{"scenario", report.scenario}};
            for (auto &[key, summary] : report.summary) brief[key] = summary.mean;
            summaries.push_back(brief);
            reports.push_back(std::move(report));
        }
        if (!so->plot.empty()) write_file(so->plot, bench::scenario_svg(reports));
        if (so->out.empty() && reports.size() == 1)
            emit(cfg, reports.front().to_json());
        else
            emit(cfg, summaries);
    });

    struct TransferOpts {
        std::vector<std::size_t> payloads{10240};
        std::size_t packets = 5;
        std::uint32_t reps = 50;
        bool sweep = false;
        std::string out, plot;
    };
    auto to = std::make_shared<TransferOpts>();
    auto *transfer = bench_cmd->add_subcommand("transfer", "Session versus per-message envelopes");
    transfer->add_option("--payload", to->payloads, "Payload bytes per packet (repeatable)")
        ->check(CLI::PositiveNumber);
    transfer->add_option("--packets", to->packets)->check(CLI::PositiveNumber);
    transfer->add_option("--reps", to->reps)->check(CLI::PositiveNumber);
    transfer->add_flag("--sweep", to->sweep, "Measure every packet count from 1 to --packets");
    transfer->add_option("--out", to->out, "JSON report file");
    transfer->add_option("--plot", to->plot, "SVG chart of time against packets");
    transfer->callback([&cfg, to] {
        std::vector<bench::TransferComparison> series;
        Json all = Json::array();
        for (auto payload : to->payloads) {
            for (std::size_t n = to->sweep ? 1 : to->packets; n <= to->packets; ++n) {
                series.push_back(bench::run_transfer_comparison(payload, n, to->reps));
                all.push_back(series.back().to_json());
            }
        }
        if (!to->out.empty()) write_file(to->out, all.dump(2) + "\n");
        if (!to->plot.empty()) write_file(to->plot, bench::transfer_svg(series));
        emit(cfg, all.size() == 1 ? all.front() : all);
    });
}

int fail(const CliConfig &cfg, int status, std::string_view code, const std::string &detail) {
    if (cfg.json)
        std::cout << Json{{"error", code}, {"detail", detail}}.dump() << '\n';
    else
        std::cerr << "error: " << code << (detail.empty() ? "" : ": " + detail) << '\n';
    return status;
}

} // namespace

int main(int argc, char **argv) {
    CliConfig cfg;
    CLI::App app{"DID-authenticated TLS toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "didlink 0.1.0");

    std::string config_file, vdr_flag, data_flag, log_flag;
    std::optional<int> cache_age_flag;
    app.add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--vdr", vdr_flag, "Registry host:port (env DIDLINK_VDR)");
    app.add_option("--data-dir", data_flag, "State directory");
    app.add_option("--cache-max-age", cache_age_flag, "Seconds a cached DID document stays fresh")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--log-level", log_flag, "error, warn, info or debug");
    app.add_flag("--json", cfg.json, "Machine-readable output");

    // Flags beat the environment, which beats the config file.
    app.parse_complete_callback([&] {
        if (!config_file.empty()) {
            auto file = read_json(config_file);
            if (!file.is_object()) throw Error(ErrorCode::UsageError, "config must be a JSON object");
            cfg.vdr_address = file.value("vdr", cfg.vdr_address);
            if (file.contains("data_dir")) cfg.data_dir = file["data_dir"].get<std::string>();
            if (file.contains("cache_max_age")) cfg.cache_max_age = std::chrono::seconds(file["cache_max_age"].get<int>());
            cfg.log_level = file.value("log_level", cfg.log_level);
        }
        if (const char *env = std::getenv("DIDLINK_VDR"); env && *env) cfg.vdr_address = env;
        if (!vdr_flag.empty()) cfg.vdr_address = vdr_flag;
        if (!data_flag.empty()) cfg.data_dir = data_flag;
        if (cache_age_flag) cfg.cache_max_age = std::chrono::seconds(*cache_age_flag);
        if (!log_flag.empty()) cfg.log_level = log_flag;
        if (cfg.data_dir.empty()) {
            const char *home = std::getenv("HOME");
            cfg.data_dir = home ? fs::path(home) / ".didlink" : fs::path(".didlink");
        }
        if (cfg.debug())
            std::cerr << "vdr=" << cfg.vdr_address << " data_dir=" << cfg.data_dir.string() << '\n';
    });

    add_did_commands(app, cfg);
    add_vdr_commands(app, cfg);
    add_cert_commands(app, cfg);
    add_vc_commands(app, cfg);
    add_channel_commands(app, cfg);
    add_bench_commands(app, cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return 2;
    } catch (const Error &e) {
        return fail(cfg, e.code() == ErrorCode::UsageError ? 2 : 1, e.code_string(), e.detail());
    } catch (const nlohmann::json::exception &e) {
        return fail(cfg, 1, to_string(ErrorCode::Malformed), e.what());
    } catch (const fs::filesystem_error &e) {
        return fail(cfg, 1, to_string(ErrorCode::IoFailure), e.what());
    }
    return 0;
}

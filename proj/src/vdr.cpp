#include "didlink/vdr.hpp"

#include <condition_variable>
#include <random>
#include <sstream>
#include <sys/socket.h>

#include "didlink/error.hpp"

namespace didlink::vdr {

namespace {

const std::string kGenesisHash(64, '0');

TxKind kind_from_string(std::string_view text) {
    for (auto k : {TxKind::anchor, TxKind::update, TxKind::status_create, TxKind::status_set})
        if (to_string(k) == text) return k;
    throw Error(ErrorCode::CorruptLog, "unknown transaction kind");
}

std::string record_hash(const LedgerTransaction &tx) {
    auto json = tx.to_json();
    json.erase("hash");
    return codec::hex_encode(crypto::sha256(as_bytes(canonical(json))));
}

LedgerTransaction tx_from_json(const Json &json) {
    LedgerTransaction tx;
    tx.seq = json.at("seq").get<std::uint64_t>();
    tx.kind = kind_from_string(json.at("kind").get<std::string>());
    if (json.contains("did")) tx.did = Did::parse(json.at("did").get<std::string>());
    tx.payload = json.at("payload");
    tx.signature = json.at("signature").get<std::string>();
    tx.signer = json.at("signer").get<std::string>();
    tx.timestamp = parse_utc(json.at("timestamp").get<std::string>());
    tx.prev_hash = json.at("prev").get<std::string>();
    tx.hash = json.at("hash").get<std::string>();
    return tx;
}

/// Splits "did:...#frag" into the DID and the fragment; throws UnauthorizedKey
/// when the signer is not a DID URL.
std::pair<Did, std::string> split_did_url(const std::string &signer) {
    auto hash = signer.find('#');
    if (hash == std::string::npos) throw Error(ErrorCode::UnauthorizedKey, "signer must be a DID URL");
    try {
        return {Did::parse(signer.substr(0, hash)), signer.substr(hash)};
    } catch (const Error &) {
        throw Error(ErrorCode::UnauthorizedKey, "signer must be a DID URL");
    }
}

bool verify_with(const VerificationMethod &vm, ByteView message, ByteView signature) {
    return vm.key_type != KeyType::X25519 && crypto::verify(vm.key_type, vm.public_key, message, signature);
}

Bytes decode_signature(const std::string &text) {
    try {
        return codec::base64url_decode(text);
    } catch (const Error &) {
        throw Error(ErrorCode::BadSignature, "signature is not base64url");
    }
}

} // namespace

std::string_view to_string(TxKind kind) noexcept {
    switch (kind) {
    case TxKind::anchor: return "anchor";
    case TxKind::update: return "update";
    case TxKind::status_create: return "status_create";
    case TxKind::status_set: return "status_set";
    }
    return "";
}

Json LedgerTransaction::to_json() const {
    Json json = {{"seq", seq},
                 {"kind", to_string(kind)},
                 {"payload", payload},
                 {"signature", signature},
                 {"signer", signer},
                 {"timestamp", format_utc(timestamp)},
                 {"prev", prev_hash},
                 {"hash", hash}};
    if (did) json["did"] = did->full();
    return json;
}

std::string status_create_message(const std::string &list_id, const Did &owner, std::uint32_t size) {
    return canonical({{"op", "status_create"}, {"list_id", list_id}, {"owner", owner.full()}, {"size", size}});
}

std::string status_set_message(const std::string &list_id, std::uint32_t index, bool revoked, std::uint64_t version) {
    return canonical(
        {{"op", "status_set"}, {"list_id", list_id}, {"index", index}, {"revoked", revoked}, {"version", version}});
}

struct Ledger::State {
    std::map<std::string, std::shared_ptr<const DidDocument>> dids;
    std::map<std::string, std::shared_ptr<const StatusList>> lists;
    std::vector<std::shared_ptr<const LedgerTransaction>> log;
    std::uint64_t seq = 0;
    std::string last_hash = kGenesisHash;
};

/// Validates tx against the state strictly before it and returns the
/// successor state. Shared by live writes and log replay.
std::shared_ptr<Ledger::State> Ledger::apply(const State &prior, const LedgerTransaction &tx) {
    auto next = std::make_shared<State>(prior);
    auto sig = decode_signature(tx.signature);

    switch (tx.kind) {
    case TxKind::anchor: {
        auto doc = DidDocument::from_json(tx.payload);
        if (!tx.did || !(doc.id() == *tx.did)) throw Error(ErrorCode::MalformedDocument, "document id mismatch");
        if (doc.version() != 1) throw Error(ErrorCode::MalformedDocument, "genesis document must be version 1");
        if (prior.dids.count(doc.id().full())) throw Error(ErrorCode::AlreadyAnchored, doc.id().full());
        auto *vm = doc.find_method(tx.signer);
        if (!vm || !verify_with(*vm, as_bytes(doc.canonical()), sig))
            throw Error(ErrorCode::BadSignature, "genesis document not signed by one of its own keys");
        auto key = doc.id().full();
        next->dids[key] = std::make_shared<const DidDocument>(std::move(doc));
        break;
    }
    case TxKind::update: {
        if (!tx.did) throw Error(ErrorCode::MalformedDocument, "update without DID");
        auto it = prior.dids.find(tx.did->full());
        if (it == prior.dids.end()) throw Error(ErrorCode::NotFound, tx.did->full());
        auto doc = DidDocument::from_json(tx.payload);
        if (!(doc.id() == *tx.did)) throw Error(ErrorCode::MalformedDocument, "document id mismatch");
        const auto &current = *it->second;
        if (doc.version() != current.version() + 1)
            throw Error(ErrorCode::VersionConflict, "expected version " + std::to_string(current.version() + 1));
        auto *vm = current.find_method(tx.signer);
        if (!vm || !vm->purposes.has(Purpose::authentication) || vm->key_type == KeyType::X25519)
            throw Error(ErrorCode::UnauthorizedKey, "signer is not an authentication key of the current document");
        if (!verify_with(*vm, as_bytes(doc.canonical()), sig)) throw Error(ErrorCode::BadSignature, "update signature");
        auto key = doc.id().full();
        next->dids[key] = std::make_shared<const DidDocument>(std::move(doc));
        break;
    }
    case TxKind::status_create: {
        auto list_id = tx.payload.at("list_id").get<std::string>();
        auto owner = Did::parse(tx.payload.at("owner").get<std::string>());
        auto size = tx.payload.at("size").get<std::uint32_t>();
        if (size == 0 || size > (1u << 24)) throw Error(ErrorCode::IndexOutOfRange, "status list size");
        if (prior.lists.count(list_id)) throw Error(ErrorCode::DuplicateList, list_id);
        auto owner_it = prior.dids.find(owner.full());
        if (owner_it == prior.dids.end()) throw Error(ErrorCode::NotFound, owner.full());
        auto [signer_did, frag] = split_did_url(tx.signer);
        auto *vm = owner_it->second->find_method(frag);
        if (!(signer_did == owner) || !vm || !vm->purposes.has(Purpose::assertion))
            throw Error(ErrorCode::UnauthorizedKey, "signer is not an assertion key of the owner");
        if (!verify_with(*vm, as_bytes(status_create_message(list_id, owner, size)), sig))
            throw Error(ErrorCode::BadSignature, "status list signature");
        next->lists[list_id] = std::make_shared<const StatusList>(StatusList{list_id, owner, std::vector<bool>(size), 1});
        break;
    }
    case TxKind::status_set: {
        auto list_id = tx.payload.at("list_id").get<std::string>();
        auto index = tx.payload.at("index").get<std::uint32_t>();
        auto revoked = tx.payload.at("revoked").get<bool>();
        auto version = tx.payload.at("version").get<std::uint64_t>();
        auto list_it = prior.lists.find(list_id);
        if (list_it == prior.lists.end()) throw Error(ErrorCode::NotFound, list_id);
        const auto &list = *list_it->second;
        if (index >= list.bits.size()) throw Error(ErrorCode::IndexOutOfRange, std::to_string(index));
        auto [signer_did, frag] = split_did_url(tx.signer);
        auto owner_it = prior.dids.find(list.owner.full());
        const VerificationMethod *vm = owner_it == prior.dids.end() ? nullptr : owner_it->second->find_method(frag);
        if (!(signer_did == list.owner) || !vm || !vm->purposes.has(Purpose::assertion))
            throw Error(ErrorCode::UnauthorizedKey, "signer is not an assertion key of the list owner");
        if (version != list.version + 1)
            throw Error(ErrorCode::VersionConflict, "expected version " + std::to_string(list.version + 1));
        if (!verify_with(*vm, as_bytes(status_set_message(list_id, index, revoked, version)), sig))
            throw Error(ErrorCode::BadSignature, "status update signature");
        auto updated = std::make_shared<StatusList>(list);
        updated->bits[index] = revoked;
        updated->version = version;
        next->lists[list_id] = std::move(updated);
        break;
    }
    }
    return next;
}

Ledger::Ledger(std::optional<std::filesystem::path> log_path, ClockFn clock)
    : clock_(std::move(clock)), log_path_(std::move(log_path)), state_(std::make_shared<const State>()) {
    if (!log_path_) return;

    std::shared_ptr<State> state = std::make_shared<State>();
    if (std::filesystem::exists(*log_path_)) {
        std::ifstream in(*log_path_, std::ios::binary);
        if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + log_path_->string());
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (!content.empty() && content.back() != '\n') throw Error(ErrorCode::CorruptLog, "log ends mid-record");
        std::size_t pos = 0;
        while (pos < content.size()) {
            auto end = content.find('\n', pos);
            std::string_view line(content.data() + pos, end - pos);
            pos = end + 1;
            try {
                auto tx = tx_from_json(parse_canonical(line));
                if (tx.seq != state->seq + 1) throw Error(ErrorCode::CorruptLog, "sequence gap");
                if (tx.prev_hash != state->last_hash) throw Error(ErrorCode::CorruptLog, "hash chain broken");
                if (record_hash(tx) != tx.hash) throw Error(ErrorCode::CorruptLog, "record hash mismatch");
                auto next = apply(*state, tx);
                next->seq = tx.seq;
                next->last_hash = tx.hash;
                next->log.push_back(std::make_shared<const LedgerTransaction>(std::move(tx)));
                state = std::move(next);
            } catch (const Error &e) {
                if (e.code() == ErrorCode::CorruptLog) throw;
                throw Error(ErrorCode::CorruptLog, "record " + std::to_string(state->seq + 1) + ": " + e.what());
            } catch (const nlohmann::json::exception &e) {
                throw Error(ErrorCode::CorruptLog, "record " + std::to_string(state->seq + 1) + ": " + e.what());
            }
        }
    } else if (log_path_->has_parent_path()) {
        std::filesystem::create_directories(log_path_->parent_path());
    }
    state_ = std::move(state);
    log_.open(*log_path_, std::ios::binary | std::ios::app);
    if (!log_) throw Error(ErrorCode::IoFailure, "cannot open " + log_path_->string() + " for append");
}

std::shared_ptr<const Ledger::State> Ledger::snapshot() const { return std::atomic_load(&state_); }

std::uint64_t Ledger::commit(LedgerTransaction tx) {
    std::lock_guard lock(writer_);
    auto prior = snapshot();
    tx.timestamp = from_unix(to_unix(clock_()));
    auto next = apply(*prior, tx);
    tx.seq = prior->seq + 1;
    tx.prev_hash = prior->last_hash;
    tx.hash = record_hash(tx);
    if (log_path_) {
        log_ << canonical(tx.to_json()) << '\n';
        log_.flush();
        if (!log_) throw Error(ErrorCode::IoFailure, "log append failed");
    }
    next->seq = tx.seq;
    next->last_hash = tx.hash;
    next->log.push_back(std::make_shared<const LedgerTransaction>(std::move(tx)));
    auto seq = next->seq;
    std::atomic_store(&state_, std::shared_ptr<const State>(std::move(next)));
    return seq;
}

std::uint64_t Ledger::anchor(const DidDocument &document, ByteView signature) {
    LedgerTransaction tx;
    tx.kind = TxKind::anchor;
    tx.did = document.id();
    tx.payload = document.to_json();
    tx.signature = codec::base64url_encode(signature);
    auto message = document.canonical();
    for (auto &vm : document.verification_methods()) {
        if (verify_with(vm, as_bytes(message), signature)) {
            tx.signer = vm.id;
            break;
        }
    }
    if (tx.signer.empty() && !document.verification_methods().empty())
        tx.signer = document.verification_methods().front().id;
    return commit(std::move(tx));
}

std::uint64_t Ledger::update(const Did &did, const DidDocument &document, ByteView signature,
                             const std::string &signer_key_id) {
    LedgerTransaction tx;
    tx.kind = TxKind::update;
    tx.did = did;
    tx.payload = document.to_json();
    tx.signature = codec::base64url_encode(signature);
    auto hash = signer_key_id.find('#');
    tx.signer = hash == std::string::npos ? "#" + signer_key_id : signer_key_id.substr(hash);
    return commit(std::move(tx));
}

DidDocument Ledger::lookup(const Did &did) const {
    auto state = snapshot();
    auto it = state->dids.find(did.full());
    if (it == state->dids.end()) throw Error(ErrorCode::NotFound, did.full());
    return *it->second;
}

std::uint64_t Ledger::create_status_list(const std::string &list_id, const Did &owner, std::uint32_t size,
                                         const std::string &signer, ByteView signature) {
    LedgerTransaction tx;
    tx.kind = TxKind::status_create;
    tx.payload = {{"list_id", list_id}, {"owner", owner.full()}, {"size", size}};
    tx.signature = codec::base64url_encode(signature);
    tx.signer = signer;
    return commit(std::move(tx));
}

std::uint64_t Ledger::set_status(const std::string &list_id, std::uint32_t index, bool revoked, std::uint64_t version,
                                 const std::string &signer, ByteView signature) {
    LedgerTransaction tx;
    tx.kind = TxKind::status_set;
    tx.payload = {{"list_id", list_id}, {"index", index}, {"revoked", revoked}, {"version", version}};
    tx.signature = codec::base64url_encode(signature);
    tx.signer = signer;
    return commit(std::move(tx));
}

StatusReading Ledger::get_status(const std::string &list_id, std::uint32_t index) const {
    auto state = snapshot();
    auto it = state->lists.find(list_id);
    if (it == state->lists.end()) throw Error(ErrorCode::NotFound, list_id);
    if (index >= it->second->bits.size()) throw Error(ErrorCode::IndexOutOfRange, std::to_string(index));
    return {it->second->bits[index], it->second->version};
}

std::uint64_t Ledger::height() const { return snapshot()->seq; }

std::vector<LedgerTransaction> Ledger::transactions() const {
    auto state = snapshot();
    std::vector<LedgerTransaction> out;
    out.reserve(state->log.size());
    for (auto &tx : state->log) out.push_back(*tx);
    return out;
}

VdrServer::VdrServer(std::shared_ptr<Ledger> ledger, LatencyProfile latency)
    : ledger_(std::move(ledger)), latency_(latency) {}

VdrServer::~VdrServer() { stop(); }

void VdrServer::start(const net::Endpoint &bind) {
    listener_ = net::TcpListener::bind(bind);
    endpoint_ = listener_.local_endpoint();
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void VdrServer::stop() {
    if (!running_.exchange(false)) {
        if (acceptor_.joinable()) acceptor_.join();
        return;
    }
    listener_.close();
    if (acceptor_.joinable()) acceptor_.join();
    std::unique_lock lock(connections_mutex_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
    connections_done_.wait(lock, [this] { return active_connections_ == 0; });
}

void VdrServer::serve_forever(const net::Endpoint &bind) {
    start(bind);
    if (acceptor_.joinable()) acceptor_.join();
}

void VdrServer::set_latency(LatencyProfile latency) {
    std::lock_guard lock(latency_mutex_);
    latency_ = latency;
}

void VdrServer::accept_loop() {
    while (running_) {
        auto stream = listener_.accept(std::chrono::milliseconds(200));
        if (!stream) continue;
        std::lock_guard lock(connections_mutex_);
        if (!running_) break;
        open_fds_.push_back(stream->fd());
        ++active_connections_;
        std::thread([this, s = std::move(*stream)]() mutable { serve_connection(std::move(s)); }).detach();
    }
}

void VdrServer::serve_connection(net::TcpStream stream) {
    int fd = stream.fd();
    try {
        stream.set_io_timeout(std::chrono::seconds(30));
        while (running_) {
            auto frame = net::read_frame(stream);
            if (!frame) break;
            Json reply;
            try {
                reply = handle(parse_json(*frame));
            } catch (const Error &e) {
                reply = {{"ok", false}, {"error", e.code_string()}, {"detail", e.detail()}};
            }
            net::write_frame(stream, canonical(reply));
        }
    } catch (const std::exception &) {
        // peer went away or timed out
    }
    stream.close();
    std::lock_guard lock(connections_mutex_);
    std::erase(open_fds_, fd);
    if (--active_connections_ == 0) connections_done_.notify_all();
}

void VdrServer::apply_delay(bool write) {
    LatencyProfile latency;
    {
        std::lock_guard lock(latency_mutex_);
        latency = latency_;
    }
    auto base = write ? latency.write_delay : latency.read_delay;
    auto delay = std::chrono::duration<double, std::milli>(base);
    if (latency.jitter.count() > 0) {
        thread_local std::mt19937_64 rng{std::random_device{}()};
        std::uniform_real_distribution<double> dist(-static_cast<double>(latency.jitter.count()),
                                                    static_cast<double>(latency.jitter.count()));
        delay += std::chrono::duration<double, std::milli>(dist(rng));
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
}

Json VdrServer::handle(const Json &request) {
    try {
        const auto op = request.at("op").get<std::string>();
        auto sig = [&] { return codec::base64url_decode(request.at("signature").get<std::string>()); };
        Json result;
        if (op == "lookup") {
            apply_delay(false);
            result = ledger_->lookup(Did::parse(request.at("did").get<std::string>())).to_json();
        } else if (op == "status_get") {
            apply_delay(false);
            auto reading = ledger_->get_status(request.at("list_id").get<std::string>(),
                                               request.at("index").get<std::uint32_t>());
            result = {{"revoked", reading.revoked}, {"version", reading.version}};
        } else if (op == "anchor") {
            apply_delay(true);
            result = {{"seq", ledger_->anchor(DidDocument::from_json(request.at("document")), sig())}};
        } else if (op == "update") {
            apply_delay(true);
            auto doc = DidDocument::from_json(request.at("document"));
            result = {{"seq", ledger_->update(doc.id(), doc, sig(), request.at("signer").get<std::string>())}};
        } else if (op == "status_create") {
            apply_delay(true);
            result = {{"seq", ledger_->create_status_list(request.at("list_id").get<std::string>(),
                                                          Did::parse(request.at("owner").get<std::string>()),
                                                          request.at("size").get<std::uint32_t>(),
                                                          request.at("signer").get<std::string>(), sig())}};
        } else if (op == "status_set") {
            apply_delay(true);
            result = {{"seq", ledger_->set_status(request.at("list_id").get<std::string>(),
                                                  request.at("index").get<std::uint32_t>(),
                                                  request.at("revoked").get<bool>(),
                                                  request.at("version").get<std::uint64_t>(),
                                                  request.at("signer").get<std::string>(), sig())}};
        } else {
            throw Error(ErrorCode::Malformed, "unknown op " + op);
        }
        return {{"ok", true}, {"result", result}};
    } catch (const Error &e) {
        return {{"ok", false}, {"error", e.code_string()}, {"detail", e.detail()}};
    } catch (const nlohmann::json::exception &e) {
        return {{"ok", false}, {"error", to_string(ErrorCode::Malformed)}, {"detail", e.what()}};
    }
}

VdrClient::VdrClient(net::Endpoint endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {}

Json VdrClient::call(const Json &request) {
    Json reply;
    try {
        auto stream = net::TcpStream::connect(endpoint_, timeout_);
        stream.set_io_timeout(timeout_);
        net::write_frame(stream, canonical(request));
        auto frame = net::read_frame(stream);
        if (!frame) throw Error(ErrorCode::RegistryUnavailable, "connection closed without reply");
        reply = parse_json(*frame);
    } catch (const Error &e) {
        if (e.code() == ErrorCode::RegistryUnavailable) throw;
        throw Error(ErrorCode::RegistryUnavailable, endpoint_.str() + ": " + e.what());
    }
    try {
        if (reply.at("ok").get<bool>()) return reply.at("result");
        auto code = error_code_from_string(reply.at("error").get<std::string>());
        throw Error(code.value_or(ErrorCode::RegistryUnavailable), reply.value("detail", std::string{}));
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::RegistryUnavailable, std::string("malformed reply: ") + e.what());
    }
}

std::uint64_t VdrClient::anchor(const DidDocument &document, ByteView signature) {
    return call({{"op", "anchor"}, {"document", document.to_json()}, {"signature", codec::base64url_encode(signature)}})
        .at("seq")
        .get<std::uint64_t>();
}

std::uint64_t VdrClient::anchor(const DidDocument &document, const KeyPair &key) {
    return anchor(document, key.sign(as_bytes(document.canonical())));
}

std::uint64_t VdrClient::update(const DidDocument &document, ByteView signature, const std::string &signer_key_id) {
    return call({{"op", "update"},
                 {"document", document.to_json()},
                 {"signature", codec::base64url_encode(signature)},
                 {"signer", signer_key_id}})
        .at("seq")
        .get<std::uint64_t>();
}

std::uint64_t VdrClient::update(const DidDocument &document, const KeyPair &key, const std::string &signer_key_id) {
    return update(document, key.sign(as_bytes(document.canonical())), signer_key_id);
}

DidDocument VdrClient::lookup(const Did &did) {
    try {
        return DidDocument::from_json(call({{"op", "lookup"}, {"did", did.full()}}));
    } catch (const Error &e) {
        if (e.code() == ErrorCode::MalformedDocument) throw Error(ErrorCode::RegistryUnavailable, e.what());
        throw;
    }
}

std::uint64_t VdrClient::create_status_list(const std::string &list_id, const Did &owner, std::uint32_t size,
                                            const std::string &signer, ByteView signature) {
    return call({{"op", "status_create"},
                 {"list_id", list_id},
                 {"owner", owner.full()},
                 {"size", size},
                 {"signer", signer},
                 {"signature", codec::base64url_encode(signature)}})
        .at("seq")
        .get<std::uint64_t>();
}

std::uint64_t VdrClient::create_status_list(const std::string &list_id, const Did &owner, std::uint32_t size,
                                            const KeyPair &key, const std::string &signer) {
    return create_status_list(list_id, owner, size, signer,
                              key.sign(as_bytes(status_create_message(list_id, owner, size))));
}

std::uint64_t VdrClient::set_status(const std::string &list_id, std::uint32_t index, bool revoked,
                                    std::uint64_t version, const std::string &signer, ByteView signature) {
    return call({{"op", "status_set"},
                 {"list_id", list_id},
                 {"index", index},
                 {"revoked", revoked},
                 {"version", version},
                 {"signer", signer},
                 {"signature", codec::base64url_encode(signature)}})
        .at("seq")
        .get<std::uint64_t>();
}

std::uint64_t VdrClient::set_status(const std::string &list_id, std::uint32_t index, bool revoked, const KeyPair &key,
                                    const std::string &signer) {
    auto version = get_status(list_id, index).version + 1;
    return set_status(list_id, index, revoked, version, signer,
                      key.sign(as_bytes(status_set_message(list_id, index, revoked, version))));
}

StatusReading VdrClient::get_status(const std::string &list_id, std::uint32_t index) {
    auto result = call({{"op", "status_get"}, {"list_id", list_id}, {"index", index}});
    return {result.at("revoked").get<bool>(), result.at("version").get<std::uint64_t>()};
}

CredentialStatus VdrClient::check_status(const std::string &list_id, std::uint32_t index) {
    return get_status(list_id, index).revoked ? CredentialStatus::revoked : CredentialStatus::valid;
}

DidDocument make_vdrsim_document(const KeyPair &signing_key, const std::optional<KeyPair> &agreement_key,
                                 Timestamp updated_at) {
    if (signing_key.type() == KeyType::X25519) throw Error(ErrorCode::InvalidKey, "signing key cannot be X25519");
    auto digest = crypto::sha256(signing_key.public_key());
    auto did = Did::parse("did:vdrsim:" + codec::base58_encode(ByteView(digest).first(16)));
    std::vector<VerificationMethod> methods;
    methods.push_back({"#key-1", signing_key.type(), signing_key.public_key(),
                       Purposes{Purpose::authentication, Purpose::assertion}});
    if (agreement_key) {
        if (agreement_key->type() != KeyType::X25519)
            throw Error(ErrorCode::InvalidKey, "key agreement key must be X25519");
        methods.push_back({"#x25519-1", KeyType::X25519, agreement_key->public_key(), Purposes{Purpose::key_agreement}});
    }
    return DidDocument(did, std::move(methods), 1, from_unix(to_unix(updated_at)));
}

} // namespace didlink::vdr

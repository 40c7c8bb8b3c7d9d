#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "didlink/did.hpp"
#include "didlink/net.hpp"
#include "didlink/resolver.hpp"
#include "didlink/status.hpp"

namespace didlink::vdr {

enum class TxKind { anchor, update, status_create, status_set };
std::string_view to_string(TxKind kind) noexcept;

struct LedgerTransaction {
    std::uint64_t seq = 0;
    TxKind kind = TxKind::anchor;
    std::optional<Did> did; // anchor/update only
    Json payload;           // canonical document or status operation
    std::string signature;  // base64url
    std::string signer;     // key id that produced the signature
    Timestamp timestamp;
    std::string prev_hash; // hex sha256 of the predecessor record
    std::string hash;      // hex sha256 of this record without the hash field

    Json to_json() const;
};

struct StatusList {
    std::string list_id;
    Did owner;
    std::vector<bool> bits; // false = valid, true = revoked
    std::uint64_t version = 0;
};

struct StatusReading {
    bool revoked = false;
    std::uint64_t version = 0;
};

struct LatencyProfile {
    std::chrono::milliseconds read_delay{0};
    std::chrono::milliseconds write_delay{0};
    std::chrono::milliseconds jitter{0};
};

/// Bytes the status-list owner signs.
std::string status_create_message(const std::string &list_id, const Did &owner, std::uint32_t size);
std::string status_set_message(const std::string &list_id, std::uint32_t index, bool revoked, std::uint64_t version);

/// The registry state machine: an append-only, hash-chained transaction log
/// with owner-only mutation rules. Writes are serialised by one writer; reads
/// work on an immutable snapshot and never block on writers.
class Ledger {
  public:
    /// With a path, every committed transaction is appended to that file and
    /// existing content is replayed first (Error(CorruptLog) on any mismatch).
    explicit Ledger(std::optional<std::filesystem::path> log_path = std::nullopt, ClockFn clock = &didlink::now);

    /// The signature must come from a key listed in the document itself.
    std::uint64_t anchor(const DidDocument &document, ByteView signature);
    /// signer_key_id names an authentication key of the current document.
    std::uint64_t update(const Did &did, const DidDocument &document, ByteView signature,
                         const std::string &signer_key_id);
    DidDocument lookup(const Did &did) const;

    /// signer is a DID URL ("did:...#frag") naming an assertion key of owner.
    std::uint64_t create_status_list(const std::string &list_id, const Did &owner, std::uint32_t size,
                                     const std::string &signer, ByteView signature);
    /// version must be the list's current version + 1 (replay protection).
    std::uint64_t set_status(const std::string &list_id, std::uint32_t index, bool revoked, std::uint64_t version,
                             const std::string &signer, ByteView signature);
    StatusReading get_status(const std::string &list_id, std::uint32_t index) const;

    std::uint64_t height() const;
    std::vector<LedgerTransaction> transactions() const;

  private:
    struct State;
    static std::shared_ptr<State> apply(const State &prior, const LedgerTransaction &tx);
    std::uint64_t commit(LedgerTransaction tx);
    std::shared_ptr<const State> snapshot() const;

    ClockFn clock_;
    std::optional<std::filesystem::path> log_path_;
    std::ofstream log_;
    std::mutex writer_;
    std::shared_ptr<const State> state_;
};

/// Serves a Ledger over length-prefixed JSON frames:
///   request  {op: anchor|update|lookup|status_create|status_set|status_get, ...}
///   response {ok: true, result: ...} | {ok: false, error: "<code>"}
class VdrServer {
  public:
    VdrServer(std::shared_ptr<Ledger> ledger, LatencyProfile latency);
    ~VdrServer();
    VdrServer(const VdrServer &) = delete;
    VdrServer &operator=(const VdrServer &) = delete;

    /// Binds and starts the acceptor thread. Throws Error(BindFailure).
    void start(const net::Endpoint &bind);
    void stop();
    /// start() then block until stop() is called from elsewhere.
    void serve_forever(const net::Endpoint &bind);

    net::Endpoint endpoint() const { return endpoint_; }
    void set_latency(LatencyProfile latency);
    /// Handles one decoded request; exposed for in-process use and tests.
    Json handle(const Json &request);

  private:
    void accept_loop();
    void serve_connection(net::TcpStream stream);
    void apply_delay(bool write);

    std::shared_ptr<Ledger> ledger_;
    std::mutex latency_mutex_;
    LatencyProfile latency_;
    net::TcpListener listener_;
    net::Endpoint endpoint_;
    std::atomic<bool> running_{false};
    std::thread acceptor_;
    std::mutex connections_mutex_;
    std::condition_variable connections_done_;
    std::size_t active_connections_ = 0;
    std::vector<int> open_fds_;
};

/// One connection per request; thread-safe.
class VdrClient final : public StatusChecker {
  public:
    explicit VdrClient(net::Endpoint endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(5));

    std::uint64_t anchor(const DidDocument &document, ByteView signature);
    /// Convenience: signs the canonical document with key.
    std::uint64_t anchor(const DidDocument &document, const KeyPair &key);
    std::uint64_t update(const DidDocument &document, ByteView signature, const std::string &signer_key_id);
    std::uint64_t update(const DidDocument &document, const KeyPair &key, const std::string &signer_key_id);
    DidDocument lookup(const Did &did);
    std::uint64_t create_status_list(const std::string &list_id, const Did &owner, std::uint32_t size,
                                     const std::string &signer, ByteView signature);
    std::uint64_t create_status_list(const std::string &list_id, const Did &owner, std::uint32_t size,
                                     const KeyPair &key, const std::string &signer);
    std::uint64_t set_status(const std::string &list_id, std::uint32_t index, bool revoked, std::uint64_t version,
                             const std::string &signer, ByteView signature);
    /// Reads the current version, then signs and submits the next one.
    std::uint64_t set_status(const std::string &list_id, std::uint32_t index, bool revoked, const KeyPair &key,
                             const std::string &signer);
    StatusReading get_status(const std::string &list_id, std::uint32_t index);

    CredentialStatus check_status(const std::string &list_id, std::uint32_t index) override;

    /// Raw round trip; throws Error(<code>) for {ok:false} replies and
    /// Error(RegistryUnavailable) for transport failures.
    Json call(const Json &request);
    const net::Endpoint &endpoint() const noexcept { return endpoint_; }

  private:
    net::Endpoint endpoint_;
    std::chrono::milliseconds timeout_;
};

/// Resolves did:vdrsim through a VdrClient.
class VdrMethodHandler final : public MethodHandler {
  public:
    explicit VdrMethodHandler(std::shared_ptr<VdrClient> client) : client_(std::move(client)) {}
    DidDocument resolve(const Did &did) override { return client_->lookup(did); }

  private:
    std::shared_ptr<VdrClient> client_;
};

/// Builds the version-1 document for a fresh did:vdrsim identity: an Ed25519
/// authentication/assertion key and an independent X25519 key-agreement key.
/// The subject id is derived from the signing key so it is unique.
DidDocument make_vdrsim_document(const KeyPair &signing_key, const std::optional<KeyPair> &agreement_key,
                                 Timestamp updated_at = didlink::now());

} // namespace didlink::vdr

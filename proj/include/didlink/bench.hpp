#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "didlink/channel.hpp"
#include "didlink/did.hpp"
#include "didlink/vdr.hpp"

namespace didlink::bench {

enum class ScenarioId { I, II, III, IV, V, VI, VII, VIII, IX, X, XI, XII };
std::string_view to_string(ScenarioId id) noexcept;
/// Throws UsageError.
ScenarioId scenario_from_string(std::string_view text);
const std::vector<ScenarioId> &all_scenarios();

/// How one side presents itself in the handshake.
enum class AuthKind { anonymous, derived_identifier, ca_issued, did };
std::string_view to_string(AuthKind kind) noexcept;

enum class DidKind { vdr_anchored, peer };
std::string_view to_string(DidKind kind) noexcept;

struct CacheSeeding {
    bool client_has_server_doc = true;
    bool server_has_client_doc = true;
};

/// Registry latency for configurations that resolve on a nearby ledger.
inline constexpr vdr::LatencyProfile kLocalLedger{std::chrono::milliseconds(5), std::chrono::milliseconds(5),
                                                  std::chrono::milliseconds(0)};
/// And for the remote-ledger configurations.
inline constexpr vdr::LatencyProfile kRemoteLedger{std::chrono::milliseconds(120), std::chrono::milliseconds(120),
                                                   std::chrono::milliseconds(15)};

struct Scenario {
    ScenarioId id = ScenarioId::I;
    AuthKind client_auth = AuthKind::derived_identifier;
    AuthKind server_auth = AuthKind::derived_identifier;
    CacheSeeding cache_seeding;
    DidKind did_kind = DidKind::vdr_anchored;
    vdr::LatencyProfile vdr_latency;
    bool identification = false;
    std::uint32_t reps = 100;
    std::uint32_t warmup = 5;
    channel::ExtensionTransport transport = channel::ExtensionTransport::hello;
    /// External registry; an in-process one is started when absent.
    std::optional<net::Endpoint> vdr;

    /// The fixed configuration for an id.
    static Scenario preset(ScenarioId id, std::uint32_t reps = 100);
    /// Throws ScenarioInfeasible.
    void validate() const;
    /// Resolutions performed per connection: 0, 1 or 2.
    int resolutions() const;
    Json to_json() const;
};

struct RepSample {
    double client_handshake_ms = 0;
    double server_handshake_ms = 0;
    double client_resolve_ms = 0;
    double server_resolve_ms = 0;
    double client_identification_ms = 0;
    double server_identification_ms = 0;
    /// From the client starting to connect until both sides finished the handshake.
    double total_ms = 0;
    std::uint64_t client_bytes_sent = 0;
    std::uint64_t server_bytes_sent = 0;
    bool outlier = false;

    friend bool operator==(const RepSample &, const RepSample &) = default;
};

struct Summary {
    double mean = 0;
    double stddev = 0;
    double p95 = 0;
    std::size_t count = 0;
    std::size_t outliers_removed = 0;

    friend bool operator==(const Summary &, const Summary &) = default;
};

/// Outlier rule: values above 5x the median are dropped and counted.
Summary summarize(const std::vector<double> &values);
/// Summary over the entries whose mask bit is false.
Summary summarize(const std::vector<double> &values, const std::vector<bool> &excluded);

struct BenchReport {
    std::string scenario;
    std::string transport;
    Json parameters = Json::object();
    std::vector<RepSample> reps;
    std::map<std::string, Summary> summary;

    /// Flags outliers on total_ms and recomputes every summary.
    void finalize();
    Json to_json() const;
    static BenchReport from_json(const Json &json);
    /// Header plus one row per rep.
    std::string to_csv() const;
};

/// Throws ScenarioInfeasible, ServiceUnavailable.
BenchReport run_scenario(const Scenario &scenario);

/// One message sealed for a single recipient in the ECDH-1PU style: the key
/// encryption key mixes an ephemeral-static and a static-static X25519 share.
struct Envelope {
    std::string protected_header; // base64url of the canonical header JSON
    std::string recipient_key_id;
    Bytes encrypted_key;
    Bytes iv;
    Bytes ciphertext;
    Bytes tag;

    /// Parsed header fields.
    Bytes ephemeral_public_key() const;
    std::string sender_key_id() const;

    /// JWE general JSON serialization.
    std::string serialize() const;
    /// Throws Malformed.
    static Envelope parse(std::string_view text);
};

/// sender is the X25519 key-agreement key named by sender_key_id (a DID URL).
/// Throws UnknownKey when the recipient document has no key-agreement key.
Envelope wrap_envelope(ByteView plaintext, const KeyPair &sender, const std::string &sender_key_id,
                       const DidDocument &recipient_doc);
/// Throws DecryptFailed, UnknownKey.
Bytes unwrap_envelope(const Envelope &envelope, const KeyPair &recipient, const DidDocument &sender_doc);

struct TransferSample {
    double ms = 0;
    std::uint64_t bytes = 0;
    friend bool operator==(const TransferSample &, const TransferSample &) = default;
};

struct TransferReport {
    std::string channel; // "session" or "envelope"
    std::size_t payload_size = 0;
    std::size_t packets = 0;
    std::vector<TransferSample> reps;
    Summary time;
    double mean_bytes = 0;

    void finalize();
    Json to_json() const;
};

struct TransferComparison {
    TransferReport session;
    TransferReport envelope;
    Json to_json() const;
};

/// (a) one DID-authenticated session carrying the packets, handshake and
/// session tickets included; (b) one enveloped message per packet over a plain
/// stream. Both count every byte written to the socket in either direction.
TransferComparison run_transfer_comparison(std::size_t payload_size, std::size_t packets, std::uint32_t reps);

struct LinearFit {
    double intercept = 0;
    double slope = 0;
    double r_squared = 0;
};
LinearFit fit_line(const std::vector<double> &x, const std::vector<double> &y);

enum class ReportFormat { json, csv };
/// Throws IoFailure.
void emit_report(const BenchReport &report, ReportFormat format, const std::filesystem::path &path);

/// Bar chart of client/server handshake means per scenario.
std::string scenario_svg(const std::vector<BenchReport> &reports);
/// Time against packet count for both channels.
std::string transfer_svg(const std::vector<TransferComparison> &series);

} // namespace didlink::bench

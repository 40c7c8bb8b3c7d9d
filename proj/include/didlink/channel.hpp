#pragma once

#include <chrono>
#include <future>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "didlink/cert.hpp"
#include "didlink/frame.hpp"
#include "didlink/negotiation.hpp"
#include "didlink/net.hpp"
#include "didlink/resolver.hpp"

namespace didlink::channel {

enum class PeerMode { anonymous, cert_chain, derived_identifier, did, did_pending_vc };
std::string_view to_string(PeerMode mode) noexcept;

enum class ResolutionOrigin { cache, method_handler, none_needed };
std::string_view to_string(ResolutionOrigin origin) noexcept;

struct PeerAuthResult {
    PeerMode mode = PeerMode::anonymous;
    std::optional<Did> peer_did;
    std::optional<BindingVerdict> binding;
    std::optional<ResolutionOrigin> resolution_source;
    /// CN of a derived-identifier or CA-issued peer certificate.
    std::optional<std::string> peer_name;
    double handshake_ms = 0;
    double resolve_ms = 0;

    Json to_json() const;
};

/// Where the DID Link hello extensions travel. `hello` uses real ClientHello /
/// EncryptedExtensions entries; `preamble` exchanges the same payloads in a
/// negotiation_preamble frame right after the handshake (SNI always rides the
/// standard server_name extension).
enum class ExtensionTransport { hello, preamble };
std::string_view to_string(ExtensionTransport transport) noexcept;

/// Settings shared by both ends for checking the peer.
struct VerifySettings {
    std::shared_ptr<DidResolver> resolver;
    CachePolicy cache_policy;
    std::vector<Bytes> trust_roots;
    /// Accept self-issued certificates whose CN is the key's derived identifier.
    bool accept_derived_identifiers = true;
    /// Resolve concurrently with the peer's CertificateVerify and settle when
    /// its Finished arrives; otherwise resolve inside the certificate check.
    bool parallel = true;
    BindingOptions binding;
    ClockFn clock = &didlink::now;
};

struct ClientConfig {
    std::optional<CertBundle> identity;
    negotiation::NegotiationOffer offer;
    VerifySettings verify;
    ExtensionTransport transport = ExtensionTransport::preamble;
    /// DID (or host name) the server must authenticate as; defaults to the
    /// offer's target_server.
    std::optional<std::string> expected_peer;
    std::chrono::milliseconds handshake_timeout{10000};
};

enum class ClientAuth { none, optional, required };

struct ServerConfig {
    negotiation::ServerCaps caps;
    ClientAuth client_auth = ClientAuth::optional;
    VerifySettings verify;
    ExtensionTransport transport = ExtensionTransport::preamble;
    std::chrono::milliseconds handshake_timeout{10000};
};

/// Certificate-level check of the peer. Dispatches on certificate shape: a DID
/// in the SAN means resolve + binding; a derived-identifier CN means the CN
/// must match the key; anything else is path-validated against trust_roots.
/// Throws BindingInvalid, ResolutionFailed or HandshakeFailed.
PeerAuthResult verify_peer(const std::vector<Bytes> &certificates, const VerifySettings &settings,
                           const std::optional<std::string> &expected_peer = std::nullopt);

class SecureSession {
  public:
    SecureSession(SecureSession &&) noexcept;
    SecureSession &operator=(SecureSession &&) noexcept;
    ~SecureSession();

    bool is_client() const noexcept;
    const negotiation::NegotiationOffer &offer() const noexcept;
    const negotiation::NegotiationAgreement &negotiated() const noexcept;
    const PeerAuthResult &peer() const noexcept;
    ExtensionTransport transport() const noexcept;

    /// Size of NewSessionTicket messages seen on this connection.
    std::size_t session_tickets_bytes() const noexcept;
    /// Raw bytes on the socket, handshake included.
    std::uint64_t bytes_sent() const noexcept;
    std::uint64_t bytes_received() const noexcept;

    std::chrono::steady_clock::time_point handshake_started() const noexcept;
    std::chrono::steady_clock::time_point handshake_finished() const noexcept;

    void write(ByteView data);
    /// Blocks until data arrives; 0 on orderly close. Throws Timeout after the
    /// given deadline (none by default).
    std::size_t read(std::span<std::uint8_t> out,
                     std::optional<std::chrono::milliseconds> timeout = std::nullopt);
    /// One non-blocking attempt; nullopt when nothing is available yet, 0 on close.
    std::optional<std::size_t> try_read(std::span<std::uint8_t> out);
    /// True when decrypted bytes are already buffered.
    bool has_pending() const noexcept;
    int fd() const noexcept;

    void write_frame(const frame::Frame &f);
    /// Blocks for the next frame; nullopt on orderly close.
    std::optional<frame::Frame> read_frame(std::optional<std::chrono::milliseconds> timeout = std::nullopt);

    /// Non-blocking: a buffered or newly readable whole frame, else nullopt.
    /// Throws TransportError when the peer has closed.
    std::optional<frame::Frame> try_read_frame();

    /// Reads until the peer's session tickets have arrived or the deadline
    /// passes, without consuming application data.
    void drain_tickets(std::chrono::milliseconds timeout);
    void close();

    struct Impl;

  private:
    friend class TlsClient;
    friend class TlsServer;
    explicit SecureSession(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

/// Reusable client endpoint (one TLS context, many connections).
class TlsClient {
  public:
    explicit TlsClient(ClientConfig config);
    ~TlsClient();
    TlsClient(TlsClient &&) noexcept;
    TlsClient &operator=(TlsClient &&) noexcept;

    /// Throws HandshakeRejected (detail = rejection reason), BindingInvalid,
    /// ResolutionFailed, HandshakeFailed, TransportError, Timeout.
    SecureSession connect(const net::Endpoint &endpoint);
    /// Same, over an already connected stream.
    SecureSession connect(net::TcpStream stream);
    const ClientConfig &config() const noexcept;

  private:
    struct Context;
    std::unique_ptr<Context> ctx_;
};

class TlsServer {
  public:
    explicit TlsServer(ServerConfig config);
    ~TlsServer();
    TlsServer(TlsServer &&) noexcept;
    TlsServer &operator=(TlsServer &&) noexcept;

    SecureSession accept(net::TcpStream stream);
    SecureSession accept(net::TcpListener &listener);
    const ServerConfig &config() const noexcept;

  private:
    struct Context;
    std::unique_ptr<Context> ctx_;
};

/// One-shot helpers.
inline SecureSession connect(const net::Endpoint &endpoint, ClientConfig config) {
    return TlsClient(std::move(config)).connect(endpoint);
}
inline SecureSession accept(net::TcpListener &listener, ServerConfig config) {
    return TlsServer(std::move(config)).accept(listener);
}

} // namespace didlink::channel

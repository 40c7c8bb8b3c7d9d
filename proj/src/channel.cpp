#include "didlink/channel.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include "didlink/canonical_json.hpp"
#include "didlink/error.hpp"

namespace didlink::channel {

namespace neg = negotiation;
using Clock = std::chrono::steady_clock;

std::string_view to_string(PeerMode mode) noexcept {
    switch (mode) {
    case PeerMode::anonymous: return "anonymous";
    case PeerMode::cert_chain: return "cert_chain";
    case PeerMode::derived_identifier: return "derived_identifier";
    case PeerMode::did: return "did";
    case PeerMode::did_pending_vc: return "did_pending_vc";
    }
    return "anonymous";
}

std::string_view to_string(ResolutionOrigin origin) noexcept {
    switch (origin) {
    case ResolutionOrigin::cache: return "cache";
    case ResolutionOrigin::method_handler: return "method_handler";
    case ResolutionOrigin::none_needed: return "none_needed";
    }
    return "none_needed";
}

std::string_view to_string(ExtensionTransport transport) noexcept {
    return transport == ExtensionTransport::hello ? "hello" : "preamble";
}

Json PeerAuthResult::to_json() const {
    Json j{{"mode", to_string(mode)}, {"handshakeMs", handshake_ms}, {"resolveMs", resolve_ms}};
    if (peer_did) j["peerDid"] = peer_did->full();
    if (peer_name) j["peerName"] = *peer_name;
    if (resolution_source) j["resolutionSource"] = to_string(*resolution_source);
    if (binding) {
        j["binding"] = {{"valid", binding->valid}, {"reason", to_string(binding->reason)}};
        if (binding->matched_method_id) j["binding"]["matchedMethod"] = *binding->matched_method_id;
    }
    return j;
}

namespace {

bool looks_like_did(const std::string &s) { return s.rfind("did:", 0) == 0; }

struct Precheck {
    std::optional<PeerAuthResult> done;
    std::optional<Did> did;
};

// Everything that can be decided from the certificates alone.
Precheck precheck(X509 *leaf, const std::vector<Bytes> &certs, const VerifySettings &settings,
                  const std::optional<std::string> &expected) {
    Precheck out;
    try {
        out.did = extract_did(leaf);
        if (expected && looks_like_did(*expected) && out.did->full() != *expected)
            throw Error(ErrorCode::BindingInvalid, "peer DID " + out.did->full() + " is not " + *expected);
        return out;
    } catch (const Error &e) {
        if (e.code() == ErrorCode::AmbiguousDid) throw Error(ErrorCode::BindingInvalid, "ambiguous DID");
        if (e.code() == ErrorCode::Malformed) throw Error(ErrorCode::HandshakeFailed, "undecodable certificate");
        if (e.code() != ErrorCode::NoDidPresent) throw;
    }

    auto info = inspect_certificate(leaf);
    PeerAuthResult result;
    result.resolution_source = ResolutionOrigin::none_needed;
    result.peer_name = info.subject_cn;
    if (settings.accept_derived_identifiers && info.self_issued &&
        info.subject_cn == derived_identifier(info.public_key)) {
        if (expected && *expected != info.subject_cn)
            throw Error(ErrorCode::HandshakeFailed, "derived identifier " + info.subject_cn + " is not " + *expected);
        result.mode = PeerMode::derived_identifier;
        out.done = std::move(result);
        return out;
    }

    std::vector<Bytes> intermediates(certs.begin() + 1, certs.end());
    if (auto err = verify_chain(certs.front(), intermediates, settings.trust_roots, settings.clock()))
        throw Error(ErrorCode::HandshakeFailed, "certificate chain: " + *err);
    if (expected && !looks_like_did(*expected)) {
        if (X509_check_host(leaf, expected->data(), expected->size(), 0, nullptr) != 1)
            throw Error(ErrorCode::HandshakeFailed, "certificate does not match host " + *expected);
    }
    result.mode = PeerMode::cert_chain;
    out.done = std::move(result);
    return out;
}

PeerAuthResult finish_did(const Did &did, X509 *leaf, const VerifySettings &settings) {
    if (!settings.resolver) throw Error(ErrorCode::ResolutionFailed, "no resolver configured");
    auto started = Clock::now();
    ResolutionResult resolved = [&] {
        try {
            return settings.resolver->resolve(did, settings.cache_policy);
        } catch (const Error &e) {
            throw Error(ErrorCode::ResolutionFailed, std::string(e.code_string()) + ": " + did.full());
        }
    }();
    auto elapsed = Clock::now() - started;

    auto verdict = validate_did_binding(leaf, resolved.document, settings.clock(), settings.binding);
    if (!verdict.valid) throw Error(ErrorCode::BindingInvalid, std::string(to_string(verdict.reason)));

    PeerAuthResult result;
    result.mode = PeerMode::did;
    result.peer_did = did;
    result.binding = verdict;
    if (resolved.source == ResolutionSource::cache) {
        result.resolution_source = ResolutionOrigin::cache;
    } else {
        result.resolution_source = ResolutionOrigin::method_handler;
        result.resolve_ms = to_ms(elapsed);
    }
    return result;
}

std::optional<neg::RejectionReason> reason_for_alert(int alert) {
    switch (alert) {
    case SSL_AD_UNRECOGNIZED_NAME: return neg::RejectionReason::unknown_server_did;
    case SSL_AD_NO_APPLICATION_PROTOCOL: return neg::RejectionReason::no_common_presentation_protocol;
    case SSL_AD_HANDSHAKE_FAILURE: return neg::RejectionReason::no_common_method;
    default: return std::nullopt;
    }
}

int alert_for(neg::RejectionReason reason) {
    switch (reason) {
    case neg::RejectionReason::unknown_server_did: return SSL_AD_UNRECOGNIZED_NAME;
    case neg::RejectionReason::no_common_presentation_protocol: return SSL_AD_NO_APPLICATION_PROTOCOL;
    case neg::RejectionReason::no_common_method: return SSL_AD_HANDSHAKE_FAILURE;
    }
    return SSL_AD_HANDSHAKE_FAILURE;
}

std::optional<neg::RejectionReason> reason_from_string(std::string_view s) {
    for (auto r : {neg::RejectionReason::no_common_method, neg::RejectionReason::no_common_presentation_protocol,
                   neg::RejectionReason::unknown_server_did})
        if (neg::to_string(r) == s) return r;
    return std::nullopt;
}

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

bool wait_readable(int fd, std::optional<Clock::time_point> deadline) {
    for (;;) {
        int ms = -1;
        if (deadline) {
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()).count();
            ms = static_cast<int>(std::max<long long>(0, left));
        }
        pollfd p{fd, POLLIN, 0};
        int rc = ::poll(&p, 1, ms);
        if (rc > 0) return true;
        if (rc == 0) return false;
        if (errno != EINTR) throw Error(ErrorCode::TransportError, std::strerror(errno));
    }
}

struct LoadedIdentity {
    ossl::X509Ptr cert;
    std::vector<ossl::X509Ptr> chain;
    ossl::EvpKey key;
};

LoadedIdentity load_identity(const CertBundle &bundle) {
    LoadedIdentity id{x509::parse_der(bundle.certificate_der), {}, bundle.key.to_evp()};
    for (auto &der : bundle.chain_der) id.chain.push_back(x509::parse_der(der));
    return id;
}

void install_identity(SSL *ssl, const LoadedIdentity &id) {
    if (SSL_use_certificate(ssl, id.cert.get()) != 1 || SSL_use_PrivateKey(ssl, id.key.get()) != 1)
        throw Error(ErrorCode::HandshakeFailed, "identity: " + ossl::last_error());
    SSL_clear_chain_certs(ssl);
    for (auto &c : id.chain) SSL_add1_chain_cert(ssl, c.get());
}

Bytes encode_rejection(neg::RejectionReason reason) {
    Json j{{"error", "handshake_rejected"}, {"reason", neg::to_string(reason)}};
    auto text = canonical(j);
    return Bytes(text.begin(), text.end());
}

} // namespace

PeerAuthResult verify_peer(const std::vector<Bytes> &certificates, const VerifySettings &settings,
                           const std::optional<std::string> &expected_peer) {
    if (certificates.empty()) throw Error(ErrorCode::HandshakeFailed, "peer sent no certificate");
    ossl::X509Ptr leaf;
    try {
        leaf = x509::parse_der(certificates.front());
    } catch (const Error &) {
        throw Error(ErrorCode::HandshakeFailed, "undecodable certificate");
    }
    auto pre = precheck(leaf.get(), certificates, settings, expected_peer);
    if (pre.done) return *pre.done;
    return finish_did(*pre.did, leaf.get(), settings);
}

// Per-connection handshake state, reachable from OpenSSL callbacks.
struct HandshakeState {
    bool client = false;
    ExtensionTransport transport = ExtensionTransport::preamble;
    VerifySettings verify;
    std::optional<std::string> expected_peer;

    neg::NegotiationOffer offer;
    // server side
    const neg::ServerCaps *caps = nullptr;
    const std::vector<LoadedIdentity> *identities = nullptr;
    std::optional<neg::NegotiationAgreement> agreement;
    std::optional<neg::RejectionReason> rejection;
    bool malformed_hello = false;
    // client side, hello transport
    std::optional<Bytes> smi_payload;
    std::optional<Bytes> spa_payload;

    std::optional<Error> verify_error;
    std::optional<PeerAuthResult> peer;
    std::optional<std::future<PeerAuthResult>> pending;
    bool saw_certificate = false;

    std::optional<int> alert_received;
    std::size_t ticket_bytes = 0;
    int tickets = 0;
};

namespace {

int state_index() {
    static const int idx = SSL_get_ex_new_index(0, nullptr, nullptr, nullptr, nullptr);
    return idx;
}

HandshakeState *state_of(SSL *ssl) { return static_cast<HandshakeState *>(SSL_get_ex_data(ssl, state_index())); }

void info_cb(const SSL *ssl, int where, int ret) {
    if (!(where & SSL_CB_READ_ALERT)) return;
    auto *st = state_of(const_cast<SSL *>(ssl));
    if (st && (ret & 0xff) != SSL_AD_CLOSE_NOTIFY) st->alert_received = ret & 0xff;
}

void settle(HandshakeState &st) {
    if (!st.pending) return;
    auto fut = std::move(*st.pending);
    st.pending.reset();
    try {
        st.peer = fut.get();
    } catch (const Error &e) {
        st.verify_error = e;
    } catch (const std::exception &e) {
        st.verify_error = Error(ErrorCode::HandshakeFailed, e.what());
    }
}

void msg_cb(int write_p, int, int content_type, const void *buf, size_t len, SSL *ssl, void *) {
    if (content_type != SSL3_RT_HANDSHAKE || len == 0) return;
    auto *st = state_of(ssl);
    if (!st) return;
    auto type = static_cast<const std::uint8_t *>(buf)[0];
    if (type == SSL3_MT_NEWSESSION_TICKET) {
        st->ticket_bytes += len;
        ++st->tickets;
    } else if (type == SSL3_MT_FINISHED && !write_p) {
        // Resolution must be settled before answering the peer's flight.
        settle(*st);
    }
}

int verify_cb(X509_STORE_CTX *store, void *) {
    auto *ssl = static_cast<SSL *>(X509_STORE_CTX_get_ex_data(store, SSL_get_ex_data_X509_STORE_CTX_idx()));
    auto *st = state_of(ssl);
    std::vector<Bytes> certs;
    X509 *leaf = X509_STORE_CTX_get0_cert(store);
    certs.push_back(x509::to_der(leaf));
    if (auto *untrusted = X509_STORE_CTX_get0_untrusted(store)) {
        for (int i = 0; i < sk_X509_num(untrusted); ++i) {
            X509 *c = sk_X509_value(untrusted, i);
            if (X509_cmp(c, leaf) != 0) certs.push_back(x509::to_der(c));
        }
    }
    st->saw_certificate = true;
    try {
        auto pre = precheck(leaf, certs, st->verify, st->expected_peer);
        if (pre.done) {
            st->peer = std::move(*pre.done);
        } else if (st->verify.parallel) {
            X509_up_ref(leaf);
            st->pending = std::async(std::launch::async,
                                     [did = *pre.did, held = std::make_shared<ossl::X509Ptr>(leaf), settings = st->verify] {
                                         return finish_did(did, held->get(), settings);
                                     });
        } else {
            st->peer = finish_did(*pre.did, leaf, st->verify);
        }
        return 1;
    } catch (const Error &e) {
        st->verify_error = e;
    } catch (const std::exception &e) {
        st->verify_error = Error(ErrorCode::HandshakeFailed, e.what());
    }
    X509_STORE_CTX_set_error(store, X509_V_ERR_CERT_REJECTED);
    return 0;
}

int client_hello_cb(SSL *ssl, int *al, void *) {
    auto *st = state_of(ssl);
    neg::NegotiationOffer offer;
    try {
        const unsigned char *p = nullptr;
        size_t len = 0;
        if (SSL_client_hello_get0_ext(ssl, TLSEXT_TYPE_server_name, &p, &len))
            offer.target_server = neg::decode_name_list(ByteView(p, len));
        if (st->transport == ExtensionTransport::hello) {
            if (SSL_client_hello_get0_ext(ssl, neg::ext::cni, &p, &len)) offer.client_did = neg::decode_did({p, len});
            if (SSL_client_hello_get0_ext(ssl, neg::ext::cmi_in_hello, &p, &len))
                offer.client_did_methods = neg::decode_list({p, len});
            if (SSL_client_hello_get0_ext(ssl, neg::ext::cpp, &p, &len))
                offer.presentation_protocols = neg::decode_list({p, len});
        }
    } catch (const Error &) {
        st->malformed_hello = true;
        *al = SSL_AD_DECODE_ERROR;
        return SSL_CLIENT_HELLO_ERROR;
    }
    st->offer = offer;

    // Preamble transport only picks the certificate here; the rest is decided
    // once the preamble frame arrives.
    if (st->transport == ExtensionTransport::preamble) {
        offer.client_did_methods.clear();
        offer.presentation_protocols.clear();
    }
    auto outcome = neg::negotiate(offer, *st->caps);
    if (auto *rej = std::get_if<neg::Rejection>(&outcome)) {
        st->rejection = rej->reason;
        *al = alert_for(rej->reason);
        return SSL_CLIENT_HELLO_ERROR;
    }
    auto &agreement = std::get<neg::NegotiationAgreement>(outcome);
    try {
        install_identity(ssl, (*st->identities)[agreement.identity_index]);
    } catch (const Error &) {
        *al = SSL_AD_INTERNAL_ERROR;
        return SSL_CLIENT_HELLO_ERROR;
    }
    if (st->transport == ExtensionTransport::hello) st->agreement = agreement;
    return SSL_CLIENT_HELLO_SUCCESS;
}

std::optional<Bytes> client_payload(const HandshakeState &st, unsigned int type) {
    const auto &o = st.offer;
    switch (type) {
    case neg::ext::cni:
        if (o.client_did) return neg::encode_did(*o.client_did);
        break;
    case neg::ext::cmi_in_hello:
        if (!o.client_did_methods.empty()) return neg::encode_list(o.client_did_methods);
        break;
    case neg::ext::cpp:
        if (!o.presentation_protocols.empty()) return neg::encode_list(o.presentation_protocols);
        break;
    case neg::ext::smi:
        if (!o.client_did_methods.empty()) return Bytes{};
        break;
    case neg::ext::spa:
        if (!o.presentation_protocols.empty()) return Bytes{};
        break;
    }
    return std::nullopt;
}

std::optional<Bytes> server_payload(const HandshakeState &st, unsigned int type) {
    if (!st.agreement) return std::nullopt;
    if (type == neg::ext::smi && !st.agreement->server_did_methods.empty())
        return neg::encode_list(st.agreement->server_did_methods);
    if (type == neg::ext::spa && st.agreement->agreed_presentation_protocol)
        return neg::encode_list({*st.agreement->agreed_presentation_protocol});
    return std::nullopt;
}

int ext_add_cb(SSL *ssl, unsigned int type, unsigned int context, const unsigned char **out, size_t *outlen, X509 *,
               size_t, int *al, void *) {
    auto *st = state_of(ssl);
    if (!st || st->transport != ExtensionTransport::hello) return 0;
    std::optional<Bytes> payload;
    try {
        if (st->client && (context & SSL_EXT_CLIENT_HELLO))
            payload = client_payload(*st, type);
        else if (!st->client && (context & SSL_EXT_TLS1_3_ENCRYPTED_EXTENSIONS))
            payload = server_payload(*st, type);
    } catch (const Error &) {
        *al = SSL_AD_INTERNAL_ERROR;
        return -1;
    }
    if (!payload) return 0;
    auto *buf = static_cast<unsigned char *>(OPENSSL_malloc(payload->empty() ? 1 : payload->size()));
    if (!buf) return -1;
    std::copy(payload->begin(), payload->end(), buf);
    *out = buf;
    *outlen = payload->size();
    return 1;
}

void ext_free_cb(SSL *, unsigned int, unsigned int, const unsigned char *out, void *) {
    OPENSSL_free(const_cast<unsigned char *>(out));
}

int ext_parse_cb(SSL *ssl, unsigned int type, unsigned int context, const unsigned char *in, size_t inlen, X509 *,
                 size_t, int *, void *) {
    auto *st = state_of(ssl);
    if (!st || !st->client || !(context & SSL_EXT_TLS1_3_ENCRYPTED_EXTENSIONS)) return 1;
    if (type == neg::ext::smi) st->smi_payload = Bytes(in, in + inlen);
    if (type == neg::ext::spa) st->spa_payload = Bytes(in, in + inlen);
    return 1;
}

ossl::SslCtxPtr make_ctx(bool server) {
    ignore_sigpipe();
    ossl::SslCtxPtr ctx(SSL_CTX_new(server ? TLS_server_method() : TLS_client_method()));
    if (!ctx) throw Error(ErrorCode::HandshakeFailed, ossl::last_error());
    SSL_CTX_set_min_proto_version(ctx.get(), TLS1_3_VERSION);
    SSL_CTX_set_max_proto_version(ctx.get(), TLS1_3_VERSION);
    SSL_CTX_set_options(ctx.get(), SSL_OP_IGNORE_UNEXPECTED_EOF);
    SSL_CTX_clear_mode(ctx.get(), SSL_MODE_AUTO_RETRY);
    SSL_CTX_set_cert_verify_callback(ctx.get(), verify_cb, nullptr);
    SSL_CTX_set_info_callback(ctx.get(), info_cb);
    SSL_CTX_set_msg_callback(ctx.get(), msg_cb);

    const unsigned int hello_only = SSL_EXT_CLIENT_HELLO;
    const unsigned int answered = SSL_EXT_CLIENT_HELLO | SSL_EXT_TLS1_3_ENCRYPTED_EXTENSIONS;
    for (unsigned int code : {neg::ext::cni, neg::ext::cmi_in_hello, neg::ext::cpp})
        SSL_CTX_add_custom_ext(ctx.get(), code, hello_only, ext_add_cb, ext_free_cb, nullptr, ext_parse_cb, nullptr);
    for (unsigned int code : {neg::ext::smi, neg::ext::spa})
        SSL_CTX_add_custom_ext(ctx.get(), code, answered, ext_add_cb, ext_free_cb, nullptr, ext_parse_cb, nullptr);
    if (server) SSL_CTX_set_client_hello_cb(ctx.get(), client_hello_cb, nullptr);
    return ctx;
}

// Half-close and drain so the peer receives our alert instead of a reset.
void linger_close(int fd) {
    ::shutdown(fd, SHUT_WR);
    auto deadline = Clock::now() + std::chrono::milliseconds(200);
    std::uint8_t sink[4096];
    while (wait_readable(fd, deadline)) {
        if (::recv(fd, sink, sizeof sink, MSG_DONTWAIT) <= 0) break;
    }
}

[[noreturn]] void raise_handshake_error(SSL *ssl, const HandshakeState &st, int rc) {
    if (st.verify_error) throw *st.verify_error;
    if (st.rejection) throw Error(ErrorCode::HandshakeRejected, std::string(neg::to_string(*st.rejection)));
    if (st.malformed_hello) throw Error(ErrorCode::HandshakeFailed, "malformed hello extension");
    if (st.alert_received) {
        if (*st.alert_received == SSL_AD_CERTIFICATE_REQUIRED)
            throw Error(ErrorCode::HandshakeRejected, "client_certificate_required");
        if (auto reason = reason_for_alert(*st.alert_received))
            throw Error(ErrorCode::HandshakeRejected, std::string(neg::to_string(*reason)));
        throw Error(ErrorCode::HandshakeFailed,
                    std::string("peer alert: ") + SSL_alert_desc_string_long(*st.alert_received));
    }
    int err = SSL_get_error(ssl, rc);
    if (err == SSL_ERROR_SYSCALL && (errno == EAGAIN || errno == EWOULDBLOCK))
        throw Error(ErrorCode::Timeout, "handshake");
    if (!st.client && !st.saw_certificate && SSL_get_verify_mode(ssl) & SSL_VERIFY_FAIL_IF_NO_PEER_CERT)
        throw Error(ErrorCode::HandshakeRejected, "client_certificate_required");
    if (err == SSL_ERROR_SYSCALL || err == SSL_ERROR_ZERO_RETURN)
        throw Error(ErrorCode::TransportError, "connection closed during handshake");
    throw Error(ErrorCode::HandshakeFailed, ossl::last_error());
}

} // namespace

struct SecureSession::Impl {
    bool client = false;
    net::TcpStream stream;
    ossl::SslPtr ssl;
    std::unique_ptr<HandshakeState> hs;
    ExtensionTransport transport = ExtensionTransport::preamble;
    neg::NegotiationOffer offer;
    neg::NegotiationAgreement agreement;
    PeerAuthResult peer;
    Clock::time_point started;
    Clock::time_point finished;
    frame::FrameReader reader;
    bool closed = false;

    void join_verification() {
        settle(*hs);
        if (hs->verify_error) throw *hs->verify_error;
    }

    void abort() {
        if (ssl) SSL_shutdown(ssl.get());
        stream.close();
        closed = true;
    }
};

SecureSession::SecureSession(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
SecureSession::SecureSession(SecureSession &&) noexcept = default;
SecureSession &SecureSession::operator=(SecureSession &&) noexcept = default;
SecureSession::~SecureSession() {
    if (impl_) close();
}

bool SecureSession::is_client() const noexcept { return impl_->client; }
const neg::NegotiationOffer &SecureSession::offer() const noexcept { return impl_->offer; }
const neg::NegotiationAgreement &SecureSession::negotiated() const noexcept { return impl_->agreement; }
const PeerAuthResult &SecureSession::peer() const noexcept { return impl_->peer; }
ExtensionTransport SecureSession::transport() const noexcept { return impl_->transport; }
std::size_t SecureSession::session_tickets_bytes() const noexcept { return impl_->hs->ticket_bytes; }
std::uint64_t SecureSession::bytes_sent() const noexcept {
    return BIO_number_written(SSL_get_wbio(impl_->ssl.get()));
}
std::uint64_t SecureSession::bytes_received() const noexcept {
    return BIO_number_read(SSL_get_rbio(impl_->ssl.get()));
}
Clock::time_point SecureSession::handshake_started() const noexcept { return impl_->started; }
Clock::time_point SecureSession::handshake_finished() const noexcept { return impl_->finished; }
int SecureSession::fd() const noexcept { return impl_->stream.fd(); }
bool SecureSession::has_pending() const noexcept { return SSL_has_pending(impl_->ssl.get()) == 1; }

void SecureSession::write(ByteView data) {
    if (impl_->closed) throw Error(ErrorCode::TransportError, "session closed");
    std::size_t off = 0;
    while (off < data.size()) {
        size_t written = 0;
        if (SSL_write_ex(impl_->ssl.get(), data.data() + off, data.size() - off, &written) != 1) {
            int err = SSL_get_error(impl_->ssl.get(), 0);
            if (err == SSL_ERROR_WANT_WRITE || err == SSL_ERROR_WANT_READ) continue;
            throw Error(ErrorCode::TransportError, "write failed");
        }
        off += written;
    }
}

std::optional<std::size_t> SecureSession::try_read(std::span<std::uint8_t> out) {
    if (impl_->closed) return 0;
    SSL *ssl = impl_->ssl.get();
    if (!SSL_has_pending(ssl) && !wait_readable(impl_->stream.fd(), Clock::now())) return std::nullopt;
    size_t n = 0;
    ERR_clear_error();
    if (SSL_read_ex(ssl, out.data(), out.size(), &n) == 1) return n;
    int err = SSL_get_error(ssl, 0);
    switch (err) {
    case SSL_ERROR_WANT_READ:
    case SSL_ERROR_WANT_WRITE: return std::nullopt;
    case SSL_ERROR_ZERO_RETURN: return 0;
    default: break;
    }
    auto &st = *impl_->hs;
    if (st.alert_received) {
        if (*st.alert_received == SSL_AD_CERTIFICATE_REQUIRED)
            throw Error(ErrorCode::HandshakeRejected, "client_certificate_required");
        if (auto reason = reason_for_alert(*st.alert_received))
            throw Error(ErrorCode::HandshakeRejected, std::string(neg::to_string(*reason)));
        throw Error(ErrorCode::TransportError,
                    std::string("peer alert: ") + SSL_alert_desc_string_long(*st.alert_received));
    }
    if (err == SSL_ERROR_SYSCALL) return 0;
    throw Error(ErrorCode::TransportError, ossl::last_error());
}

std::size_t SecureSession::read(std::span<std::uint8_t> out, std::optional<std::chrono::milliseconds> timeout) {
    std::optional<Clock::time_point> deadline;
    if (timeout) deadline = Clock::now() + *timeout;
    for (;;) {
        if (auto n = try_read(out)) return *n;
        if (!SSL_has_pending(impl_->ssl.get()) && !wait_readable(impl_->stream.fd(), deadline))
            throw Error(ErrorCode::Timeout, "read");
    }
}

void SecureSession::write_frame(const frame::Frame &f) { write(frame::encode_frame(f)); }

std::optional<frame::Frame> SecureSession::read_frame(std::optional<std::chrono::milliseconds> timeout) {
    std::optional<Clock::time_point> deadline;
    if (timeout) deadline = Clock::now() + *timeout;
    std::uint8_t buf[16384];
    for (;;) {
        if (auto f = impl_->reader.next()) return f;
        std::optional<std::chrono::milliseconds> left;
        if (deadline)
            left = std::max(std::chrono::milliseconds(0),
                            std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()));
        auto n = read(buf, left);
        if (n == 0) {
            if (impl_->reader.buffered() != 0) throw Error(ErrorCode::Truncated, "connection closed mid-frame");
            return std::nullopt;
        }
        impl_->reader.feed(ByteView(buf, n));
    }
}

std::optional<frame::Frame> SecureSession::try_read_frame() {
    if (auto f = impl_->reader.next()) return f;
    std::uint8_t buf[16384];
    auto n = try_read(buf);
    if (!n) return std::nullopt;
    if (*n == 0) throw Error(ErrorCode::TransportError, "connection closed");
    impl_->reader.feed(ByteView(buf, *n));
    return impl_->reader.next();
}

void SecureSession::drain_tickets(std::chrono::milliseconds timeout) {
    if (!impl_->client || impl_->closed) return;
    auto deadline = Clock::now() + timeout;
    SSL *ssl = impl_->ssl.get();
    std::uint8_t probe;
    while (impl_->hs->tickets < 2) {
        if (!SSL_has_pending(ssl) && !wait_readable(impl_->stream.fd(), deadline)) return;
        size_t n = 0;
        if (SSL_peek_ex(ssl, &probe, 1, &n) == 1) return;
        if (SSL_get_error(ssl, 0) != SSL_ERROR_WANT_READ) return;
    }
}

void SecureSession::close() {
    if (!impl_ || impl_->closed) return;
    if (impl_->hs && impl_->hs->pending) {
        try {
            impl_->join_verification();
        } catch (...) {
        }
    }
    impl_->abort();
}

namespace {

void set_io_timeout(net::TcpStream &stream, std::chrono::milliseconds timeout) { stream.set_io_timeout(timeout); }

neg::ClientAuthMode client_mode_for(const PeerAuthResult &peer, bool identification) {
    switch (peer.mode) {
    case PeerMode::anonymous: return neg::ClientAuthMode::none;
    case PeerMode::cert_chain:
    case PeerMode::derived_identifier: return neg::ClientAuthMode::cert;
    case PeerMode::did:
    case PeerMode::did_pending_vc: return identification ? neg::ClientAuthMode::did_vc : neg::ClientAuthMode::did;
    }
    return neg::ClientAuthMode::none;
}

neg::ServerAuthMode server_mode_for(const PeerAuthResult &peer, bool by_name, bool identification) {
    if (peer.mode != PeerMode::did && peer.mode != PeerMode::did_pending_vc)
        return by_name ? neg::ServerAuthMode::cert : neg::ServerAuthMode::cert_default;
    if (identification) return by_name ? neg::ServerAuthMode::did_vc : neg::ServerAuthMode::did_vc_default;
    return by_name ? neg::ServerAuthMode::did : neg::ServerAuthMode::did_default;
}

} // namespace

// ---- client ----

struct TlsClient::Context {
    ClientConfig config;
    ossl::SslCtxPtr ctx;
    std::optional<LoadedIdentity> identity;
};

TlsClient::TlsClient(ClientConfig config) : ctx_(std::make_unique<Context>()) {
    ctx_->config = std::move(config);
    ctx_->ctx = make_ctx(false);
    if (ctx_->config.identity) ctx_->identity = load_identity(*ctx_->config.identity);
}
TlsClient::~TlsClient() = default;
TlsClient::TlsClient(TlsClient &&) noexcept = default;
TlsClient &TlsClient::operator=(TlsClient &&) noexcept = default;
const ClientConfig &TlsClient::config() const noexcept { return ctx_->config; }

SecureSession TlsClient::connect(const net::Endpoint &endpoint) {
    return connect(net::TcpStream::connect(endpoint, ctx_->config.handshake_timeout));
}

SecureSession TlsClient::connect(net::TcpStream stream) {
    const auto &cfg = ctx_->config;
    auto impl = std::make_unique<SecureSession::Impl>();
    impl->client = true;
    impl->transport = cfg.transport;
    impl->stream = std::move(stream);
    impl->offer = cfg.offer;
    impl->hs = std::make_unique<HandshakeState>();
    auto &hs = *impl->hs;
    hs.client = true;
    hs.transport = cfg.transport;
    hs.verify = cfg.verify;
    hs.expected_peer = cfg.expected_peer ? cfg.expected_peer : cfg.offer.target_server;
    hs.offer = cfg.offer;

    impl->ssl.reset(SSL_new(ctx_->ctx.get()));
    SSL *ssl = impl->ssl.get();
    if (!ssl) throw Error(ErrorCode::HandshakeFailed, ossl::last_error());
    SSL_set_ex_data(ssl, state_index(), &hs);
    SSL_set_fd(ssl, impl->stream.fd());
    SSL_set_verify(ssl, SSL_VERIFY_PEER, nullptr);
    if (cfg.offer.target_server && SSL_set_tlsext_host_name(ssl, cfg.offer.target_server->c_str()) != 1)
        throw Error(ErrorCode::OversizePayload, "target server name");
    if (ctx_->identity) install_identity(ssl, *ctx_->identity);

    set_io_timeout(impl->stream, cfg.handshake_timeout);
    impl->started = Clock::now();
    ERR_clear_error();
    int rc = SSL_connect(ssl);
    if (rc != 1) {
        if (hs.pending) hs.pending->wait();
        raise_handshake_error(ssl, hs, rc);
    }

    try {
        if (cfg.transport == ExtensionTransport::preamble) {
            auto exts = neg::encode_extensions(static_cast<const neg::OfferExtensions &>(cfg.offer));
            impl->reader = {};
            SecureSession probe(std::move(impl));
            std::optional<Error> write_error;
            try {
                probe.write_frame({frame::FrameType::negotiation_preamble,
                                   static_cast<std::uint8_t>(frame::Flow::client_verifies_server),
                                   neg::serialize_extensions(exts)});
            } catch (const Error &e) {
                write_error = e;
            }
            probe.impl_->join_verification();
            // A server that refused the handshake has left an alert to read.
            auto reply = probe.read_frame(cfg.handshake_timeout);
            impl = std::move(probe.impl_);
            if (write_error) throw *write_error;
            if (!reply) throw Error(ErrorCode::TransportError, "server closed before negotiation");
            if (reply->type == frame::FrameType::error) {
                auto j = parse_canonical(didlink::to_string(reply->payload));
                auto reason = j.value("reason", std::string());
                if (reason_from_string(reason) || reason == "client_certificate_required")
                    throw Error(ErrorCode::HandshakeRejected, reason);
                throw Error(ErrorCode::HandshakeFailed, j.value("detail", reason));
            }
            if (reply->type != frame::FrameType::negotiation_preamble)
                throw Error(ErrorCode::ProtocolViolation, "expected negotiation preamble");
            static_cast<neg::AgreementExtensions &>(impl->agreement) =
                neg::decode_agreement(neg::parse_extensions(reply->payload));
        } else {
            impl->join_verification();
            if (hs.smi_payload && !hs.smi_payload->empty())
                impl->agreement.server_did_methods = neg::decode_list(*hs.smi_payload);
            if (hs.spa_payload && !hs.spa_payload->empty()) {
                auto spa = neg::decode_list(*hs.spa_payload);
                if (spa.size() != 1) throw Error(ErrorCode::MalformedPayload, "SPA must carry one entry");
                impl->agreement.agreed_presentation_protocol = spa.front();
            }
        }
    } catch (...) {
        if (impl) impl->abort();
        throw;
    }

    auto &agreement = impl->agreement;
    agreement.identification_enabled = agreement.agreed_presentation_protocol.has_value();
    impl->peer = impl->hs->peer.value_or(PeerAuthResult{});
    agreement.server_auth_mode =
        server_mode_for(impl->peer, cfg.offer.target_server.has_value(), agreement.identification_enabled);
    if (impl->peer.mode == PeerMode::did && agreement.identification_enabled) impl->peer.mode = PeerMode::did_pending_vc;
    impl->finished = Clock::now();
    impl->peer.handshake_ms = to_ms(impl->finished - impl->started);
    set_io_timeout(impl->stream, std::chrono::milliseconds(0));
    return SecureSession(std::move(impl));
}

// ---- server ----

struct TlsServer::Context {
    ServerConfig config;
    ossl::SslCtxPtr ctx;
    std::vector<LoadedIdentity> identities;
};

TlsServer::TlsServer(ServerConfig config) : ctx_(std::make_unique<Context>()) {
    ctx_->config = std::move(config);
    if (ctx_->config.caps.identities.empty()) throw Error(ErrorCode::UsageError, "server needs an identity");
    ctx_->ctx = make_ctx(true);
    for (auto &id : ctx_->config.caps.identities) ctx_->identities.push_back(load_identity(id.bundle));
}
TlsServer::~TlsServer() = default;
TlsServer::TlsServer(TlsServer &&) noexcept = default;
TlsServer &TlsServer::operator=(TlsServer &&) noexcept = default;
const ServerConfig &TlsServer::config() const noexcept { return ctx_->config; }

SecureSession TlsServer::accept(net::TcpListener &listener) {
    auto stream = listener.accept();
    if (!stream) throw Error(ErrorCode::TransportError, "listener closed");
    return accept(std::move(*stream));
}

SecureSession TlsServer::accept(net::TcpStream stream) {
    const auto &cfg = ctx_->config;
    auto impl = std::make_unique<SecureSession::Impl>();
    impl->client = false;
    impl->transport = cfg.transport;
    impl->stream = std::move(stream);
    impl->hs = std::make_unique<HandshakeState>();
    auto &hs = *impl->hs;
    hs.client = false;
    hs.transport = cfg.transport;
    hs.verify = cfg.verify;
    hs.caps = &cfg.caps;
    hs.identities = &ctx_->identities;

    impl->ssl.reset(SSL_new(ctx_->ctx.get()));
    SSL *ssl = impl->ssl.get();
    if (!ssl) throw Error(ErrorCode::HandshakeFailed, ossl::last_error());
    SSL_set_ex_data(ssl, state_index(), &hs);
    SSL_set_fd(ssl, impl->stream.fd());
    int mode = SSL_VERIFY_NONE;
    if (cfg.client_auth == ClientAuth::optional) mode = SSL_VERIFY_PEER;
    if (cfg.client_auth == ClientAuth::required) mode = SSL_VERIFY_PEER | SSL_VERIFY_FAIL_IF_NO_PEER_CERT;
    SSL_set_verify(ssl, mode, nullptr);

    set_io_timeout(impl->stream, cfg.handshake_timeout);
    impl->started = Clock::now();
    ERR_clear_error();
    int rc = SSL_accept(ssl);
    if (rc != 1) {
        if (hs.pending) hs.pending->wait();
        linger_close(impl->stream.fd());
        raise_handshake_error(ssl, hs, rc);
    }

    try {
        if (cfg.transport == ExtensionTransport::preamble) {
            SecureSession s(std::move(impl));
            auto first = s.read_frame(cfg.handshake_timeout);
            if (!first) throw Error(ErrorCode::TransportError, "client closed before negotiation");
            if (first->type != frame::FrameType::negotiation_preamble)
                throw Error(ErrorCode::ProtocolViolation, "expected negotiation preamble");
            neg::NegotiationOffer offer;
            static_cast<neg::OfferExtensions &>(offer) = neg::decode_offer(neg::parse_extensions(first->payload));
            offer.target_server = hs.offer.target_server;
            hs.offer = offer;
            auto outcome = neg::negotiate(offer, cfg.caps);
            if (auto *rej = std::get_if<neg::Rejection>(&outcome)) {
                s.write_frame({frame::FrameType::error, first->flow, encode_rejection(rej->reason)});
                throw Error(ErrorCode::HandshakeRejected, std::string(neg::to_string(rej->reason)));
            }
            hs.agreement = std::get<neg::NegotiationAgreement>(outcome);
            auto exts = neg::encode_extensions(static_cast<const neg::AgreementExtensions &>(*hs.agreement));
            s.write_frame({frame::FrameType::negotiation_preamble, first->flow, neg::serialize_extensions(exts)});
            impl = std::move(s.impl_);
        }
        impl->join_verification();
    } catch (...) {
        if (impl) impl->abort();
        throw;
    }

    impl->offer = hs.offer;
    impl->agreement = *hs.agreement;
    impl->peer = hs.peer.value_or(PeerAuthResult{});
    impl->offer.client_auth_mode = client_mode_for(impl->peer, impl->agreement.identification_enabled);
    if (impl->peer.mode == PeerMode::did && impl->agreement.identification_enabled)
        impl->peer.mode = PeerMode::did_pending_vc;
    impl->finished = Clock::now();
    impl->peer.handshake_ms = to_ms(impl->finished - impl->started);
    set_io_timeout(impl->stream, std::chrono::milliseconds(0));
    return SecureSession(std::move(impl));
}

} // namespace didlink::channel

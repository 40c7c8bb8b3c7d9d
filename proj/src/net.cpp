#include "didlink/net.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "didlink/error.hpp"

namespace didlink::net {

namespace {

std::string errno_text() { return std::strerror(errno); }

sockaddr_in to_sockaddr(const Endpoint &endpoint) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(endpoint.port);
    std::string host = endpoint.host == "localhost" ? "127.0.0.1" : endpoint.host;
    if (host.empty() || host == "*") host = "0.0.0.0";
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        addrinfo hints{}, *res = nullptr;
        hints.ai_family = AF_INET;
        if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
            throw Error(ErrorCode::TransportError, "cannot resolve host " + endpoint.host);
        addr.sin_addr = reinterpret_cast<sockaddr_in *>(res->ai_addr)->sin_addr;
        freeaddrinfo(res);
    }
    return addr;
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

} // namespace

Endpoint Endpoint::parse(std::string_view text) {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon + 1 == text.size())
        throw Error(ErrorCode::UsageError, "endpoint must be host:port");
    Endpoint ep;
    ep.host = std::string(text.substr(0, colon));
    unsigned long port = 0;
    for (char c : text.substr(colon + 1)) {
        if (c < '0' || c > '9') throw Error(ErrorCode::UsageError, "port must be numeric");
        port = port * 10 + static_cast<unsigned long>(c - '0');
        if (port > 65535) throw Error(ErrorCode::UsageError, "port out of range");
    }
    ep.port = static_cast<std::uint16_t>(port);
    if (ep.host.empty()) ep.host = "127.0.0.1";
    return ep;
}

TcpStream::TcpStream(TcpStream &&other) noexcept
    : fd_(other.fd_), bytes_sent_(other.bytes_sent_), bytes_received_(other.bytes_received_) {
    other.fd_ = -1;
}

TcpStream &TcpStream::operator=(TcpStream &&other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        bytes_sent_ = other.bytes_sent_;
        bytes_received_ = other.bytes_received_;
        other.fd_ = -1;
    }
    return *this;
}

TcpStream::~TcpStream() { close(); }

TcpStream TcpStream::connect(const Endpoint &endpoint, std::chrono::milliseconds timeout) {
    auto addr = to_sockaddr(endpoint);
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw Error(ErrorCode::TransportError, "socket: " + errno_text());
    TcpStream stream(fd);
    int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, reinterpret_cast<sockaddr *>(&addr), sizeof addr);
    if (rc != 0 && errno != EINPROGRESS)
        throw Error(ErrorCode::TransportError, "connect " + endpoint.str() + ": " + errno_text());
    if (rc != 0) {
        pollfd pfd{fd, POLLOUT, 0};
        int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
        if (ready == 0) throw Error(ErrorCode::Timeout, "connect " + endpoint.str());
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (ready < 0 || err != 0)
            throw Error(ErrorCode::TransportError, "connect " + endpoint.str() + ": " + std::strerror(err ? err : errno));
    }
    ::fcntl(fd, F_SETFL, flags);
    set_nodelay(fd);
    stream.set_io_timeout(timeout);
    return stream;
}

void TcpStream::set_io_timeout(std::chrono::milliseconds timeout) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

void TcpStream::write_all(ByteView data) {
    std::size_t off = 0;
    while (off < data.size()) {
        ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(ErrorCode::Timeout, "write deadline");
            throw Error(ErrorCode::TransportError, "send: " + errno_text());
        }
        off += static_cast<std::size_t>(n);
        bytes_sent_ += static_cast<std::uint64_t>(n);
    }
}

bool TcpStream::read_exact(std::span<std::uint8_t> out) {
    std::size_t off = 0;
    while (off < out.size()) {
        ssize_t n = ::recv(fd_, out.data() + off, out.size() - off, 0);
        if (n == 0) {
            if (off == 0) return false;
            throw Error(ErrorCode::Truncated, "peer closed mid-message");
        }
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(ErrorCode::Timeout, "read deadline");
            throw Error(ErrorCode::TransportError, "recv: " + errno_text());
        }
        off += static_cast<std::size_t>(n);
        bytes_received_ += static_cast<std::uint64_t>(n);
    }
    return true;
}

void TcpStream::shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void TcpStream::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

int TcpStream::release() noexcept {
    int fd = fd_;
    fd_ = -1;
    return fd;
}

TcpListener::TcpListener(TcpListener &&other) noexcept : fd_(other.fd_.exchange(-1)), bound_(other.bound_) {}

TcpListener &TcpListener::operator=(TcpListener &&other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_.exchange(-1);
        bound_ = other.bound_;
    }
    return *this;
}

TcpListener::~TcpListener() { close(); }

TcpListener TcpListener::bind(const Endpoint &endpoint) {
    sockaddr_in addr;
    try {
        addr = to_sockaddr(endpoint);
    } catch (const Error &e) {
        throw Error(ErrorCode::BindFailure, e.what());
    }
    TcpListener listener;
    listener.fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listener.fd_.load() < 0) throw Error(ErrorCode::BindFailure, "socket: " + errno_text());
    int one = 1;
    ::setsockopt(listener.fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(listener.fd_, reinterpret_cast<sockaddr *>(&addr), sizeof addr) != 0)
        throw Error(ErrorCode::BindFailure, "bind " + endpoint.str() + ": " + errno_text());
    if (::listen(listener.fd_, 128) != 0) throw Error(ErrorCode::BindFailure, "listen: " + errno_text());
    sockaddr_in actual{};
    socklen_t len = sizeof actual;
    ::getsockname(listener.fd_, reinterpret_cast<sockaddr *>(&actual), &len);
    listener.bound_.host = endpoint.host.empty() ? "127.0.0.1" : endpoint.host;
    if (listener.bound_.host == "0.0.0.0" || listener.bound_.host == "*") listener.bound_.host = "127.0.0.1";
    listener.bound_.port = ntohs(actual.sin_port);
    return listener;
}

std::optional<TcpStream> TcpListener::accept(std::optional<std::chrono::milliseconds> timeout) {
    for (int fd = fd_.load(); fd >= 0; fd = fd_.load()) {
        pollfd pfd{fd, POLLIN, 0};
        int wait = timeout ? static_cast<int>(timeout->count()) : 200;
        int ready = ::poll(&pfd, 1, wait);
        if (ready < 0 && errno != EINTR) return std::nullopt;
        if (ready <= 0) {
            if (timeout) return std::nullopt;
            continue;
        }
        int conn = ::accept4(fd, nullptr, nullptr, SOCK_CLOEXEC);
        if (conn < 0) {
            if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) continue;
            return std::nullopt;
        }
        set_nodelay(conn);
        return TcpStream(conn);
    }
    return std::nullopt;
}

void TcpListener::close() {
    int fd = fd_.exchange(-1);
    if (fd >= 0) {
        ::shutdown(fd, SHUT_RDWR);
        ::close(fd);
    }
}

Endpoint TcpListener::local_endpoint() const { return bound_; }

void write_frame(TcpStream &stream, std::string_view payload) {
    if (payload.size() > kMaxFrame) throw Error(ErrorCode::OversizePayload, "frame exceeds limit");
    Bytes buf;
    buf.reserve(payload.size() + 4);
    codec::put_u32(buf, static_cast<std::uint32_t>(payload.size()));
    buf.insert(buf.end(), payload.begin(), payload.end());
    stream.write_all(buf);
}

std::optional<std::string> read_frame(TcpStream &stream) {
    std::uint8_t header[4];
    if (!stream.read_exact(header)) return std::nullopt;
    auto len = codec::get_u32(header);
    if (len > kMaxFrame) throw Error(ErrorCode::MalformedPayload, "frame length exceeds limit");
    std::string payload(len, '\0');
    if (len > 0 && !stream.read_exact({reinterpret_cast<std::uint8_t *>(payload.data()), len}))
        throw Error(ErrorCode::Truncated, "peer closed after frame header");
    return payload;
}

} // namespace didlink::net

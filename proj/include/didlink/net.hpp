#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "didlink/codec.hpp"

namespace didlink::net {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    /// "host:port"; throws Error(UsageError) otherwise.
    static Endpoint parse(std::string_view text);
    std::string str() const { return host + ":" + std::to_string(port); }
};

/// Owning TCP connection with blocking I/O and optional deadlines.
class TcpStream {
  public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {}
    TcpStream(TcpStream &&other) noexcept;
    TcpStream &operator=(TcpStream &&other) noexcept;
    TcpStream(const TcpStream &) = delete;
    TcpStream &operator=(const TcpStream &) = delete;
    ~TcpStream();

    /// Throws Error(TransportError) on refusal, Error(Timeout) when the
    /// connection is not established in time.
    static TcpStream connect(const Endpoint &endpoint, std::chrono::milliseconds timeout);

    /// Applies to each subsequent read/write; zero disables.
    void set_io_timeout(std::chrono::milliseconds timeout);

    void write_all(ByteView data);
    /// Returns false on orderly EOF before the first byte, throws
    /// Error(Truncated) on EOF mid-buffer and Error(Timeout) on deadline.
    bool read_exact(std::span<std::uint8_t> out);

    void shutdown_write();
    void close();
    int fd() const noexcept { return fd_; }
    bool is_open() const noexcept { return fd_ >= 0; }
    /// Transfers ownership of the descriptor to the caller.
    int release() noexcept;

    std::uint64_t bytes_sent() const noexcept { return bytes_sent_; }
    std::uint64_t bytes_received() const noexcept { return bytes_received_; }

  private:
    int fd_ = -1;
    std::uint64_t bytes_sent_ = 0;
    std::uint64_t bytes_received_ = 0;
};

class TcpListener {
  public:
    TcpListener() = default;
    TcpListener(TcpListener &&other) noexcept;
    TcpListener &operator=(TcpListener &&other) noexcept;
    TcpListener(const TcpListener &) = delete;
    TcpListener &operator=(const TcpListener &) = delete;
    ~TcpListener();

    /// Port 0 picks an ephemeral port. Throws Error(BindFailure).
    static TcpListener bind(const Endpoint &endpoint);

    /// Blocks until a peer connects; nullopt if the listener was closed or the
    /// optional timeout elapsed.
    std::optional<TcpStream> accept(std::optional<std::chrono::milliseconds> timeout = std::nullopt);
    void close();
    Endpoint local_endpoint() const;

  private:
    std::atomic<int> fd_{-1};
    Endpoint bound_;
};

/// 4-byte big-endian length followed by the payload.
constexpr std::size_t kMaxFrame = 16u << 20;
void write_frame(TcpStream &stream, std::string_view payload);
/// nullopt on orderly EOF at a frame boundary.
std::optional<std::string> read_frame(TcpStream &stream);

} // namespace didlink::net

#pragma once

// Thin POSIX socket helpers shared by the device server, the host client
// and the UI bridge.

#include "openpneu/errors.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>

namespace openpneu::transport {

/// Owning file descriptor.
class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Fd& operator=(Fd&& other) noexcept
    {
        if (this != &other) {
            reset();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    ~Fd() { reset(); }

    void reset()
    {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    [[nodiscard]] int get() const { return fd_; }
    [[nodiscard]] bool valid() const { return fd_ >= 0; }
    explicit operator bool() const { return valid(); }

private:
    int fd_ = -1;
};

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

inline void set_nonblocking(int fd)
{
    const int flags = ::fcntl(fd, F_GETFL, 0);
    if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) {
        throw TransportError(errno_text("fcntl"));
    }
}

/// Listening TCP socket. Port 0 picks an ephemeral port.
inline Fd listen_tcp(int port, const std::string& bind_address = "0.0.0.0")
{
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) {
        throw TransportError(errno_text("socket"));
    }
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
        throw TransportError("bad bind address " + bind_address);
    }
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
        if (errno == EADDRINUSE) {
            throw PortInUse(port);
        }
        throw TransportError(errno_text("bind"));
    }
    if (::listen(fd.get(), 16) < 0) {
        throw TransportError(errno_text("listen"));
    }
    set_nonblocking(fd.get());
    return fd;
}

inline int local_port(int fd)
{
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) < 0) {
        throw TransportError(errno_text("getsockname"));
    }
    return ntohs(addr.sin_port);
}

inline Fd connect_tcp(const std::string& host, int port)
{
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    const auto service = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &result); rc != 0) {
        throw TransportError("resolve " + host + ": " + ::gai_strerror(rc));
    }
    Fd fd;
    for (auto* ai = result; ai != nullptr; ai = ai->ai_next) {
        Fd candidate(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
        if (candidate && ::connect(candidate.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
            fd = std::move(candidate);
            break;
        }
    }
    ::freeaddrinfo(result);
    if (!fd) {
        throw TransportError("cannot connect to " + host + ":" + service);
    }
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

inline Fd accept_client(int listen_fd)
{
    Fd fd(::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK));
    if (fd) {
        int one = 1;
        ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    return fd;
}

/// Blocking write of the whole buffer. Throws TransportClosed when the peer is gone.
inline void write_all(int fd, std::span<const std::uint8_t> bytes)
{
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto n = ::send(fd, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
        if (n < 0 && errno == ENOTSOCK) {
            const auto w = ::write(fd, bytes.data() + done, bytes.size() - done);
            if (w <= 0) {
                throw TransportClosed();
            }
            done += static_cast<std::size_t>(w);
            continue;
        }
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            if (errno == EAGAIN || errno == EWOULDBLOCK) {
                pollfd p{fd, POLLOUT, 0};
                ::poll(&p, 1, 100);
                continue;
            }
            throw TransportClosed();
        }
        done += static_cast<std::size_t>(n);
    }
}

enum class ReadStatus { Data, WouldBlock, Closed };

/// Non-throwing read of whatever is available.
inline ReadStatus read_some(int fd, std::span<std::uint8_t> buffer, std::size_t& got)
{
    got = 0;
    for (;;) {
        const auto n = ::read(fd, buffer.data(), buffer.size());
        if (n > 0) {
            got = static_cast<std::size_t>(n);
            return ReadStatus::Data;
        }
        if (n == 0) {
            return ReadStatus::Closed;
        }
        if (errno == EINTR) {
            continue;
        }
        if (errno == EAGAIN || errno == EWOULDBLOCK) {
            return ReadStatus::WouldBlock;
        }
        return ReadStatus::Closed;
    }
}

} // namespace openpneu::transport

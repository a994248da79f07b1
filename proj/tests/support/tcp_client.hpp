#pragma once
// Blocking TCP client with per-call deadlines for driving the servers.

#include "tmsnav/igtl.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <stdexcept>
#include <string>

namespace tmsnav::testing {

class TcpClient final : public igtl::ByteSource {
public:
    explicit TcpClient(std::uint16_t port, std::chrono::milliseconds timeout = std::chrono::seconds(10))
        : timeout_(timeout) {
        fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            ::close(fd_);
            throw std::runtime_error("connect failed on port " + std::to_string(port));
        }
        const int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    ~TcpClient() override { close(); }

    void close() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    void send(std::span<const std::uint8_t> bytes) {
        std::size_t off = 0;
        while (off < bytes.size()) {
            const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
            if (n <= 0) throw std::runtime_error("send failed");
            off += std::size_t(n);
        }
    }

    /// True when data (or EOF) arrives within the wait.
    bool readable(std::chrono::milliseconds wait) {
        pollfd p{fd_, POLLIN, 0};
        return ::poll(&p, 1, int(wait.count())) == 1;
    }

    std::size_t read_some(std::span<std::uint8_t> out) override {
        if (!readable(timeout_)) throw std::runtime_error("read timed out");
        const ssize_t n = ::recv(fd_, out.data(), out.size(), 0);
        if (n < 0) throw std::runtime_error("recv failed");
        return std::size_t(n);
    }

    std::optional<igtl::Message> read_message() { return igtl::read_message(*this); }

private:
    int fd_ = -1;
    std::chrono::milliseconds timeout_;
};

}  // namespace tmsnav::testing

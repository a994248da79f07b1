#include "tmsnav/remote_predictor.hpp"

#include "tmsnav/igtl.hpp"

#include <spdlog/spdlog.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace tmsnav::server {
namespace {

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
    const auto left =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return left <= 0 ? 0 : static_cast<int>(left);
}

[[noreturn]] void timed_out(const Endpoint& ep, const char* stage) {
    throw Error(Errc::Timeout, std::string(stage) + " " + ep.host + ":" + std::to_string(ep.port) +
                                   " exceeded the deadline");
}

}  // namespace

struct RemotePredictor::Connection {
    int fd = -1;

    ~Connection() {
        if (fd >= 0) {
            ::close(fd);
        }
    }

    /// One connect attempt. Returns false if refused or unreachable.
    bool try_connect(const Endpoint& ep, Clock::time_point deadline) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const auto port = std::to_string(ep.port);
        if (::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
            return false;
        }
        bool ok = false;
        for (addrinfo* ai = res; ai && !ok; ai = ai->ai_next) {
            const int s = ::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK | SOCK_CLOEXEC,
                                   ai->ai_protocol);
            if (s < 0) {
                continue;
            }
            int rc = ::connect(s, ai->ai_addr, ai->ai_addrlen);
            if (rc != 0 && errno == EINPROGRESS) {
                pollfd p{s, POLLOUT, 0};
                if (::poll(&p, 1, remaining_ms(deadline)) == 1) {
                    int err = 0;
                    socklen_t len = sizeof err;
                    ::getsockopt(s, SOL_SOCKET, SO_ERROR, &err, &len);
                    rc = err == 0 ? 0 : -1;
                }
            }
            if (rc == 0) {
                const int one = 1;
                ::setsockopt(s, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                fd = s;
                ok = true;
            } else {
                ::close(s);
            }
        }
        ::freeaddrinfo(res);
        return ok;
    }

    void send_all(std::span<const std::uint8_t> bytes, const Endpoint& ep,
                  Clock::time_point deadline) {
        std::size_t off = 0;
        while (off < bytes.size()) {
            const ssize_t n =
                ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL | MSG_DONTWAIT);
            if (n > 0) {
                off += static_cast<std::size_t>(n);
                continue;
            }
            if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
                pollfd p{fd, POLLOUT, 0};
                if (::poll(&p, 1, remaining_ms(deadline)) != 1) {
                    timed_out(ep, "send to");
                }
                continue;
            }
            throw Error(Errc::ConnectionLost, std::string("send failed: ") + std::strerror(errno));
        }
    }
};

namespace {

/// Blocking-with-deadline byte source over a connected socket.
class DeadlineSource final : public igtl::ByteSource {
public:
    DeadlineSource(int fd, const Endpoint& ep, Clock::time_point deadline)
        : fd_(fd), ep_(ep), deadline_(deadline) {}

    std::size_t read_some(std::span<std::uint8_t> out) override {
        for (;;) {
            const ssize_t n = ::recv(fd_, out.data(), out.size(), MSG_DONTWAIT);
            if (n > 0) {
                return static_cast<std::size_t>(n);
            }
            if (n == 0) {
                return 0;
            }
            if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) {
                pollfd p{fd_, POLLIN, 0};
                if (::poll(&p, 1, remaining_ms(deadline_)) != 1) {
                    timed_out(ep_, "reply from");
                }
                continue;
            }
            throw Error(Errc::ConnectionLost, std::string("recv failed: ") + std::strerror(errno));
        }
    }

private:
    int fd_;
    const Endpoint& ep_;
    Clock::time_point deadline_;
};

}  // namespace

RemotePredictor::RemotePredictor(Endpoint endpoint, GridSpec grid, double timeout_s,
                                 std::string pose_device)
    : endpoint_(std::move(endpoint)),
      grid_(std::move(grid)),
      timeout_s_(timeout_s),
      pose_device_(std::move(pose_device)) {
    if (!(timeout_s_ > 0.0)) {
        throw Error(Errc::InvalidConfig, "remote timeout must be positive");
    }
}

RemotePredictor::~RemotePredictor() = default;

ScalarField RemotePredictor::predict(const RigidPose& pose) {
    const auto start = Clock::now();
    const auto deadline =
        start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_s_));
    try {
        if (!conn_) {
            auto c = std::make_unique<Connection>();
            while (!c->try_connect(endpoint_, deadline)) {
                if (Clock::now() >= deadline) {
                    timed_out(endpoint_, "connect to");
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
            }
            conn_ = std::move(c);
        }
        const auto body = igtl::encode_transform(pose);
        conn_->send_all(igtl::frame_message(igtl::MessageType::Transform, pose_device_, body, 0),
                        endpoint_, deadline);

        DeadlineSource src(conn_->fd, endpoint_, deadline);
        for (;;) {
            std::optional<igtl::Message> msg;
            try {
                msg = igtl::read_message(src);
            } catch (const Error& e) {
                if (e.code() == Errc::CrcMismatch || e.code() == Errc::UnknownType) {
                    spdlog::warn("remote predictor skipped a frame: {}", e.what());
                    continue;
                }
                if (e.code() == Errc::Truncated) {
                    throw Error(Errc::ConnectionLost, e.what());
                }
                throw;
            }
            if (!msg) {
                throw Error(Errc::ConnectionLost, "model server closed the connection");
            }
            ScalarField* scalar = std::get_if<ScalarField>(&msg->body);
            std::optional<ScalarField> mag;
            if (!scalar) {
                if (auto* v = std::get_if<VectorField>(&msg->body)) {
                    mag = magnitude(*v);
                    scalar = &*mag;
                } else {
                    continue;  // not an image
                }
            }
            if (!same_lattice(scalar->grid(), grid_)) {
                throw Error(Errc::GridMismatch, "model server grid differs from the session grid");
            }
            last_duration_s_ = std::chrono::duration<double>(Clock::now() - start).count();
            return std::move(*scalar);
        }
    } catch (const Error&) {
        conn_.reset();
        last_duration_s_ = std::chrono::duration<double>(Clock::now() - start).count();
        throw;
    }
}

}  // namespace tmsnav::server

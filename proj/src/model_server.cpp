#include "tmsnav/model_server.hpp"

#include "tmsnav/igtl.hpp"

#include <boost/asio.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <thread>

namespace tmsnav::server {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

struct ModelServer::Impl {
    std::unique_ptr<Predictor> predictor;
    ModelServerOptions opt;
    asio::io_context ioc{1};
    tcp::acceptor acceptor{ioc};
    std::thread net;
    std::atomic<std::size_t> served{0};
    std::uint16_t bound_port = 0;
    bool stopped = false;

    class Conn : public std::enable_shared_from_this<Conn> {
    public:
        Conn(tcp::socket s, Impl& owner) : socket_(std::move(s)), owner_(owner), timer_(owner.ioc) {}

        void read_header() {
            asio::async_read(socket_, asio::buffer(header_),
                             [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                                 if (!ec) self->on_header();
                             });
        }

    private:
        void on_header() {
            std::uint64_t size = 0;
            try {
                hdr_ = igtl::decode_header(header_);
                size = hdr_->body_size;
            } catch (const igtl::UnknownTypeError& e) {
                hdr_.reset();
                size = e.body_size();
            } catch (const std::exception&) {
                return;
            }
            if (size > igtl::kMaxBodySize) {
                return;
            }
            if (!hdr_ || hdr_->type_name != igtl::type_name(igtl::MessageType::Transform) ||
                size != igtl::kTransformBodySize) {
                skip_body(size);
                return;
            }
            body_.resize(size);
            asio::async_read(socket_, asio::buffer(body_),
                             [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                                 if (!ec) self->on_body();
                             });
        }

        void skip_body(std::uint64_t remaining) {
            if (remaining == 0) {
                read_header();
                return;
            }
            const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, scratch_.size()));
            asio::async_read(socket_, asio::buffer(scratch_.data(), n),
                             [self = shared_from_this(), remaining, n](boost::system::error_code ec,
                                                                       std::size_t) {
                                 if (!ec) self->skip_body(remaining - n);
                             });
        }

        void on_body() {
            std::optional<RigidPose> pose;
            if (hdr_) {
                try {
                    auto msg = igtl::decode_message(*hdr_, body_);
                    if (auto* p = std::get_if<RigidPose>(&msg.body)) pose = *p;
                } catch (const Error& e) {
                    spdlog::warn("model server: dropped message: {}", e.what());
                }
            }
            if (!pose) {
                read_header();
                return;
            }
            try {
                const auto body = igtl::encode_image(owner_.predictor->predict(*pose));
                reply_ = std::make_shared<igtl::Bytes>(igtl::frame_message(
                    igtl::MessageType::Image, owner_.opt.field_device, body, hdr_->timestamp));
            } catch (const std::exception& e) {
                spdlog::error("model server: prediction failed: {}", e.what());
                return;  // dropping the connection tells the client
            }
            timer_.expires_after(owner_.opt.reply_delay);
            timer_.async_wait([self = shared_from_this()](boost::system::error_code ec) {
                if (ec) return;
                asio::async_write(self->socket_, asio::buffer(*self->reply_),
                                  [self](boost::system::error_code wec, std::size_t) {
                                      if (wec) return;
                                      ++self->owner_.served;
                                      self->read_header();
                                  });
            });
        }

        tcp::socket socket_;
        Impl& owner_;
        asio::steady_timer timer_;
        std::array<std::uint8_t, igtl::kHeaderSize> header_{};
        std::optional<igtl::Header> hdr_;
        igtl::Bytes body_;
        std::array<std::uint8_t, 16384> scratch_{};
        std::shared_ptr<igtl::Bytes> reply_;
    };

    void accept() {
        acceptor.async_accept([this](boost::system::error_code ec, tcp::socket s) {
            if (ec) return;
            s.set_option(tcp::no_delay(true), ec);
            std::make_shared<Conn>(std::move(s), *this)->read_header();
            accept();
        });
    }
};

ModelServer::ModelServer(std::unique_ptr<Predictor> predictor, ModelServerOptions options)
    : impl_(std::make_unique<Impl>()) {
    if (!predictor) {
        throw Error(Errc::InvalidConfig, "model server needs a predictor");
    }
    impl_->predictor = std::move(predictor);
    impl_->opt = std::move(options);
    boost::system::error_code ec;
    const tcp::endpoint ep(asio::ip::make_address(impl_->opt.bind_address, ec),
                           static_cast<std::uint16_t>(impl_->opt.port));
    if (!ec) impl_->acceptor.open(ep.protocol(), ec);
    if (!ec) impl_->acceptor.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) impl_->acceptor.bind(ep, ec);
    if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) {
        throw Error(Errc::BindFailure, "model server bind failed: " + ec.message());
    }
    impl_->bound_port = impl_->acceptor.local_endpoint().port();
    impl_->accept();
    impl_->net = std::thread([raw = impl_.get()] { raw->ioc.run(); });
}

ModelServer::~ModelServer() { stop(); }

std::uint16_t ModelServer::port() const { return impl_->bound_port; }

std::size_t ModelServer::requests_served() const { return impl_->served.load(); }

void ModelServer::stop() {
    if (impl_->stopped) {
        return;
    }
    impl_->stopped = true;
    impl_->ioc.stop();
    if (impl_->net.joinable()) {
        impl_->net.join();
    }
}

}  // namespace tmsnav::server

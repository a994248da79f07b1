#include "tmsnav/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tmsnav::server {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

// Frames queued per connection beyond this are dropped oldest first; a slow
// viewer sees fewer updates instead of growing memory.
constexpr std::size_t kMaxQueuedFrames = 8;

}  // namespace

RigidPose parse_ws_pose(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidConfig, std::string("bad pose message: ") + e.what());
    }
    if (!j.is_object() || j.value("type", "") != "pose") {
        throw Error(Errc::InvalidConfig, "expected a message with type \"pose\"");
    }
    const auto it = j.find("matrix");
    if (it == j.end() || !it->is_array() || it->size() != 16) {
        throw Error(Errc::InvalidConfig, "pose.matrix must have 16 numbers");
    }
    Mat4 m;
    for (int i = 0; i < 16; ++i) {
        if (!(*it)[i].is_number()) {
            throw Error(Errc::InvalidConfig, "pose.matrix must have 16 numbers");
        }
        m(i / 4, i % 4) = (*it)[i].get<double>();
    }
    return RigidPose::from_matrix(m);
}

std::string resolve_static_path(const std::string& root, std::string_view target) {
    if (root.empty() || target.empty() || target.front() != '/') {
        return {};
    }
    std::string_view path = target.substr(0, target.find_first_of("?#"));
    if (path == "/") {
        path = "/index.html";
    }
    namespace fs = std::filesystem;
    const fs::path rel = fs::path(std::string(path.substr(1))).lexically_normal();
    if (rel.empty() || rel.is_absolute() || *rel.begin() == "..") {
        return {};
    }
    for (const auto& part : rel) {
        if (part == "..") {
            return {};
        }
    }
    return (fs::path(root) / rel).string();
}

std::string_view mime_type(std::string_view path) {
    auto ends = [&](std::string_view ext) {
        return path.size() >= ext.size() && path.substr(path.size() - ext.size()) == ext;
    };
    if (ends(".html") || ends(".htm")) return "text/html; charset=utf-8";
    if (ends(".js") || ends(".mjs")) return "text/javascript";
    if (ends(".css")) return "text/css";
    if (ends(".json")) return "application/json";
    if (ends(".wasm")) return "application/wasm";
    if (ends(".png")) return "image/png";
    if (ends(".svg")) return "image/svg+xml";
    if (ends(".stl")) return "model/stl";
    return "application/octet-stream";
}

namespace {

class IgtlConnection : public std::enable_shared_from_this<IgtlConnection> {
public:
    IgtlConnection(tcp::socket s, Session& session) : socket_(std::move(s)), session_(session) {}

    void start() { read_header(); }

    void send(std::shared_ptr<const igtl::Bytes> frame) {
        if (!socket_.is_open()) {
            return;
        }
        if (queue_.size() > kMaxQueuedFrames) {
            queue_.erase(queue_.begin() + (writing_ ? 1 : 0));
        }
        queue_.push_back(std::move(frame));
        if (!writing_) {
            write_next();
        }
    }

    void close() {
        beast::error_code ec;
        socket_.shutdown(tcp::socket::shutdown_both, ec);
        socket_.close(ec);
    }

    bool open() const { return socket_.is_open(); }

private:
    void read_header() {
        asio::async_read(socket_, asio::buffer(header_),
                         [self = shared_from_this()](beast::error_code ec, std::size_t) {
                             if (ec) {
                                 self->close();
                                 return;
                             }
                             self->on_header();
                         });
    }

    void on_header() {
        std::uint64_t body_size = 0;
        try {
            hdr_ = igtl::decode_header(header_);
            body_size = hdr_->body_size;
        } catch (const igtl::UnknownTypeError& e) {
            hdr_.reset();
            body_size = e.body_size();
        } catch (const std::exception& e) {
            spdlog::warn("igtl: bad header, closing: {}", e.what());
            close();
            return;
        }
        if (body_size > igtl::kMaxBodySize) {
            spdlog::warn("igtl: body of {} bytes refused, closing", body_size);
            close();
            return;
        }
        // Only TRANSFORM bodies are kept; everything else streams through a
        // small scratch buffer instead of being allocated.
        if (!hdr_ || hdr_->type_name != igtl::type_name(igtl::MessageType::Transform)) {
            spdlog::debug("igtl: skipping {}-byte body of an unused message", body_size);
            skip_body(body_size);
            return;
        }
        if (body_size != igtl::kTransformBodySize) {
            spdlog::warn("igtl: dropped TRANSFORM with a {}-byte body", body_size);
            skip_body(body_size);
            return;
        }
        body_.resize(body_size);
        asio::async_read(socket_, asio::buffer(body_),
                         [self = shared_from_this()](beast::error_code ec, std::size_t) {
                             if (ec) {
                                 self->close();
                                 return;
                             }
                             self->on_body();
                             self->read_header();
                         });
    }

    void skip_body(std::uint64_t remaining) {
        if (remaining == 0) {
            read_header();
            return;
        }
        const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, scratch_.size()));
        asio::async_read(socket_, asio::buffer(scratch_.data(), n),
                         [self = shared_from_this(), remaining, n](beast::error_code ec, std::size_t) {
                             if (ec) {
                                 self->close();
                                 return;
                             }
                             self->skip_body(remaining - n);
                         });
    }

    void on_body() {
        try {
            auto msg = igtl::decode_message(*hdr_, body_);
            const auto* pose = std::get_if<RigidPose>(&msg.body);
            if (!pose) {
                return;
            }
            if (hdr_->device_name != session_.config().pose_device) {
                spdlog::debug("igtl: ignored TRANSFORM from device '{}'", hdr_->device_name);
                return;
            }
            session_.submit_pose(*pose, "igtl");
        } catch (const Error& e) {
            // Framing is intact; drop this message and keep the connection.
            spdlog::warn("igtl: dropped message: {}", e.what());
        }
    }

    void write_next() {
        writing_ = true;
        auto frame = queue_.front();
        asio::async_write(socket_, asio::buffer(*frame),
                          [self = shared_from_this(), frame](beast::error_code ec, std::size_t) {
                              self->queue_.pop_front();
                              if (ec) {
                                  self->writing_ = false;
                                  self->queue_.clear();
                                  self->close();
                                  return;
                              }
                              if (self->queue_.empty()) {
                                  self->writing_ = false;
                              } else {
                                  self->write_next();
                              }
                          });
    }

    tcp::socket socket_;
    Session& session_;
    std::array<std::uint8_t, igtl::kHeaderSize> header_{};
    std::optional<igtl::Header> hdr_;
    igtl::Bytes body_;
    std::array<std::uint8_t, 16384> scratch_{};
    std::deque<std::shared_ptr<const igtl::Bytes>> queue_;
    bool writing_ = false;
};

class WsConnection : public std::enable_shared_from_this<WsConnection> {
public:
    WsConnection(tcp::socket s, Session& session) : ws_(std::move(s)), session_(session) {}

    template <class Request>
    void accept(Request req, std::function<void(std::shared_ptr<WsConnection>)> on_open) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, [self = shared_from_this(),
                               on_open = std::move(on_open)](beast::error_code ec) {
            if (ec) {
                spdlog::debug("ws: handshake failed: {}", ec.message());
                return;
            }
            on_open(self);
            self->send_text(std::make_shared<const std::string>(self->session_.scene_json()));
            self->read();
        });
    }

    void send_text(std::shared_ptr<const std::string> s) { enqueue({std::move(s), false}); }
    void send_binary(std::shared_ptr<const std::string> s) { enqueue({std::move(s), true}); }

    void close() {
        if (closing_) {
            return;
        }
        closing_ = true;
        beast::error_code ec;
        beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
        beast::get_lowest_layer(ws_).socket().close(ec);
    }

    bool open() const { return !closing_ && ws_.is_open(); }

private:
    struct Frame {
        std::shared_ptr<const std::string> data;
        bool binary;
    };

    void read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) {
                self->closing_ = true;
                return;
            }
            if (self->ws_.got_text()) {
                self->on_text(beast::buffers_to_string(self->buffer_.data()));
            }
            self->buffer_.consume(self->buffer_.size());
            self->read();
        });
    }

    void on_text(const std::string& text) {
        try {
            session_.submit_pose(parse_ws_pose(text), "ws");
        } catch (const Error& e) {
            send_text(std::make_shared<const std::string>(
                json{{"type", "error"}, {"code", to_string(e.code())}, {"message", e.what()}}
                    .dump()));
        }
    }

    void enqueue(Frame f) {
        if (!open()) {
            return;
        }
        if (queue_.size() > kMaxQueuedFrames) {
            queue_.erase(queue_.begin() + (writing_ ? 1 : 0));
        }
        queue_.push_back(std::move(f));
        if (!writing_) {
            write_next();
        }
    }

    void write_next() {
        writing_ = true;
        const Frame f = queue_.front();
        ws_.binary(f.binary);
        ws_.async_write(asio::buffer(*f.data),
                        [self = shared_from_this(), f](beast::error_code ec, std::size_t) {
                            self->queue_.pop_front();
                            if (ec) {
                                self->writing_ = false;
                                self->queue_.clear();
                                self->close();
                                return;
                            }
                            if (self->queue_.empty()) {
                                self->writing_ = false;
                            } else {
                                self->write_next();
                            }
                        });
    }

    websocket::stream<beast::tcp_stream> ws_;
    Session& session_;
    beast::flat_buffer buffer_;
    std::deque<Frame> queue_;
    bool writing_ = false;
    bool closing_ = false;
};

}  // namespace

struct Service::Impl {
    SessionConfig cfg;
    asio::io_context ioc{1};
    tcp::acceptor igtl_acceptor{ioc};
    tcp::acceptor ws_acceptor{ioc};
    std::unique_ptr<Session> session;
    std::uint64_t subscription = 0;
    std::shared_ptr<const std::string> mesh_stl;
    std::vector<std::weak_ptr<IgtlConnection>> igtl_conns;
    std::vector<std::weak_ptr<WsConnection>> ws_conns;
    std::thread net;
    std::mutex stop_mu;
    bool stopped = false;

    void bind(tcp::acceptor& acc, int port, const char* what) {
        beast::error_code ec;
        const auto addr = asio::ip::make_address(cfg.bind_address, ec);
        if (ec) {
            throw Error(Errc::BindFailure, "bad bind address " + cfg.bind_address);
        }
        const tcp::endpoint ep(addr, static_cast<std::uint16_t>(port));
        acc.open(ep.protocol(), ec);
        if (!ec) acc.set_option(asio::socket_base::reuse_address(true), ec);
        if (!ec) acc.bind(ep, ec);
        if (!ec) acc.listen(asio::socket_base::max_listen_connections, ec);
        if (ec) {
            throw Error(Errc::BindFailure, std::string(what) + " listener on " + cfg.bind_address +
                                               ":" + std::to_string(port) + ": " + ec.message());
        }
    }

    void accept_igtl() {
        igtl_acceptor.async_accept([this](beast::error_code ec, tcp::socket s) {
            if (ec) {
                return;  // acceptor closed
            }
            s.set_option(tcp::no_delay(true), ec);
            auto conn = std::make_shared<IgtlConnection>(std::move(s), *session);
            prune(igtl_conns);
            igtl_conns.push_back(conn);
            conn->start();
            accept_igtl();
        });
    }

    void accept_ws() {
        ws_acceptor.async_accept([this](beast::error_code ec, tcp::socket s) {
            if (ec) {
                return;
            }
            s.set_option(tcp::no_delay(true), ec);
            serve_http(std::make_shared<beast::tcp_stream>(std::move(s)));
            accept_ws();
        });
    }

    void serve_http(std::shared_ptr<beast::tcp_stream> stream) {
        auto buf = std::make_shared<beast::flat_buffer>();
        auto req = std::make_shared<http::request<http::string_body>>();
        stream->expires_after(std::chrono::seconds(30));
        http::async_read(*stream, *buf, *req, [this, stream, buf, req](beast::error_code ec,
                                                                       std::size_t) {
            if (ec) {
                beast::error_code ignored;
                stream->socket().shutdown(tcp::socket::shutdown_both, ignored);
                return;
            }
            if (websocket::is_upgrade(*req)) {
                stream->expires_never();
                auto conn = std::make_shared<WsConnection>(stream->release_socket(), *session);
                conn->accept(std::move(*req), [this](std::shared_ptr<WsConnection> c) {
                    prune(ws_conns);
                    ws_conns.push_back(std::move(c));
                });
                return;
            }
            auto res = std::make_shared<http::response<http::string_body>>(respond(*req));
            http::async_write(*stream, *res, [this, stream, buf, res](beast::error_code wec,
                                                                     std::size_t) {
                if (wec || !res->keep_alive()) {
                    beast::error_code ignored;
                    stream->socket().shutdown(tcp::socket::shutdown_send, ignored);
                    return;
                }
                serve_http(stream);
            });
        });
    }

    http::response<http::string_body> respond(const http::request<http::string_body>& req) {
        auto reply = [&](http::status st, std::string_view type, std::string body) {
            http::response<http::string_body> res{st, req.version()};
            res.set(http::field::server, "tmsnav");
            res.set(http::field::content_type, std::string(type));
            res.keep_alive(req.keep_alive());
            res.body() = std::move(body);
            res.prepare_payload();
            if (req.method() == http::verb::head) {
                res.body().clear();
            }
            return res;
        };
        if (req.method() != http::verb::get && req.method() != http::verb::head) {
            return reply(http::status::method_not_allowed, "text/plain", "method not allowed\n");
        }
        const std::string target(req.target());
        if (target == "/assets/brain.stl") {
            return reply(http::status::ok, "model/stl", *mesh_stl);
        }
        if (target == "/scene.json") {
            return reply(http::status::ok, "application/json", session->scene_json());
        }
        if (cfg.ui_dir.empty()) {
            if (target == "/" || target == "/index.html") {
                return reply(http::status::ok, "text/html; charset=utf-8",
                             "<!doctype html><title>tmsnav</title>"
                             "<p>No UI assets configured. WebSocket endpoint is live on this "
                             "port.</p>\n");
            }
            return reply(http::status::not_found, "text/plain", "not found\n");
        }
        const auto path = resolve_static_path(cfg.ui_dir, target);
        if (path.empty()) {
            return reply(http::status::bad_request, "text/plain", "bad path\n");
        }
        std::ifstream in(path, std::ios::binary);
        if (!in || std::filesystem::is_directory(path)) {
            return reply(http::status::not_found, "text/plain", "not found\n");
        }
        std::ostringstream body;
        body << in.rdbuf();
        return reply(http::status::ok, mime_type(path), body.str());
    }

    template <class T>
    static void prune(std::vector<std::weak_ptr<T>>& v) {
        std::erase_if(v, [](const std::weak_ptr<T>& w) {
            auto p = w.lock();
            return !p || !p->open();
        });
    }

    void fan_out(const RunOutput& out) {
        asio::post(ioc, [this, image = out.image_message, meta = out.field_meta,
                         overlay = out.overlay, fibers = out.fiber_meta] {
            for (auto& w : igtl_conns) {
                if (auto c = w.lock()) c->send(image);
            }
            for (auto& w : ws_conns) {
                if (auto c = w.lock()) {
                    c->send_text(meta);
                    c->send_binary(overlay);
                    if (fibers) c->send_text(fibers);
                }
            }
        });
    }

    void shutdown() {
        {
            std::lock_guard lk(stop_mu);
            if (stopped) {
                return;
            }
            stopped = true;
        }
        session->unsubscribe(subscription);
        session->stop();
        asio::post(ioc, [this] {
            beast::error_code ec;
            igtl_acceptor.close(ec);
            ws_acceptor.close(ec);
            for (auto& w : igtl_conns) {
                if (auto c = w.lock()) c->close();
            }
            for (auto& w : ws_conns) {
                if (auto c = w.lock()) c->close();
            }
            igtl_conns.clear();
            ws_conns.clear();
        });
        // Give pending handlers a moment to observe the closed sockets.
        const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(500);
        while (!ioc.stopped() && std::chrono::steady_clock::now() < until) {
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        ioc.stop();
        if (net.joinable()) {
            net.join();
        }
    }
};

Service::Service(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

Service::~Service() { stop(); }

std::unique_ptr<Service> Service::start(SessionConfig cfg, std::unique_ptr<Predictor> predictor) {
    cfg.validate();
    auto impl = std::make_unique<Impl>();
    impl->cfg = cfg;
    auto assets = load_assets(cfg);
    const auto stl = io::write_stl(assets.brain);
    impl->mesh_stl = std::make_shared<const std::string>(stl.begin(), stl.end());
    impl->bind(impl->igtl_acceptor, cfg.igtl_port, "IGTL");
    impl->bind(impl->ws_acceptor, cfg.ws_port, "WebSocket");
    if (!predictor) {
        predictor = make_predictor(cfg);
    }
    impl->session = std::make_unique<Session>(cfg, std::move(predictor), std::move(assets));
    Impl* raw = impl.get();
    impl->subscription = impl->session->subscribe([raw](const RunOutput& out) { raw->fan_out(out); });
    impl->accept_igtl();
    impl->accept_ws();
    impl->net = std::thread([raw] {
        try {
            raw->ioc.run();
        } catch (const std::exception& e) {
            spdlog::error("network thread stopped: {}", e.what());
        }
    });
    spdlog::info("serving IGTL on {}:{} and HTTP/WebSocket on {}:{}", cfg.bind_address,
                 impl->igtl_acceptor.local_endpoint().port(), cfg.bind_address,
                 impl->ws_acceptor.local_endpoint().port());
    return std::unique_ptr<Service>(new Service(std::move(impl)));
}

Session& Service::session() { return *impl_->session; }

std::uint16_t Service::igtl_port() const {
    beast::error_code ec;
    return impl_->igtl_acceptor.local_endpoint(ec).port();
}

std::uint16_t Service::ws_port() const {
    beast::error_code ec;
    return impl_->ws_acceptor.local_endpoint(ec).port();
}

void Service::stop() {
    if (impl_) {
        impl_->shutdown();
    }
}

}  // namespace tmsnav::server

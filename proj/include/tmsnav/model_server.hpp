#pragma once

#include "tmsnav/field_engine.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

namespace tmsnav::server {

struct ModelServerOptions {
    std::string bind_address = "127.0.0.1";
    int port = 0;  ///< 0 picks an ephemeral port
    std::string field_device = "EField";
    std::chrono::milliseconds reply_delay{0};  ///< extra latency before each reply
};

/// Serves a predictor over IGTL: every TRANSFORM received is answered with
/// an IMAGE of the predicted field on the same connection.
class ModelServer {
public:
    ModelServer(std::unique_ptr<Predictor> predictor, ModelServerOptions options = {});
    ~ModelServer();

    ModelServer(const ModelServer&) = delete;
    ModelServer& operator=(const ModelServer&) = delete;

    std::uint16_t port() const;
    std::size_t requests_served() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tmsnav::server

#pragma once

#include "tmsnav/session.hpp"

#include <cstdint>
#include <memory>

namespace tmsnav::server {

/// A running back end: the session plus the IGTL listener and the
/// HTTP/WebSocket listener, all socket work on one network thread.
class Service {
public:
    /// Loads assets, binds both listeners and starts serving. A null
    /// predictor selects the backend from cfg. Throws BindFailure,
    /// AssetLoadFailure or InvalidConfig.
    static std::unique_ptr<Service> start(SessionConfig cfg,
                                          std::unique_ptr<Predictor> predictor = nullptr);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    Session& session();
    std::uint16_t igtl_port() const;
    std::uint16_t ws_port() const;

    /// Stops the session (an in-flight run completes), then closes the
    /// listeners and every connection. Idempotent.
    void stop();

private:
    struct Impl;
    explicit Service(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

/// Parses a UI pose message: {"type":"pose","matrix":[16 numbers, row-major]}.
/// Throws InvalidConfig for malformed JSON or shape and NotRigid for a
/// matrix that is not a rigid transform.
RigidPose parse_ws_pose(std::string_view text);

/// Maps a request target to a file under root. Returns an empty path for
/// targets that escape root or are malformed.
std::string resolve_static_path(const std::string& root, std::string_view target);

std::string_view mime_type(std::string_view path);

}  // namespace tmsnav::server

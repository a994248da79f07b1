#pragma once

#include "tmsnav/config.hpp"
#include "tmsnav/field_engine.hpp"

#include <memory>

namespace tmsnav::server {

/// Predictor backed by a model server that speaks the IGTL subset: one
/// TRANSFORM out, one IMAGE back. Each predict has a deadline of timeout_s
/// covering connect, send and receive. Throws Timeout when it passes and
/// ConnectionLost when the peer closes or resets. After either error the
/// socket is dropped and the next call reconnects, so a late reply to an
/// abandoned request is never taken for a fresh one.
class RemotePredictor final : public Predictor {
public:
    RemotePredictor(Endpoint endpoint, GridSpec grid, double timeout_s,
                    std::string pose_device = "CoilPose");
    ~RemotePredictor() override;

    ScalarField predict(const RigidPose& pose) override;
    const GridSpec& grid() const override { return grid_; }
    double last_duration_s() const override { return last_duration_s_; }

private:
    struct Connection;

    Endpoint endpoint_;
    GridSpec grid_;
    double timeout_s_;
    std::string pose_device_;
    std::unique_ptr<Connection> conn_;
    double last_duration_s_ = 0.0;
};

}  // namespace tmsnav::server

#pragma once

#include "tmsnav/field_engine.hpp"
#include "tmsnav/volume_io.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>
#include <vector>

namespace tmsnav::testing {

/// Sleeps for a fixed time and reports exactly that duration. The field
/// encodes the pose's x translation in every voxel, so the consumer can tell
/// which pose a run used.
class MockPredictor final : public Predictor {
public:
    MockPredictor(GridSpec grid, std::chrono::milliseconds delay)
        : grid_(std::move(grid)), delay_(delay) {}

    ScalarField predict(const RigidPose& pose) override {
        {
            std::lock_guard lk(mu_);
            started_.push_back(pose.translation().x());
        }
        if (fail_next_.exchange(false)) {
            throw Error(Errc::Timeout, "mock failure");
        }
        std::this_thread::sleep_for(delay_);
        return ScalarField(grid_, std::vector<double>(grid_.voxel_count(),
                                                      std::abs(pose.translation().x())));
    }

    const GridSpec& grid() const override { return grid_; }
    double last_duration_s() const override {
        return std::chrono::duration<double>(delay_).count();
    }

    void fail_next() { fail_next_ = true; }
    std::vector<double> started() const {
        std::lock_guard lk(mu_);
        return started_;
    }

private:
    GridSpec grid_;
    std::chrono::milliseconds delay_;
    std::atomic<bool> fail_next_{false};
    mutable std::mutex mu_;
    std::vector<double> started_;
};

inline GridSpec small_grid() { return GridSpec({6, 5, 4}, Vec3::Constant(4), Vec3(-10, -8, 12)); }

inline io::SurfaceMesh small_mesh() {
    return io::SurfaceMesh{{Vec3(0, 0, 14), Vec3(4, 0, 14), Vec3(0, 4, 16), Vec3(2, 2, 20)},
                           {{0, 1, 2}, {0, 2, 3}},
                           {}};
}

}  // namespace tmsnav::testing

#pragma once

#include "tmsnav/config.hpp"
#include "tmsnav/field_engine.hpp"
#include "tmsnav/igtl.hpp"
#include "tmsnav/projection.hpp"
#include "tmsnav/volume_io.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace tmsnav::server {

struct RunTiming {
    std::uint64_t run_id = 0;
    std::uint64_t pose_seq = 0;  ///< submission sequence number of the pose used
    RigidPose pose;
    std::string source;  ///< "igtl", "ws", "bench", ...
    double compute_s = 0.0;
    double vis_s = 0.0;
    std::chrono::system_clock::time_point started;
    std::chrono::system_clock::time_point finished;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  ///< population (divide by n)
};

MeanStd mean_std(std::span<const double> xs);

struct StageStats {
    std::size_t count = 0;
    MeanStd compute;
    MeanStd vis;
};

/// Statistics over the last `window` entries of `log` (all if fewer).
StageStats stage_stats(std::span<const RunTiming> log, std::size_t window);

struct SessionAssets {
    io::SurfaceMesh brain;
    std::optional<vis::FiberBundle> fibers;
};

/// Loads the brain mesh (or generates the synthetic head) and fibers named in
/// the config. Throws AssetLoadFailure.
SessionAssets load_assets(const SessionConfig& cfg);

/// Everything one run produces. References are valid during the callback only.
struct RunOutput {
    const RunTiming& timing;
    const ScalarField& field;
    const vis::MeshProjection& projection;
    const std::vector<std::vector<double>>& fiber_values;
    std::shared_ptr<const igtl::Bytes> image_message;  ///< framed IMAGE, CRC set
    std::shared_ptr<const std::string> field_meta;     ///< JSON text frame
    std::shared_ptr<const std::string> overlay;        ///< binary frame payload
    std::shared_ptr<const std::string> fiber_meta;     ///< null without fibers
};

/// One pose-to-field pipeline. A single worker thread runs predict and then
/// the visualization stage. Poses arriving while a run is in flight land in
/// a one-slot mailbox where the newest replaces any older pending pose.
class Session {
public:
    using Subscriber = std::function<void(const RunOutput&)>;

    Session(SessionConfig cfg, std::unique_ptr<Predictor> predictor, SessionAssets assets,
            igtl::TimestampSource clock = igtl::system_timestamp_source());
    ~Session();

    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    /// Returns the pose's sequence number. Throws SessionClosed after stop().
    std::uint64_t submit_pose(const RigidPose& pose, std::string source = "api");

    /// Blocks until the pose with this sequence number has been processed or
    /// superseded. False on timeout.
    bool wait_processed(std::uint64_t seq, std::chrono::milliseconds timeout);
    /// Blocks until nothing is pending or running. False on timeout.
    bool wait_idle(std::chrono::milliseconds timeout);

    std::vector<RunTiming> timings() const;
    StageStats stats() const;
    StageStats stats(std::size_t window) const;
    std::size_t failed_runs() const;
    std::optional<std::string> last_error() const;

    std::uint64_t subscribe(Subscriber fn);
    void unsubscribe(std::uint64_t id);

    /// Lets an in-flight run finish, drops any pending pose, joins the
    /// worker. Idempotent.
    void stop();
    bool stopped() const;

    const SessionConfig& config() const { return cfg_; }
    const SessionAssets& assets() const { return assets_; }
    /// Scene description sent to UI clients on connect.
    std::string scene_json() const;

private:
    struct Pending {
        RigidPose pose;
        std::string source;
        std::uint64_t seq;
    };

    void worker_loop();
    void run_once(const Pending& job);

    SessionConfig cfg_;
    std::unique_ptr<Predictor> predictor_;
    SessionAssets assets_;
    igtl::TimestampSource clock_;

    mutable std::mutex mu_;
    std::condition_variable wake_;
    std::condition_variable done_;
    std::optional<Pending> mailbox_;
    bool running_ = false;
    bool closed_ = false;
    std::uint64_t next_seq_ = 1;
    std::uint64_t processed_seq_ = 0;  ///< highest seq run or superseded
    std::uint64_t next_run_id_ = 1;
    std::vector<RunTiming> log_;
    std::size_t failed_ = 0;
    std::optional<std::string> last_error_;

    std::mutex sub_mu_;
    std::map<std::uint64_t, Subscriber> subscribers_;
    std::uint64_t next_sub_id_ = 1;

    std::thread worker_;
};

/// Builds the predictor named by cfg.backend.
std::unique_ptr<Predictor> make_predictor(const SessionConfig& cfg);

/// Binary overlay frame: u32 LE run_id, then one f32 LE value per vertex.
std::string encode_overlay(std::uint64_t run_id, std::span<const double> values);

}  // namespace tmsnav::server

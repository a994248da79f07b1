#pragma once

#include "tmsnav/session.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace tmsnav::bench {

/// n poses rotating the coil about its own normal in equal steps.
struct HandleRotations {
    std::size_t count = 78;
};

/// Uniform random orientations with translations uniform in a box.
struct RandomPoses {
    std::uint64_t seed = 1;
    std::size_t count = 50;
    double half_extent_mm = 10.0;
};

struct FixedPoses {
    std::vector<RigidPose> poses;
};

using TrajectoryScheme = std::variant<HandleRotations, RandomPoses, FixedPoses>;

struct Trajectory {
    std::string label;
    std::vector<RigidPose> poses;
};

/// Throws InvalidScheme for empty trajectories.
Trajectory make_trajectory(const TrajectoryScheme& scheme);

/// "handle:N", "random:SEED:N" or "fixed:PATH" (JSON array of row-major
/// 4x4 matrices, 16 numbers each). Throws InvalidScheme.
TrajectoryScheme parse_trajectory_spec(const std::string& spec);

struct BenchOptions {
    std::size_t runs = 50;
    std::size_t warmup = 5;
    std::string subject = "synthetic-head";
    std::string hardware;  ///< empty: detected from the host
    std::chrono::milliseconds run_timeout{120000};
};

struct BenchReport {
    std::string subject;
    std::string hardware;
    std::string backend;
    GridDims grid_dims{};
    std::size_t vertex_count = 0;
    std::size_t requested_runs = 0;
    std::size_t warmup = 0;
    std::vector<server::RunTiming> runs;  ///< measured runs only
    server::StageStats stats;
    bool complete = false;
    std::string error;
};

/// Drives a fresh session through warmup + runs poses, cycling through the
/// trajectory. Each pose is submitted only after the previous field is out,
/// so no pose is coalesced. A failed or stalled run stops the bench and
/// leaves the report incomplete.
BenchReport run_bench(const server::SessionConfig& cfg, const Trajectory& trajectory,
                      const BenchOptions& options,
                      std::unique_ptr<Predictor> predictor = nullptr);

enum class ReportFormat { Markdown, Csv };

/// "mean±std" with five decimals.
std::string format_mean_std(const server::MeanStd& s);

/// One row per report. Markdown and CSV carry the same cell strings.
std::string render_report(std::span<const BenchReport> reports, ReportFormat format);

/// run_id,pose_seq,compute_s,vis_s per measured run.
std::string render_runs_csv(const BenchReport& report);

std::string detect_hardware_label();

ReportFormat parse_report_format(const std::string& name);

}  // namespace tmsnav::bench

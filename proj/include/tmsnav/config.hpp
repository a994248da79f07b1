#pragma once

#include "tmsnav/field_engine.hpp"
#include "tmsnav/projection.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace tmsnav::server {

enum class Backend { Analytic, Remote };
enum class FieldMode { Magnitude, Vector };

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;
};

/// "host:port"; throws InvalidConfig.
Endpoint parse_endpoint(const std::string& text);

/// 70×90×50 voxels at 2 mm, x/y centered on the coil axis, starting 10 mm
/// in front of the coil face (+z). Covers a head-sized box under a coil at
/// the identity pose.
GridSpec default_field_grid();

struct SessionConfig {
    Backend backend = Backend::Analytic;
    std::optional<Endpoint> remote_endpoint;
    double remote_timeout_s = 5.0;

    GridSpec grid = default_field_grid();
    CoilParams coil;
    FieldMode field_mode = FieldMode::Magnitude;

    std::string brain_mesh_path;  ///< empty: generated synthetic head
    std::string fibers_path;      ///< optional fiber JSON
    std::string ui_dir;           ///< optional static UI assets

    std::string bind_address = "127.0.0.1";
    int igtl_port = 18944;  ///< 0 picks an ephemeral port
    int ws_port = 8765;

    std::string pose_device = "CoilPose";
    std::string field_device = "EField";

    /// Fixed overlay range in V/m. Unset: (0, max over the mesh) per run.
    std::optional<std::pair<double, double>> colormap_range;
    std::vector<vis::ColorStop> colormap_ramp = vis::default_colormap(1.0).ramp;

    std::size_t stats_window = 50;
    std::string hardware_label;

    /// Throws InvalidConfig.
    void validate() const;
};

SessionConfig session_config_from_json(const nlohmann::json& j);
SessionConfig load_session_config(const std::string& path);
nlohmann::json to_json(const SessionConfig& cfg);

std::string_view to_string(Backend b);

}  // namespace tmsnav::server

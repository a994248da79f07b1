#include "tmsnav/config.hpp"

#include <fstream>

namespace tmsnav::server {
namespace {

using nlohmann::json;

Vec3 vec3_from(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) {
        throw Error(Errc::InvalidConfig, std::string(what) + " must be a 3-element array");
    }
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

GridSpec grid_from(const json& j) {
    const auto dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) {
        throw Error(Errc::InvalidConfig, "grid.dims must have three entries");
    }
    GridDims d{};
    for (int a = 0; a < 3; ++a) {
        const auto v = dims[a].get<long long>();
        if (v < 1) {
            throw Error(Errc::InvalidConfig, "grid.dims must be positive");
        }
        d[a] = static_cast<std::size_t>(v);
    }
    Mat3 axes = Mat3::Identity();
    if (j.contains("axes")) {
        const auto& rows = j.at("axes");
        if (!rows.is_array() || rows.size() != 3) {
            throw Error(Errc::InvalidConfig, "grid.axes must be a 3x3 array");
        }
        for (int r = 0; r < 3; ++r) {
            axes.row(r) = vec3_from(rows[r], "grid.axes row").transpose();
        }
    }
    return GridSpec(d, vec3_from(j.at("spacing"), "grid.spacing"),
                    vec3_from(j.at("origin"), "grid.origin"), axes);
}

json grid_to(const GridSpec& g) {
    json axes = json::array();
    for (int r = 0; r < 3; ++r) {
        axes.push_back(vec3_to(g.axes().row(r).transpose()));
    }
    return json{{"dims", g.dims()}, {"spacing", vec3_to(g.spacing())},
                {"origin", vec3_to(g.origin())}, {"axes", axes}};
}

}  // namespace

std::string_view to_string(Backend b) { return b == Backend::Analytic ? "analytic" : "remote"; }

Endpoint parse_endpoint(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
        throw Error(Errc::InvalidConfig, "endpoint must be host:port, got '" + text + "'");
    }
    int port = 0;
    try {
        port = std::stoi(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error(Errc::InvalidConfig, "bad port in endpoint '" + text + "'");
    }
    if (port < 1 || port > 65535) {
        throw Error(Errc::InvalidConfig, "port out of range in '" + text + "'");
    }
    return Endpoint{text.substr(0, colon), static_cast<std::uint16_t>(port)};
}

GridSpec default_field_grid() {
    return GridSpec({70, 90, 50}, Vec3(2.0, 2.0, 2.0), Vec3(-69.0, -89.0, 10.0));
}

void SessionConfig::validate() const {
    coil.validate();
    auto port_ok = [](int p) { return p >= 0 && p <= 65535; };
    if (!port_ok(igtl_port) || !port_ok(ws_port)) {
        throw Error(Errc::InvalidConfig, "ports must be within 0..65535");
    }
    if (igtl_port != 0 && igtl_port == ws_port) {
        throw Error(Errc::InvalidConfig, "igtl and websocket ports must differ");
    }
    if (backend == Backend::Remote && !remote_endpoint) {
        throw Error(Errc::InvalidConfig, "remote backend needs remote_endpoint");
    }
    if (!(remote_timeout_s > 0.0)) {
        throw Error(Errc::InvalidConfig, "remote_timeout_s must be positive");
    }
    if (pose_device.size() > 20 || field_device.size() > 20) {
        throw Error(Errc::InvalidConfig, "device names are limited to 20 bytes");
    }
    if (stats_window == 0) {
        throw Error(Errc::InvalidConfig, "stats_window must be >= 1");
    }
    const auto [lo, hi] = colormap_range.value_or(std::pair{0.0, 1.0});
    vis::ColorMap{lo, hi, colormap_ramp}.validate();
}

SessionConfig session_config_from_json(const json& j) {
    SessionConfig cfg;
    try {
        if (j.contains("backend")) {
            const auto b = j.at("backend").get<std::string>();
            if (b == "analytic") {
                cfg.backend = Backend::Analytic;
            } else if (b == "remote") {
                cfg.backend = Backend::Remote;
            } else {
                throw Error(Errc::InvalidConfig, "backend must be analytic or remote");
            }
        }
        if (j.contains("remote_endpoint") && !j.at("remote_endpoint").is_null()) {
            cfg.remote_endpoint = parse_endpoint(j.at("remote_endpoint").get<std::string>());
        }
        cfg.remote_timeout_s = j.value("remote_timeout_s", cfg.remote_timeout_s);
        if (j.contains("grid")) {
            cfg.grid = grid_from(j.at("grid"));
        }
        if (j.contains("coil")) {
            const auto& c = j.at("coil");
            cfg.coil.wing_radius_mm = c.value("wing_radius_mm", cfg.coil.wing_radius_mm);
            cfg.coil.wing_separation_mm = c.value("wing_separation_mm", cfg.coil.wing_separation_mm);
            cfg.coil.turns = c.value("turns", cfg.coil.turns);
            cfg.coil.dI_dt = c.value("dI_dt", cfg.coil.dI_dt);
            cfg.coil.segments_per_wing = c.value("segments_per_wing", cfg.coil.segments_per_wing);
        }
        if (j.contains("field_mode")) {
            const auto m = j.at("field_mode").get<std::string>();
            if (m != "magnitude" && m != "vector") {
                throw Error(Errc::InvalidConfig, "field_mode must be magnitude or vector");
            }
            cfg.field_mode = m == "vector" ? FieldMode::Vector : FieldMode::Magnitude;
        }
        if (j.contains("assets")) {
            const auto& a = j.at("assets");
            cfg.brain_mesh_path = a.value("brain_mesh", std::string{});
            cfg.fibers_path = a.value("fibers", std::string{});
            cfg.ui_dir = a.value("ui_dir", std::string{});
        }
        cfg.bind_address = j.value("bind_address", cfg.bind_address);
        cfg.igtl_port = j.value("igtl_port", cfg.igtl_port);
        cfg.ws_port = j.value("ws_port", cfg.ws_port);
        if (j.contains("devices")) {
            cfg.pose_device = j.at("devices").value("pose_in", cfg.pose_device);
            cfg.field_device = j.at("devices").value("field_out", cfg.field_device);
        }
        if (j.contains("colormap")) {
            const auto& cm = j.at("colormap");
            if (cm.contains("range") && !cm.at("range").is_null()) {
                const auto r = cm.at("range");
                cfg.colormap_range = std::pair{r.at(0).get<double>(), r.at(1).get<double>()};
            }
            if (cm.contains("ramp")) {
                cfg.colormap_ramp.clear();
                for (const auto& stop : cm.at("ramp")) {
                    const auto rgb = stop.at(1);
                    cfg.colormap_ramp.push_back(
                        {stop.at(0).get<double>(),
                         {rgb.at(0).get<std::uint8_t>(), rgb.at(1).get<std::uint8_t>(),
                          rgb.at(2).get<std::uint8_t>()}});
                }
            }
        }
        cfg.stats_window = j.value("stats_window", cfg.stats_window);
        cfg.hardware_label = j.value("hardware_label", cfg.hardware_label);
        cfg.validate();
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidConfig, e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::InvalidConfig) {
            throw;
        }
        throw Error(Errc::InvalidConfig, e.what());
    }
    return cfg;
}

SessionConfig load_session_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(Errc::InvalidConfig, "cannot open config " + path);
    }
    try {
        return session_config_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidConfig, e.what());
    }
}

json to_json(const SessionConfig& cfg) {
    json ramp = json::array();
    for (const auto& s : cfg.colormap_ramp) {
        ramp.push_back(json::array({s.t, json::array({s.rgb[0], s.rgb[1], s.rgb[2]})}));
    }
    json range = nullptr;
    if (cfg.colormap_range) {
        range = json::array({cfg.colormap_range->first, cfg.colormap_range->second});
    }
    json remote = nullptr;
    if (cfg.remote_endpoint) {
        remote = cfg.remote_endpoint->host + ":" + std::to_string(cfg.remote_endpoint->port);
    }
    return json{
        {"backend", to_string(cfg.backend)},
        {"remote_endpoint", remote},
        {"remote_timeout_s", cfg.remote_timeout_s},
        {"grid", grid_to(cfg.grid)},
        {"coil",
         {{"wing_radius_mm", cfg.coil.wing_radius_mm},
          {"wing_separation_mm", cfg.coil.wing_separation_mm},
          {"turns", cfg.coil.turns},
          {"dI_dt", cfg.coil.dI_dt},
          {"segments_per_wing", cfg.coil.segments_per_wing}}},
        {"field_mode", cfg.field_mode == FieldMode::Vector ? "vector" : "magnitude"},
        {"assets",
         {{"brain_mesh", cfg.brain_mesh_path}, {"fibers", cfg.fibers_path}, {"ui_dir", cfg.ui_dir}}},
        {"bind_address", cfg.bind_address},
        {"igtl_port", cfg.igtl_port},
        {"ws_port", cfg.ws_port},
        {"devices", {{"pose_in", cfg.pose_device}, {"field_out", cfg.field_device}}},
        {"colormap", {{"range", range}, {"ramp", ramp}}},
        {"stats_window", cfg.stats_window},
        {"hardware_label", cfg.hardware_label},
    };
}

}  // namespace tmsnav::server

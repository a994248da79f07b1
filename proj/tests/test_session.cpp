#include "support/generators.hpp"
#include "support/mock_predictor.hpp"
#include "tmsnav/session.hpp"

#include <catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

using namespace tmsnav;
using namespace tmsnav::testing;
using namespace std::chrono_literals;
using tmsnav::server::Session;
using tmsnav::server::SessionConfig;

namespace {

template <class Fn>
Errc code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::Io;
}

SessionConfig small_config() {
    SessionConfig cfg;
    cfg.grid = small_grid();
    return cfg;
}

struct Harness {
    MockPredictor* mock;
    std::unique_ptr<Session> session;

    explicit Harness(std::chrono::milliseconds delay, SessionConfig cfg = small_config()) {
        auto m = std::make_unique<MockPredictor>(cfg.grid, delay);
        mock = m.get();
        session = std::make_unique<Session>(cfg, std::move(m),
                                            server::SessionAssets{small_mesh(), std::nullopt});
    }
};

}  // namespace

TEST_CASE("mean and population std") {
    const std::vector<double> xs = {1, 2, 3, 4};
    const auto s = server::mean_std(xs);
    CHECK(s.mean == 2.5);
    CHECK(s.std == std::sqrt(1.25));
    const std::vector<double> constant(50, 0.1);
    const auto c = server::mean_std(constant);
    CHECK(c.mean == 0.1);
    CHECK(c.std == 0.0);
    CHECK(server::mean_std({}).mean == 0.0);
}

TEST_CASE("one pose gives exactly one run") {
    Harness h(0ms);
    const auto seq = h.session->submit_pose(translation_pose(Vec3(3, 0, 0)), "test");
    REQUIRE(h.session->wait_processed(seq, 5s));
    REQUIRE(h.session->wait_idle(5s));
    const auto log = h.session->timings();
    REQUIRE(log.size() == 1);
    CHECK(log[0].run_id == 1);
    CHECK(log[0].pose_seq == seq);
    CHECK(log[0].source == "test");
    CHECK(log[0].compute_s == 0.0);
    CHECK(log[0].vis_s >= 0.0);
    CHECK(log[0].finished >= log[0].started);
}

TEST_CASE("no poses, no runs and empty stats") {
    Harness h(0ms);
    CHECK(h.session->wait_idle(1s));
    CHECK(h.session->timings().empty());
    const auto st = h.session->stats();
    CHECK(st.count == 0);
    CHECK(st.compute.mean == 0.0);
}

TEST_CASE("a burst is coalesced but first and last poses run") {
    Harness h(50ms);
    std::vector<Vec3> sent;
    for (int i = 1; i <= 10; ++i) {
        h.session->submit_pose(translation_pose(Vec3(i, 0, 0)));
        std::this_thread::sleep_for(2ms);
    }
    REQUIRE(h.session->wait_idle(10s));
    const auto log = h.session->timings();
    REQUIRE(log.size() >= 2);
    CHECK(log.size() < 10);
    CHECK(log.front().pose.translation().x() == 1.0);
    CHECK(log.back().pose.translation().x() == 10.0);
    for (std::size_t i = 1; i < log.size(); ++i) {
        CHECK(log[i].run_id == log[i - 1].run_id + 1);
        CHECK(log[i].pose_seq > log[i - 1].pose_seq);
    }
}

TEST_CASE("identical poses are not deduplicated") {
    Harness h(0ms);
    std::vector<std::vector<double>> fields;
    h.session->subscribe([&](const server::RunOutput& out) { fields.push_back(out.field.data()); });
    const auto p = translation_pose(Vec3(2, 0, 0));
    REQUIRE(h.session->wait_processed(h.session->submit_pose(p), 5s));
    REQUIRE(h.session->wait_processed(h.session->submit_pose(p), 5s));
    REQUIRE(fields.size() == 2);
    CHECK(fields[0] == fields[1]);
}

TEST_CASE("stats over a window") {
    Harness h(0ms);
    for (int i = 0; i < 60; ++i) {
        REQUIRE(h.session->wait_processed(h.session->submit_pose(RigidPose{}), 5s));
    }
    const auto all = h.session->timings();
    REQUIRE(all.size() == 60);
    const auto st = h.session->stats();
    CHECK(st.count == 50);
    CHECK(st.compute.mean == 0.0);
    CHECK(st.compute.std == 0.0);
    std::vector<double> vis;
    for (std::size_t i = 10; i < 60; ++i) vis.push_back(all[i].vis_s);
    CHECK(st.vis.mean == server::mean_std(vis).mean);
    CHECK(h.session->stats(5).count == 5);
}

TEST_CASE("constant predictor durations give zero spread") {
    Harness h(3ms);
    for (int i = 0; i < 10; ++i) {
        REQUIRE(h.session->wait_processed(h.session->submit_pose(RigidPose{}), 5s));
    }
    const auto st = h.session->stats();
    CHECK(st.compute.mean == 0.003);
    CHECK(st.compute.std == 0.0);
}

TEST_CASE("stop drains the in-flight run and closes the mailbox") {
    Harness h(150ms);
    h.session->submit_pose(translation_pose(Vec3(1, 0, 0)));
    while (h.mock->started().empty()) std::this_thread::sleep_for(1ms);
    h.session->submit_pose(translation_pose(Vec3(2, 0, 0)));  // pending, dropped on stop
    h.session->stop();
    const auto log = h.session->timings();
    REQUIRE(log.size() == 1);
    CHECK(log[0].pose.translation().x() == 1.0);
    CHECK(code_of([&] { h.session->submit_pose(RigidPose{}); }) == Errc::SessionClosed);
    CHECK(h.session->stopped());
    h.session->stop();
}

TEST_CASE("a failed prediction is reported and the session continues") {
    Harness h(0ms);
    h.mock->fail_next();
    REQUIRE(h.session->wait_processed(h.session->submit_pose(RigidPose{}), 5s));
    CHECK(h.session->failed_runs() == 1);
    CHECK(h.session->last_error().has_value());
    REQUIRE(h.session->wait_processed(h.session->submit_pose(RigidPose{}), 5s));
    const auto log = h.session->timings();
    REQUIRE(log.size() == 1);
    CHECK(log[0].run_id == 1);
}

TEST_CASE("run outputs carry IMAGE, overlay and metadata") {
    Harness h(0ms);
    std::optional<igtl::Bytes> image;
    std::string overlay;
    std::string meta;
    h.session->subscribe([&](const server::RunOutput& out) {
        image = *out.image_message;
        overlay = *out.overlay;
        meta = *out.field_meta;
    });
    REQUIRE(h.session->wait_processed(h.session->submit_pose(translation_pose(Vec3(5, 0, 0))), 5s));
    REQUIRE(image);

    igtl::MemoryStream s;
    s.write(*image);
    const auto msg = igtl::read_message(s);
    REQUIRE(msg);
    CHECK(msg->header.type_name == "IMAGE");
    CHECK(msg->header.device_name == "EField");
    const auto& f = std::get<ScalarField>(msg->body);
    CHECK(f.data().size() == small_grid().voxel_count());
    CHECK(f.data().front() == 5.0);

    REQUIRE(overlay.size() == 4 + 4 * small_mesh().vertices.size());
    CHECK(static_cast<std::uint8_t>(overlay[0]) == 1);
    CHECK(overlay[1] == 0);
    float first = 0.0f;
    std::memcpy(&first, overlay.data() + 4, 4);
    CHECK(first == 5.0f);

    const auto j = nlohmann::json::parse(meta);
    CHECK(j["type"] == "field_meta");
    CHECK(j["run_id"] == 1);
    CHECK(j["dims"] == nlohmann::json::array({6, 5, 4}));
    CHECK(j["range"][0] == 0.0);
    CHECK(j["range"][1] == 5.0);
    CHECK(j["vertex_count"] == 4);
    CHECK(j["compute_s"] == 0.0);
    CHECK(j["pose"].size() == 16);
}

TEST_CASE("fixed colormap range is reported in metadata") {
    auto cfg = small_config();
    cfg.colormap_range = std::pair{0.0, 150.0};
    Harness h(0ms, cfg);
    std::string meta;
    h.session->subscribe([&](const server::RunOutput& out) { meta = *out.field_meta; });
    REQUIRE(h.session->wait_processed(h.session->submit_pose(RigidPose{}), 5s));
    CHECK(nlohmann::json::parse(meta)["range"] == nlohmann::json::array({0.0, 150.0}));
    const auto scene = nlohmann::json::parse(h.session->scene_json());
    CHECK(scene["type"] == "scene");
    CHECK(scene["mesh_url"] == "/assets/brain.stl");
    CHECK(scene["colormap"]["range"] == nlohmann::json::array({0.0, 150.0}));
}

TEST_CASE("vector mode streams three-component images") {
    auto cfg = small_config();
    cfg.field_mode = server::FieldMode::Vector;
    Session session(cfg, std::make_unique<AnalyticPredictor>(cfg.coil, cfg.grid),
                    server::SessionAssets{small_mesh(), std::nullopt});
    std::optional<igtl::Bytes> image;
    session.subscribe([&](const server::RunOutput& out) { image = *out.image_message; });
    REQUIRE(session.wait_processed(session.submit_pose(RigidPose{}), 5s));
    REQUIRE(image);
    igtl::MemoryStream s;
    s.write(*image);
    const auto msg = igtl::read_message(s);
    REQUIRE(msg);
    CHECK(std::holds_alternative<VectorField>(msg->body));
}

TEST_CASE("each IMAGE is handed out before the next compute starts") {
    Harness h(20ms);
    std::mutex mu;
    std::vector<std::string> events;
    std::atomic<int> computes{0};
    h.session->subscribe([&](const server::RunOutput& out) {
        std::lock_guard lk(mu);
        events.push_back("out" + std::to_string(out.timing.run_id));
        events.push_back("computes_so_far=" + std::to_string(h.mock->started().size()));
    });
    for (int i = 0; i < 30; ++i) {
        h.session->submit_pose(translation_pose(Vec3(i, 0, 0)));
        std::this_thread::sleep_for(3ms);
    }
    REQUIRE(h.session->wait_idle(10s));
    std::lock_guard lk(mu);
    for (std::size_t i = 0; i < events.size(); i += 2) {
        // At fan-out of run k exactly k predictions have started.
        CHECK(events[i + 1] == "computes_so_far=" + events[i].substr(3));
    }
}

TEST_CASE("session config from JSON") {
    const auto cfg = server::session_config_from_json(nlohmann::json::parse(R"({
        "backend": "remote",
        "remote_endpoint": "gpu-box:19000",
        "remote_timeout_s": 2.5,
        "grid": {"dims": [10, 12, 14], "spacing": [1, 1, 2], "origin": [0, 0, 5]},
        "coil": {"wing_radius_mm": 30, "turns": 10},
        "field_mode": "vector",
        "igtl_port": 0, "ws_port": 0,
        "devices": {"pose_in": "Tracker", "field_out": "E"},
        "colormap": {"range": [0, 120], "ramp": [[0, [0, 0, 0]], [1, [255, 255, 255]]]},
        "stats_window": 20
    })"));
    CHECK(cfg.backend == server::Backend::Remote);
    CHECK(cfg.remote_endpoint->host == "gpu-box");
    CHECK(cfg.remote_endpoint->port == 19000);
    CHECK(cfg.remote_timeout_s == 2.5);
    CHECK(cfg.grid.dims() == GridDims{10, 12, 14});
    CHECK(cfg.coil.wing_radius_mm == 30.0);
    CHECK(cfg.coil.turns == 10);
    CHECK(cfg.coil.wing_separation_mm == 70.0);
    CHECK(cfg.field_mode == server::FieldMode::Vector);
    CHECK(cfg.pose_device == "Tracker");
    CHECK(cfg.colormap_range->second == 120.0);
    CHECK(cfg.colormap_ramp.size() == 2);
    CHECK(cfg.stats_window == 20);

    const auto again = server::session_config_from_json(server::to_json(cfg));
    CHECK(server::to_json(again) == server::to_json(cfg));
}

TEST_CASE("session config defaults and rejections") {
    const auto d = server::session_config_from_json(nlohmann::json::object());
    CHECK(d.backend == server::Backend::Analytic);
    CHECK(d.grid.dims() == GridDims{70, 90, 50});
    CHECK(d.igtl_port == 18944);
    CHECK(d.ws_port == 8765);
    CHECK(d.pose_device == "CoilPose");
    CHECK(d.field_device == "EField");
    CHECK(d.stats_window == 50);

    auto rejects = [](const char* text) {
        return code_of([&] { server::session_config_from_json(nlohmann::json::parse(text)); }) ==
               Errc::InvalidConfig;
    };
    CHECK(rejects(R"({"igtl_port": 9000, "ws_port": 9000})"));
    CHECK(rejects(R"({"backend": "gpu"})"));
    CHECK(rejects(R"({"backend": "remote"})"));
    CHECK(rejects(R"({"remote_endpoint": "nohost"})"));
    CHECK(rejects(R"({"grid": {"dims": [0, 1, 1], "spacing": [1,1,1], "origin": [0,0,0]}})"));
    CHECK(rejects(R"({"coil": {"turns": 0}})"));
    CHECK(rejects(R"({"colormap": {"range": [5, 1]}})"));
    CHECK(rejects(R"({"field_mode": "both"})"));
    CHECK(rejects(R"({"igtl_port": "x"})"));
    CHECK(code_of([] { server::load_session_config("/nonexistent/cfg.json"); }) ==
          Errc::InvalidConfig);
    // Two ephemeral ports are fine.
    CHECK_NOTHROW(server::session_config_from_json(
        nlohmann::json::parse(R"({"igtl_port": 0, "ws_port": 0})")));
}

TEST_CASE("assets load at startup or fail loudly") {
    auto cfg = small_config();
    cfg.brain_mesh_path = "/nonexistent/brain.stl";
    CHECK(code_of([&] { server::load_assets(cfg); }) == Errc::AssetLoadFailure);

    const auto dir = std::filesystem::temp_directory_path() / "tmsnav_assets_test";
    std::filesystem::create_directories(dir);
    io::write_stl_file(dir / "brain.stl", small_mesh());
    std::ofstream(dir / "fibers.json") << "[[[0,0,14],[0,0,20]]]";
    cfg.brain_mesh_path = (dir / "brain.stl").string();
    cfg.fibers_path = (dir / "fibers.json").string();
    const auto assets = server::load_assets(cfg);
    CHECK(assets.brain.vertices.size() == 4);
    REQUIRE(assets.fibers);
    CHECK(assets.fibers->polylines.size() == 1);

    std::ofstream(dir / "bad.json") << "[[1]]";
    cfg.fibers_path = (dir / "bad.json").string();
    CHECK(code_of([&] { server::load_assets(cfg); }) == Errc::AssetLoadFailure);
    std::filesystem::remove_all(dir);

    cfg = small_config();
    const auto synth = server::load_assets(cfg);
    CHECK(synth.brain.vertices.size() == 100002);
}

TEST_CASE("fiber values are streamed with each run") {
    auto cfg = small_config();
    Session session(cfg, std::make_unique<MockPredictor>(cfg.grid, 0ms),
                    server::SessionAssets{small_mesh(),
                                          vis::FiberBundle{{{Vec3(0, 0, 14), Vec3(0, 0, 20)}}}});
    std::string fibers;
    session.subscribe([&](const server::RunOutput& out) {
        REQUIRE(out.fiber_meta);
        fibers = *out.fiber_meta;
    });
    REQUIRE(session.wait_processed(session.submit_pose(translation_pose(Vec3(2, 0, 0))), 5s));
    const auto j = nlohmann::json::parse(fibers);
    CHECK(j["type"] == "fiber_field");
    CHECK(j["values"][0] == nlohmann::json::array({2.0, 2.0}));
}

TEST_CASE("overlay encoding is little-endian") {
    const std::vector<double> vals = {1.0, -2.5};
    const auto o = server::encode_overlay(0x01020304, vals);
    REQUIRE(o.size() == 12);
    CHECK(o[0] == 0x04);
    CHECK(o[3] == 0x01);
    CHECK(static_cast<std::uint8_t>(o[7]) == 0x3F);  // 1.0f = 0x3F800000
    CHECK(static_cast<std::uint8_t>(o[6]) == 0x80);
}

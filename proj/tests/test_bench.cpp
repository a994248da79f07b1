#include "support/generators.hpp"
#include "support/mock_predictor.hpp"
#include "tmsnav/bench.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>

using namespace tmsnav;
using namespace tmsnav::bench;
using namespace tmsnav::testing;
using namespace std::chrono_literals;

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

server::SessionConfig mock_config(const std::filesystem::path& mesh) {
    server::SessionConfig cfg;
    cfg.grid = small_grid();
    io::write_stl_file(mesh, small_mesh());
    cfg.brain_mesh_path = mesh.string();
    return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() /
           ("tmsnav_bench_" + std::to_string(::getpid()) + "_" + name);
}

double angle_z(const RigidPose& p) {
    const Mat3 r = p.rotation();
    return std::atan2(r(1, 0), r(0, 0));
}

}  // namespace

TEST_CASE("handle rotations step evenly about the coil normal") {
    const auto t = make_trajectory(HandleRotations{});
    REQUIRE(t.poses.size() == 78);
    const double step = 2.0 * std::numbers::pi / 78.0;
    for (std::size_t k = 0; k < t.poses.size(); ++k) {
        const auto& p = t.poses[k];
        CHECK(p.translation().norm() == 0.0);
        CHECK((p.rotation() * Vec3::UnitZ() - Vec3::UnitZ()).norm() < 1e-15);
        const RigidPose next = t.poses[(k + 1) % t.poses.size()];
        const double d = std::remainder(angle_z(next) - angle_z(p), 2.0 * std::numbers::pi);
        CHECK(std::abs(d - step) < 1e-12);
    }
    CHECK(make_trajectory(HandleRotations{1}).poses.front().is_identity());
    CHECK(code_of([] { make_trajectory(HandleRotations{0}); }) == Errc::InvalidScheme);
}

TEST_CASE("random trajectories are reproducible and stay in the box") {
    const auto a = make_trajectory(RandomPoses{7, 40, 10.0});
    const auto b = make_trajectory(RandomPoses{7, 40, 10.0});
    const auto c = make_trajectory(RandomPoses{8, 40, 10.0});
    REQUIRE(a.poses.size() == 40);
    CHECK(a.poses == b.poses);
    CHECK_FALSE(a.poses == c.poses);
    for (const auto& p : a.poses) {
        CHECK(p.translation().cwiseAbs().maxCoeff() <= 10.0);
        CHECK(orthonormality_residual(p.rotation()) < 1e-12);
        CHECK(p.rotation().determinant() > 0);
    }
}

TEST_CASE("random orientations are spread over SO(3)") {
    // The coil normal of a uniform rotation is uniform on the sphere, so its
    // z component is uniform on [-1, 1]: mean 0, variance 1/3.
    const auto t = make_trajectory(RandomPoses{11, 4000, 1.0});
    std::vector<double> zs;
    for (const auto& p : t.poses) zs.push_back((p.rotation() * Vec3::UnitZ()).z());
    const auto s = server::mean_std(zs);
    CHECK(std::abs(s.mean) < 0.05);
    CHECK(std::abs(s.std * s.std - 1.0 / 3.0) < 0.03);
}

TEST_CASE("trajectory specs") {
    CHECK(std::get<HandleRotations>(parse_trajectory_spec("handle")).count == 78);
    CHECK(std::get<HandleRotations>(parse_trajectory_spec("handle:12")).count == 12);
    const auto r = std::get<RandomPoses>(parse_trajectory_spec("random:5:9"));
    CHECK(r.seed == 5);
    CHECK(r.count == 9);

    const auto file = temp_path("poses.json");
    std::ofstream(file) << "[[1,0,0,1, 0,1,0,2, 0,0,1,3, 0,0,0,1],"
                           " [0,-1,0,0, 1,0,0,0, 0,0,1,0, 0,0,0,1]]";
    const auto f = make_trajectory(parse_trajectory_spec("fixed:" + file.string()));
    REQUIRE(f.poses.size() == 2);
    CHECK(f.poses[0].translation() == Vec3(1, 2, 3));
    CHECK(std::abs(angle_z(f.poses[1]) - std::numbers::pi / 2) < 1e-15);

    std::ofstream(file) << "[[2,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]]";
    CHECK(code_of([&] { parse_trajectory_spec("fixed:" + file.string()); }) == Errc::InvalidScheme);
    std::ofstream(file) << "[[1,2,3]]";
    CHECK(code_of([&] { parse_trajectory_spec("fixed:" + file.string()); }) == Errc::InvalidScheme);
    std::filesystem::remove(file);

    for (const char* bad : {"spiral:3", "handle:x", "handle:-1", "random:1", "random:a:2",
                            "fixed:", "fixed:/nonexistent/poses.json", ""}) {
        CHECK(code_of([&] { parse_trajectory_spec(bad); }) == Errc::InvalidScheme);
    }
}

TEST_CASE("bench measures exactly the requested runs") {
    const auto mesh = temp_path("mesh.stl");
    const auto cfg = mock_config(mesh);
    auto mock = std::make_unique<MockPredictor>(small_grid(), 2ms);
    BenchOptions opt;
    opt.hardware = "test rig";
    const auto rep = run_bench(cfg, make_trajectory(HandleRotations{}), opt, std::move(mock));
    std::filesystem::remove(mesh);

    CHECK(rep.complete);
    CHECK(rep.error.empty());
    REQUIRE(rep.runs.size() == 50);
    CHECK(rep.stats.count == 50);
    CHECK(rep.runs.back().run_id == 55);
    CHECK(rep.vertex_count == 4);
    CHECK(rep.grid_dims == GridDims{6, 5, 4});
    for (std::size_t i = 0; i < rep.runs.size(); ++i) {
        CHECK(rep.runs[i].run_id == 6 + i);
        CHECK(rep.runs[i].pose_seq == 6 + i);
        CHECK(rep.runs[i].source == "bench");
    }
    // Mock reports a constant duration, so compute spread is exactly zero.
    CHECK(rep.stats.compute.mean == 0.002);
    CHECK(rep.stats.compute.std == 0.0);

    std::vector<double> vis;
    for (const auto& r : rep.runs) vis.push_back(r.vis_s);
    double mean = 0;
    for (double v : vis) mean += v;
    mean /= double(vis.size());
    double var = 0;
    for (double v : vis) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / double(vis.size()));
    CHECK(std::abs(rep.stats.vis.mean - mean) <= 1e-12);
    CHECK(std::abs(rep.stats.vis.std - sd) <= 1e-12);
    CHECK(rep.stats.vis.mean > 0.0);
}

TEST_CASE("bench cycles through short trajectories in order") {
    const auto mesh = temp_path("mesh2.stl");
    const auto cfg = mock_config(mesh);
    std::vector<RigidPose> poses;
    for (int i = 1; i <= 3; ++i) poses.push_back(translation_pose(Vec3(i, 0, 0)));
    auto mock = std::make_unique<MockPredictor>(small_grid(), 0ms);
    BenchOptions opt;
    opt.runs = 5;
    opt.warmup = 2;
    opt.hardware = "x";
    const auto rep = run_bench(cfg, make_trajectory(FixedPoses{poses}), opt, std::move(mock));
    std::filesystem::remove(mesh);
    CHECK(rep.complete);
    REQUIRE(rep.runs.size() == 5);
    std::vector<double> xs;
    for (const auto& r : rep.runs) xs.push_back(r.pose.translation().x());
    // Two warm-ups consumed poses 1 and 2.
    CHECK(xs == std::vector<double>{3, 1, 2, 3, 1});
    CHECK(rep.runs.front().run_id == 3);
}

TEST_CASE("a failed run leaves the report incomplete") {
    const auto mesh = temp_path("mesh3.stl");
    const auto cfg = mock_config(mesh);
    auto mock = std::make_unique<MockPredictor>(small_grid(), 0ms);
    mock->fail_next();
    BenchOptions opt;
    opt.hardware = "x";
    const auto rep = run_bench(cfg, make_trajectory(HandleRotations{}), opt, std::move(mock));
    std::filesystem::remove(mesh);
    CHECK_FALSE(rep.complete);
    CHECK(rep.runs.empty());
    CHECK(rep.error.find("run 1 failed") != std::string::npos);
    const BenchReport reps[] = {rep};
    CHECK(render_report(reps, ReportFormat::Markdown).find("INCOMPLETE") != std::string::npos);
}

TEST_CASE("mean and std formatting") {
    CHECK(format_mean_std({0.04028, 0.00565}) == "0.04028±0.00565");
    CHECK(format_mean_std({1.0, 0.0}) == "1.00000±0.00000");
    CHECK(format_mean_std({0.000004, 0.000006}) == "0.00000±0.00001");
}

TEST_CASE("report rows carry the same numbers in both formats") {
    BenchReport r;
    r.subject = "synthetic-head";
    r.hardware = "Xeon, 8 threads";
    r.backend = "analytic";
    r.grid_dims = {70, 90, 50};
    r.vertex_count = 100002;
    r.runs.resize(50);
    r.complete = true;
    r.stats.count = 50;
    r.stats.compute = {0.04028, 0.00565};
    r.stats.vis = {0.00794, 0.00031};
    const BenchReport reps[] = {r};

    const auto md = render_report(reps, ReportFormat::Markdown);
    const auto csv = render_report(reps, ReportFormat::Csv);
    CHECK(md ==
          "| Subject | Hardware | Backend | Grid | Vertices | Runs | CNN Mean[s]±std | "
          "Vis. Mean[s]±std |\n"
          "|---|---|---|---|---|---|---|---|\n"
          "| synthetic-head | Xeon, 8 threads | analytic | 70x90x50 | 100002 | 50 | "
          "0.04028±0.00565 | 0.00794±0.00031 |\n");
    CHECK(csv ==
          "Subject,Hardware,Backend,Grid,Vertices,Runs,CNN Mean[s]±std,Vis. Mean[s]±std\n"
          "synthetic-head,\"Xeon, 8 threads\",analytic,70x90x50,100002,50,0.04028±0.00565,"
          "0.00794±0.00031\n");

    BenchReport s = r;
    s.subject = "a|b";
    s.stats.compute = {1, 2};
    const BenchReport two[] = {r, s};
    const auto md2 = render_report(two, ReportFormat::Markdown);
    CHECK(md2.find("a\\|b") != std::string::npos);
    CHECK(std::count(md2.begin(), md2.end(), '\n') == 4);
}

TEST_CASE("per-run CSV") {
    BenchReport r;
    server::RunTiming t;
    t.run_id = 6;
    t.pose_seq = 9;
    t.compute_s = 0.125;
    t.vis_s = 0.5;
    r.runs = {t};
    CHECK(render_runs_csv(r) == "run_id,pose_seq,compute_s,vis_s\n6,9,0.125,0.5\n");
    CHECK(parse_report_format("csv") == ReportFormat::Csv);
    CHECK(parse_report_format("markdown") == ReportFormat::Markdown);
    CHECK(code_of([] { parse_report_format("xml"); }) == Errc::InvalidConfig);
    CHECK_FALSE(detect_hardware_label().empty());
}

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "support/generators.hpp"
#include "support/mock_predictor.hpp"
#include "support/tcp_client.hpp"
#include "tmsnav/bench.hpp"
#include "tmsnav/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

using namespace tmsnav;
using namespace tmsnav::testing;
using namespace std::chrono_literals;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

/// Collects failures without stopping at the first one.
struct Checker {
    Outcome out;
    std::ostringstream notes;
    void expect(bool ok, const std::string& what) {
        if (!ok) {
            out.pass = false;
            notes << "[failed: " << what << "] ";
        }
    }
    Outcome done() {
        out.detail = notes.str() + out.detail;
        return out;
    }
};

std::uint64_t crc64_bitwise(std::span<const std::uint8_t> bytes) {
    std::uint64_t crc = 0;
    for (std::uint8_t b : bytes) {
        for (int bit = 7; bit >= 0; --bit) {
            const bool in = (b >> bit) & 1u;
            const bool top = crc >> 63;
            crc <<= 1;
            if (in != top) crc ^= 0x42F0E1EBA9EA3693ULL;
        }
    }
    return crc;
}

double f32(double v) { return double(float(v)); }

Vec3 f32(const Vec3& v) { return Vec3(f32(v.x()), f32(v.y()), f32(v.z())); }

// ---------------------------------------------------------------------------

Outcome protocol_conformance() {
    Checker c;
    Rng rng(9001);

    std::size_t transform_bad = 0;
    std::size_t image_bad = 0;
    for (int n = 0; n < 10000; ++n) {
        const auto pose = random_pose(rng, 200.0);
        igtl::MemoryStream s;
        igtl::write_message(s, igtl::MessageType::Transform, "CoilPose", igtl::encode_transform(pose),
                            rng());
        const auto msg = igtl::read_message(s);
        const auto& back = std::get<RigidPose>(msg->body);
        // Every wire entry is the float32 of the source entry; ingestion then
        // re-projects the rotation onto SO(3), which moves it by < 1e-6.
        for (int r = 0; r < 3; ++r) {
            for (int col = 0; col < 4; ++col) {
                const double src = pose.matrix()(r, col);
                const double got = back.matrix()(r, col);
                if (std::abs(got - f32(src)) > 1e-6 * std::max(1.0, std::abs(src))) ++transform_bad;
            }
        }
        if (s.pending() != 0) ++transform_bad;
    }
    for (int n = 0; n < 10000; ++n) {
        const GridDims d{uniform_index(rng, 1, 5), uniform_index(rng, 1, 5), uniform_index(rng, 1, 5)};
        const GridSpec g = random_grid(rng, d);
        igtl::MemoryStream s;
        if (n % 2) {
            const auto f = random_vector_field(rng, g);
            igtl::write_message(s, igtl::MessageType::Image, "EField", igtl::encode_image(f), rng());
            const auto back = std::get<VectorField>(igtl::read_message(s)->body);
            if (!same_lattice(back.grid(), g, 1e-5)) ++image_bad;
            for (std::size_t i = 0; i < f.data().size(); ++i) {
                if (back.data()[i] != f32(f.data()[i])) ++image_bad;
            }
        } else {
            const auto f = random_scalar_field(rng, g);
            igtl::write_message(s, igtl::MessageType::Image, "EField", igtl::encode_image(f), rng());
            const auto back = std::get<ScalarField>(igtl::read_message(s)->body);
            if (!same_lattice(back.grid(), g, 1e-5)) ++image_bad;
            for (std::size_t i = 0; i < f.data().size(); ++i) {
                if (back.data()[i] != f32(f.data()[i])) ++image_bad;
            }
        }
    }
    c.expect(transform_bad == 0, std::to_string(transform_bad) + " TRANSFORM mismatches");
    c.expect(image_bad == 0, std::to_string(image_bad) + " IMAGE mismatches");

    const GridSpec small({3, 2, 2}, Vec3::Ones(), Vec3::Zero());
    const auto seed_img = igtl::frame_message(
        igtl::MessageType::Image, "EField",
        igtl::encode_image(ScalarField(small, std::vector<double>(12, 2.0))), 0);
    const auto seed_tf =
        igtl::frame_message(igtl::MessageType::Transform, "CoilPose", igtl::encode_transform({}), 0);
    const auto cube = io::write_stl(io::SurfaceMesh{
        {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}, {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}}, {}});
    const auto nii = io::write_nifti(io::NiftiVolume{ScalarField(small, std::vector<double>(12, 1.0))});
    std::size_t untyped = 0;
    std::string first_untyped;
    for (int n = 0; n < 100000; ++n) {
        igtl::Bytes in;
        switch (n % 6) {
            case 0: in = random_bytes(rng, uniform_index(rng, 0, 256)); break;
            case 1: in = seed_img; break;
            case 2: in = seed_tf; break;
            case 3: in = cube; break;
            case 4: in = nii; break;
            default: in = random_bytes(rng, uniform_index(rng, 40, 60)); break;
        }
        if (n % 6 >= 1 && n % 6 <= 4) {
            const int edits = int(uniform_index(rng, 1, 6));
            for (int e = 0; e < edits; ++e) in[uniform_index(rng, 0, in.size() - 1)] = std::uint8_t(rng());
            if (rng() % 3 == 0) in.resize(uniform_index(rng, 0, in.size()));
        }
        // Decoders may succeed on lucky inputs; they must never throw anything untyped.
        auto guard = [&](const std::function<void()>& fn) {
            try {
                fn();
            } catch (const Error&) {
            } catch (const std::exception& e) {
                if (untyped++ == 0) first_untyped = e.what();
            }
        };
        guard([&] { igtl::decode_header(in); });
        guard([&] { igtl::decode_transform(in); });
        guard([&] { igtl::decode_image(in); });
        if (in.size() >= igtl::kHeaderSize) {
            guard([&] {
                const auto h = igtl::decode_header(in);
                igtl::decode_message(h, std::span(in).subspan(igtl::kHeaderSize));
            });
        }
        guard([&] {
            igtl::MemoryStream s;
            s.write(in);
            for (int k = 0; k < 8; ++k) {
                try {
                    if (!igtl::read_message(s)) break;
                } catch (const Error& e) {
                    if (e.code() != Errc::CrcMismatch && e.code() != Errc::UnknownType) throw;
                }
            }
        });
        guard([&] { io::read_stl(in); });
        guard([&] { io::read_nifti(in); });
    }
    c.expect(untyped == 0, std::to_string(untyped) + " untyped exceptions, first: " + first_untyped);

    std::size_t crc_bad = igtl::crc64({}) == 0 ? 0 : 1;
    for (int n = 0; n < 10000; ++n) {
        const auto b = random_bytes(rng, uniform_index(rng, 0, 4096));
        if (igtl::crc64(b) != crc64_bitwise(b)) ++crc_bad;
    }
    c.expect(crc_bad == 0, std::to_string(crc_bad) + " CRC mismatches");
    c.out.detail = "1e4 TRANSFORM + 1e4 IMAGE round trips, 1e5 fuzz inputs, 1e4 CRC cases";
    return c.done();
}

Outcome physics_oracle() {
    Checker c;
    const CoilParams params;  // 64 segments per wing
    const GridSpec grid({35, 45, 25}, Vec3::Constant(4.0), Vec3(-68, -88, 10));
    const auto coil = build_figure8(params);
    const auto poses = bench::make_trajectory(bench::RandomPoses{2024, 5, 10.0}).poses;
    std::ostringstream ne_list;
    double worst = 0.0;
    for (const auto& pose : poses) {
        std::vector<Vec3> elements;
        for (const auto& e : coil.elements) elements.push_back(pose.apply(e.position_mm));
        std::vector<std::size_t> keep;
        std::vector<Vec3> points;
        for (std::size_t k = 0; k < grid.dims()[2]; ++k)
            for (std::size_t j = 0; j < grid.dims()[1]; ++j)
                for (std::size_t i = 0; i < grid.dims()[0]; ++i) {
                    const Vec3 p = ijk_to_world(grid, Vec3(double(i), double(j), double(k)));
                    bool far = true;
                    for (const Vec3& e : elements) {
                        if ((p - e).norm() <= params.wing_radius_mm) {
                            far = false;
                            break;
                        }
                    }
                    if (far) {
                        keep.push_back(grid.index(i, j, k));
                        points.push_back(p);
                    }
                }
        const auto dipole = compute_dadt(coil, pose, grid);
        const auto ref = oracle_dadt(params, pose, points, 1024);
        double num = 0.0;
        double den = 0.0;
        for (std::size_t n = 0; n < keep.size(); ++n) {
            num += (dipole.data()[keep[n]] - ref[n]).squaredNorm();
            den += ref[n].squaredNorm();
        }
        const double ne = std::sqrt(num / den);
        worst = std::max(worst, ne);
        ne_list << (ne_list.tellp() > 0 ? ", " : "") << ne;
        c.expect(keep.size() > grid.voxel_count() / 2, "too few voxels kept");
    }
    c.expect(worst < 0.05, "NE bound");
    c.out.detail = "NE per pose: " + ne_list.str() + " (bound 0.05)";
    return c.done();
}

Outcome vector_transform() {
    Checker c;
    Rng rng(9003);
    double worst_norm = 0.0;
    double worst_comp = 0.0;
    bool identity_exact = true;
    for (int n = 0; n < 1000; ++n) {
        const auto f = random_vector_field(rng, random_grid(rng, {8, 8, 8}));
        const auto a = random_pose(rng);
        const auto b = random_pose(rng);
        const auto fa = transform_vector_field(f, a);
        for (std::size_t i = 0; i < f.data().size(); ++i) {
            const double n0 = f.data()[i].norm();
            worst_norm = std::max(worst_norm, std::abs(fa.data()[i].norm() - n0) / n0);
        }
        const auto twice = transform_vector_field(fa, b);
        const auto once = transform_vector_field(f, compose(b, a));
        for (std::size_t i = 0; i < f.data().size(); ++i) {
            worst_comp = std::max(worst_comp, rel_diff(twice.data()[i], once.data()[i]));
        }
        const auto& gt = twice.grid();
        const auto& go = once.grid();
        worst_comp = std::max(worst_comp, (gt.origin() - go.origin()).norm() / std::max(1.0, go.origin().norm()));
        worst_comp = std::max(worst_comp, (gt.axes() - go.axes()).cwiseAbs().maxCoeff());
        const auto same = transform_vector_field(f, RigidPose{});
        identity_exact = identity_exact && same.grid() == f.grid() && same.data() == f.data();
    }
    c.expect(worst_norm <= 1e-9, "norm preservation");
    c.expect(worst_comp <= 1e-9, "composition");
    c.expect(identity_exact, "identity no-op");
    std::ostringstream d;
    d << "1000 cases, max norm drift " << worst_norm << ", max composition gap " << worst_comp
      << ", identity bit-exact " << (identity_exact ? "yes" : "no");
    c.out.detail = d.str();
    return c.done();
}

Outcome trilinear() {
    Checker c;
    Rng rng(9004);
    const GridSpec g = random_grid(rng, {9, 7, 11});
    const Vec3 slope(0.7, -1.3, 2.1);
    const double offset = 1000.0;
    auto affine = [&](const Vec3& ijk) { return offset + slope.dot(ijk); };
    std::vector<double> vals(g.voxel_count());
    for (std::size_t k = 0; k < 11; ++k)
        for (std::size_t j = 0; j < 7; ++j)
            for (std::size_t i = 0; i < 9; ++i) vals[g.index(i, j, k)] = affine(Vec3(double(i), double(j), double(k)));
    const ScalarField f(g, vals);
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
        const Vec3 ijk(uniform(rng, 0, 8), uniform(rng, 0, 6), uniform(rng, 0, 10));
        const double got = vis::sample_trilinear(f, ijk_to_world(g, ijk));
        worst = std::max(worst, std::abs(got - affine(ijk)) / affine(ijk));
    }
    c.expect(worst <= 1e-12, "affine exactness");

    bool oob_zero = true;
    for (int n = 0; n < 1000; ++n) {
        Vec3 ijk(uniform(rng, 0, 8), uniform(rng, 0, 6), uniform(rng, 0, 10));
        const int axis = int(n % 3);
        const double hi = double(g.dims()[std::size_t(axis)] - 1);
        ijk[axis] = (n % 2) ? hi + uniform(rng, 0.01, 5.0) : -uniform(rng, 0.01, 5.0);
        oob_zero = oob_zero && vis::sample_trilinear(f, ijk_to_world(g, ijk)) == 0.0;
    }
    c.expect(oob_zero, "out of bounds reads 0");

    double worst_corner = 0.0;
    for (int n = 0; n < 200; ++n) {
        const auto r = random_scalar_field(rng, random_grid(rng, {4, 5, 3}));
        const auto& rg = r.grid();
        const Vec3 ijk(uniform(rng, 0, 3), uniform(rng, 0, 4), uniform(rng, 0, 2));
        const auto i0 = std::min<std::size_t>(std::size_t(ijk.x()), 2);
        const auto j0 = std::min<std::size_t>(std::size_t(ijk.y()), 3);
        const auto k0 = std::min<std::size_t>(std::size_t(ijk.z()), 1);
        const double fx = ijk.x() - double(i0), fy = ijk.y() - double(j0), fz = ijk.z() - double(k0);
        double ref = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
            const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
            const double w = (di ? fx : 1 - fx) * (dj ? fy : 1 - fy) * (dk ? fz : 1 - fz);
            ref += w * r.data()[rg.index(i0 + di, j0 + dj, k0 + dk)];
        }
        const double got = vis::sample_trilinear(r, ijk_to_world(rg, ijk));
        worst_corner = std::max(worst_corner, std::abs(got - ref) / std::max(1.0, std::abs(ref)));
    }
    c.expect(worst_corner <= 1e-12, "8-corner oracle");
    std::ostringstream d;
    d << "affine max rel err " << worst << ", 8-corner max err " << worst_corner
      << ", out-of-bounds zero " << (oob_zero ? "yes" : "no");
    c.out.detail = d.str();
    return c.done();
}

Outcome latency_budget() {
    Checker c;
    server::SessionConfig cfg;  // analytic backend, default grid, synthetic head
    bench::BenchOptions opt;
    opt.runs = 50;
    opt.warmup = 5;
    const auto rep = bench::run_bench(cfg, bench::make_trajectory(bench::HandleRotations{78}), opt);
    c.expect(rep.complete, "bench incomplete: " + rep.error);
    c.expect(rep.grid_dims == GridDims{70, 90, 50}, "grid dims");
    c.expect(rep.vertex_count >= 100000, "mesh size");
    double total = 0.0;
    for (const auto& r : rep.runs) total += r.compute_s + r.vis_s;
    total /= double(std::max<std::size_t>(1, rep.runs.size()));
    c.expect(total < 0.2, "mean compute+vis < 0.2 s");
    c.expect(rep.stats.vis.mean < 0.1, "mean vis < 0.1 s");
    const bench::BenchReport reps[] = {rep};
    std::ostringstream d;
    d << "mean compute+vis " << total << " s\n" << bench::render_report(reps, bench::ReportFormat::Markdown);
    c.out.detail = d.str();
    return c.done();
}

Outcome live_loop() {
    Checker c;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("tmsnav_accept_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    server::SessionConfig cfg;
    cfg.grid = small_grid();
    cfg.igtl_port = 0;
    cfg.ws_port = 0;
    io::write_stl_file(dir / "brain.stl", small_mesh());
    cfg.brain_mesh_path = (dir / "brain.stl").string();

    std::size_t runs = 0;
    {
        auto svc = server::Service::start(cfg, std::make_unique<MockPredictor>(cfg.grid, 100ms));
        TcpClient client(svc->igtl_port());
        for (int n = 1; n <= 20; ++n) {
            auto frame = igtl::frame_message(igtl::MessageType::Transform, "CoilPose",
                                             igtl::encode_transform(translation_pose(Vec3(n, 0, 0))), 0);
            if (n == 10) {
                auto bad = frame;
                bad[igtl::kHeaderSize + 5] ^= 0x01;  // body no longer matches its CRC
                client.send(bad);
            }
            client.send(frame);
            std::this_thread::sleep_for(10ms);
        }
        auto& session = svc->session();
        // 20 poses arrive over ~200 ms; give the last pending run time to finish.
        std::this_thread::sleep_for(50ms);
        c.expect(session.wait_idle(5000ms), "session idle");
        const auto log = session.timings();
        runs = log.size();
        c.expect(runs >= 2 && runs <= 20, "run count in [2, 20]");
        c.expect(!log.empty() && log.back().pose.translation().x() == 20.0, "final pose processed");
        bool increasing = true;
        for (std::size_t i = 1; i < log.size(); ++i) increasing = increasing && log[i].run_id > log[i - 1].run_id;
        c.expect(increasing, "run ids strictly increasing");
        c.expect(session.failed_runs() == 0, "no failed runs");

        std::size_t images = 0;
        double last_value = -1.0;
        while (images < runs && client.readable(1000ms)) {
            const auto msg = client.read_message();
            if (!msg) break;
            last_value = std::get<ScalarField>(msg->body).data().front();
            ++images;
        }
        c.expect(images == runs, "one IMAGE per run");
        c.expect(last_value == 20.0, "last IMAGE carries the final pose");
    }
    std::filesystem::remove_all(dir);
    c.out.detail = std::to_string(runs) + " runs for 20 poses with a corrupted frame mid-stream";
    return c.done();
}

Outcome io_round_trips() {
    Checker c;
    Rng rng(9007);
    std::size_t grid_bad = 0;
    std::size_t payload_bad = 0;
    for (int n = 0; n < 50; ++n) {
        // Geometry that float32 holds exactly survives unchanged.
        const Vec3 spacing = f32(Vec3(uniform(rng, 0.5, 3), uniform(rng, 0.5, 3), uniform(rng, 0.5, 3)));
        const Vec3 origin = f32(random_vec(rng, 100.0));
        const Mat3 axes = n % 2 ? Mat3::Identity() : Mat3(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()));
        const GridSpec g({uniform_index(rng, 1, 9), uniform_index(rng, 1, 9), uniform_index(rng, 1, 9)},
                         spacing, origin, axes.array().round().matrix());
        std::vector<double> vals(g.voxel_count());
        for (auto& v : vals) v = f32(uniform(rng, 0, 500));
        const auto back = io::read_nifti(io::write_nifti(io::NiftiVolume{ScalarField(g, vals)}));
        const auto& bf = std::get<ScalarField>(back.data);
        if (!(bf.grid() == g)) ++grid_bad;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            std::uint64_t a = 0, b = 0;
            std::memcpy(&a, &vals[i], 8);
            std::memcpy(&b, &bf.data()[i], 8);
            if (a != b) ++payload_bad;
        }
        // Oblique grids come back as the float32 lattice.
        const GridSpec o = random_grid(rng, g.dims());
        const auto ob = io::read_nifti(io::write_nifti(io::NiftiVolume{ScalarField(o, vals)}));
        if (!same_lattice(std::get<ScalarField>(ob.data).grid(), o, 1e-6)) ++grid_bad;
    }
    c.expect(grid_bad == 0, std::to_string(grid_bad) + " grid mismatches");
    c.expect(payload_bad == 0, std::to_string(payload_bad) + " payload mismatches");

    // Binary STL cube written facet by facet: 36 corner records.
    const Vec3 corners[8] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                             {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
    const int faces[12][3] = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                              {1, 2, 6}, {1, 6, 5}, {2, 3, 7}, {2, 7, 6}, {3, 0, 4}, {3, 4, 7}};
    io::Bytes stl(80, 0);
    auto put_u32 = [&](std::uint32_t v) {
        for (int b = 0; b < 4; ++b) stl.push_back(std::uint8_t(v >> (8 * b)));
    };
    auto put_f = [&](float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        put_u32(u);
    };
    put_u32(12);
    for (const auto& f : faces) {
        for (int k = 0; k < 3; ++k) put_f(0.0f);
        for (int v : f)
            for (int k = 0; k < 3; ++k) put_f(float(corners[v][k]));
        stl.push_back(0);
        stl.push_back(0);
    }
    const auto mesh = io::read_stl(stl);
    c.expect(mesh.vertices.size() == 8, "cube vertices");
    c.expect(mesh.triangles.size() == 12, "cube triangles");

    const GridSpec full({70, 90, 50}, Vec3::Constant(2.0), Vec3(-69, -89, 10));
    const auto bytes = io::write_nifti(io::NiftiVolume{ScalarField(full, std::vector<double>(full.voxel_count(), 1.5))});
    const std::size_t data_bytes = bytes.size() - std::size_t(io::nifti::kVoxOffset);
    c.expect(data_bytes == 1260000, "data section size");

    std::ostringstream d;
    d << "100 NIfTI round trips, STL cube " << mesh.vertices.size() << "/" << mesh.triangles.size()
      << ", 70x90x50 data section " << data_bytes << " bytes";
    c.out.detail = d.str();
    return c.done();
}

}  // namespace

int main() {
    const std::pair<const char*, Outcome (*)()> criteria[] = {
        {"protocol conformance", protocol_conformance},
        {"physics oracle equivalence", physics_oracle},
        {"rigid vector-field transform", vector_transform},
        {"trilinear exactness", trilinear},
        {"latency budget", latency_budget},
        {"live-loop contract", live_loop},
        {"I/O round trips", io_round_trips},
    };
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s  %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", name, secs, o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}

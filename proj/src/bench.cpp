#include "tmsnav/bench.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace tmsnav::bench {
namespace {

// Shoemake's subgroup algorithm: three uniforms to a uniform unit quaternion.
Mat3 uniform_rotation(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double u1 = u(rng);
    const double u2 = u(rng);
    const double u3 = u(rng);
    const double a = std::sqrt(1.0 - u1);
    const double b = std::sqrt(u1);
    const double tau = 2.0 * std::numbers::pi;
    const Eigen::Quaterniond q(b * std::cos(tau * u3), a * std::sin(tau * u2),
                               a * std::cos(tau * u2), b * std::sin(tau * u3));
    return q.normalized().toRotationMatrix();
}

std::vector<RigidPose> read_pose_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(Errc::InvalidScheme, "cannot open pose list " + path);
    }
    std::vector<RigidPose> poses;
    try {
        const auto j = nlohmann::json::parse(in);
        for (const auto& m : j) {
            if (!m.is_array() || m.size() != 16) {
                throw Error(Errc::InvalidScheme, "each pose needs 16 numbers");
            }
            Mat4 mat;
            for (int i = 0; i < 16; ++i) {
                mat(i / 4, i % 4) = m[i].get<double>();
            }
            poses.push_back(RigidPose::from_matrix(mat));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidScheme, e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::InvalidScheme) {
            throw;
        }
        throw Error(Errc::InvalidScheme, e.what());
    }
    return poses;
}

std::size_t parse_count(const std::string& text, const std::string& spec) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty() || text.front() == '-') {
        throw Error(Errc::InvalidScheme, "bad number in trajectory '" + spec + "'");
    }
    return static_cast<std::size_t>(v);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string md_field(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += '\\';
        out += c;
    }
    return out;
}

}  // namespace

Trajectory make_trajectory(const TrajectoryScheme& scheme) {
    Trajectory t;
    if (const auto* h = std::get_if<HandleRotations>(&scheme)) {
        if (h->count == 0) {
            throw Error(Errc::InvalidScheme, "handle trajectory needs at least one pose");
        }
        for (std::size_t k = 0; k < h->count; ++k) {
            t.poses.push_back(rotation_z_pose(2.0 * std::numbers::pi * double(k) / double(h->count)));
        }
        t.label = "handle:" + std::to_string(h->count);
    } else if (const auto* r = std::get_if<RandomPoses>(&scheme)) {
        if (r->count == 0 || !(r->half_extent_mm >= 0.0)) {
            throw Error(Errc::InvalidScheme, "random trajectory needs count >= 1 and a box");
        }
        std::mt19937_64 rng(r->seed);
        std::uniform_real_distribution<double> box(-r->half_extent_mm, r->half_extent_mm);
        for (std::size_t k = 0; k < r->count; ++k) {
            const Mat3 rot = uniform_rotation(rng);
            const Vec3 tr(box(rng), box(rng), box(rng));
            t.poses.push_back(make_pose(rot, tr));
        }
        t.label = "random:" + std::to_string(r->seed) + ":" + std::to_string(r->count);
    } else {
        const auto& f = std::get<FixedPoses>(scheme);
        if (f.poses.empty()) {
            throw Error(Errc::InvalidScheme, "fixed trajectory is empty");
        }
        t.poses = f.poses;
        t.label = "fixed:" + std::to_string(f.poses.size());
    }
    return t;
}

TrajectoryScheme parse_trajectory_spec(const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "handle") {
        return HandleRotations{rest.empty() ? 78 : parse_count(rest, spec)};
    }
    if (kind == "random") {
        const auto c2 = rest.find(':');
        if (c2 == std::string::npos) {
            throw Error(Errc::InvalidScheme, "random trajectory is random:SEED:N");
        }
        RandomPoses r;
        r.seed = parse_count(rest.substr(0, c2), spec);
        r.count = parse_count(rest.substr(c2 + 1), spec);
        return r;
    }
    if (kind == "fixed" && !rest.empty()) {
        return FixedPoses{read_pose_list(rest)};
    }
    throw Error(Errc::InvalidScheme, "unknown trajectory '" + spec + "'");
}

BenchReport run_bench(const server::SessionConfig& cfg, const Trajectory& trajectory,
                      const BenchOptions& options, std::unique_ptr<Predictor> predictor) {
    if (trajectory.poses.empty()) {
        throw Error(Errc::InvalidScheme, "trajectory is empty");
    }
    if (options.runs == 0) {
        throw Error(Errc::InvalidConfig, "bench needs at least one run");
    }
    BenchReport rep;
    rep.subject = options.subject;
    rep.hardware = options.hardware.empty() ? detect_hardware_label() : options.hardware;
    rep.backend = std::string(server::to_string(cfg.backend));
    rep.grid_dims = cfg.grid.dims();
    rep.requested_runs = options.runs;
    rep.warmup = options.warmup;

    if (!predictor) {
        predictor = server::make_predictor(cfg);
    }
    server::Session session(cfg, std::move(predictor), server::load_assets(cfg));
    rep.vertex_count = session.assets().brain.vertices.size();

    const std::size_t total = options.warmup + options.runs;
    for (std::size_t g = 0; g < total; ++g) {
        const auto& pose = trajectory.poses[g % trajectory.poses.size()];
        const std::size_t failed_before = session.failed_runs();
        const auto seq = session.submit_pose(pose, "bench");
        if (!session.wait_processed(seq, options.run_timeout)) {
            rep.error = "run " + std::to_string(g + 1) + " did not finish in time";
            break;
        }
        if (session.failed_runs() != failed_before) {
            rep.error = "run " + std::to_string(g + 1) +
                        " failed: " + session.last_error().value_or("unknown error");
            break;
        }
    }
    session.stop();

    auto log = session.timings();
    if (log.size() > options.warmup) {
        rep.runs.assign(log.begin() + static_cast<std::ptrdiff_t>(options.warmup), log.end());
    }
    rep.stats = server::stage_stats(rep.runs, rep.runs.size());
    rep.complete = rep.error.empty() && rep.runs.size() == options.runs;
    if (!rep.complete && rep.error.empty()) {
        rep.error = "expected " + std::to_string(options.runs) + " runs, got " +
                    std::to_string(rep.runs.size());
    }
    return rep;
}

std::string format_mean_std(const server::MeanStd& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.5f±%.5f", s.mean, s.std);
    return buf;
}

std::string render_report(std::span<const BenchReport> reports, ReportFormat format) {
    const std::vector<std::string> header = {"Subject", "Hardware", "Backend", "Grid", "Vertices",
                                             "Runs", "CNN Mean[s]±std",
                                             "Vis. Mean[s]±std"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : reports) {
        const auto& d = r.grid_dims;
        std::string runs = std::to_string(r.runs.size());
        if (!r.complete) {
            runs += " (INCOMPLETE: " + r.error + ")";
        }
        rows.push_back({r.subject, r.hardware, r.backend,
                        std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" +
                            std::to_string(d[2]),
                        std::to_string(r.vertex_count), runs, format_mean_std(r.stats.compute),
                        format_mean_std(r.stats.vis)});
    }
    std::ostringstream out;
    if (format == ReportFormat::Markdown) {
        auto line = [&](const std::vector<std::string>& cells) {
            out << '|';
            for (const auto& c : cells) out << ' ' << md_field(c) << " |";
            out << '\n';
        };
        line(header);
        out << '|';
        for (std::size_t i = 0; i < header.size(); ++i) out << "---|";
        out << '\n';
        for (const auto& r : rows) line(r);
    } else {
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                out << (i ? "," : "") << csv_field(cells[i]);
            }
            out << '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
    }
    return out.str();
}

std::string render_runs_csv(const BenchReport& report) {
    std::ostringstream out;
    out.precision(9);
    out << "run_id,pose_seq,compute_s,vis_s\n";
    for (const auto& r : report.runs) {
        out << r.run_id << ',' << r.pose_seq << ',' << r.compute_s << ',' << r.vis_s << '\n';
    }
    return out.str();
}

std::string detect_hardware_label() {
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    std::string model = "unknown CPU";
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) {
                model = line.substr(line.find_first_not_of(' ', colon + 1));
            }
            break;
        }
    }
    return model + " (" + std::to_string(std::max(1u, std::thread::hardware_concurrency())) +
           " threads)";
}

ReportFormat parse_report_format(const std::string& name) {
    if (name == "markdown" || name == "md") return ReportFormat::Markdown;
    if (name == "csv") return ReportFormat::Csv;
    throw Error(Errc::InvalidConfig, "report format must be markdown or csv");
}

}  // namespace tmsnav::bench

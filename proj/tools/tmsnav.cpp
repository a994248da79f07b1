// tmsnav: navigation back end, benchmark driver and asset helpers.

#include "tmsnav/bench.hpp"
#include "tmsnav/model_server.hpp"
#include "tmsnav/service.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

void wait_for_signal() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
}

tmsnav::server::SessionConfig load_or_default(const std::string& path) {
    return path.empty() ? tmsnav::server::SessionConfig{}
                        : tmsnav::server::load_session_config(path);
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) {
        throw tmsnav::Error(tmsnav::Errc::Io, "cannot write " + path);
    }
}

}  // namespace

int main(int argc, char** argv) {
    using namespace tmsnav;
    CLI::App app{"TMS navigation back end"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the IGTL and UI servers");
    std::string serve_config;
    std::optional<int> igtl_port;
    std::optional<int> ws_port;
    std::optional<std::string> backend;
    std::optional<std::string> remote_endpoint;
    serve->add_option("--config", serve_config, "Session config JSON");
    serve->add_option("--igtl-port", igtl_port, "IGTL listen port");
    serve->add_option("--ws-port", ws_port, "HTTP/WebSocket listen port");
    serve->add_option("--backend", backend, "analytic or remote")
        ->check(CLI::IsMember({"analytic", "remote"}));
    serve->add_option("--remote-endpoint", remote_endpoint, "host:port of the model server");

    // bench run
    auto* bench_cmd = app.add_subcommand("bench", "Latency benchmark");
    bench_cmd->require_subcommand(1);
    auto* bench_run = bench_cmd->add_subcommand("run", "Run the benchmark and print a report");
    std::vector<std::string> bench_configs;
    std::string trajectory = "handle:78";
    bench::BenchOptions bopt;
    std::string format = "markdown";
    std::string out_path;
    std::string runs_csv;
    bench_run->add_option("--config", bench_configs, "Session config JSON (repeat for rows)");
    bench_run->add_option("--trajectory", trajectory, "handle:N, random:SEED:N or fixed:PATH");
    bench_run->add_option("--runs", bopt.runs, "Measured runs")->check(CLI::PositiveNumber);
    bench_run->add_option("--warmup", bopt.warmup, "Unrecorded warm-up runs");
    bench_run->add_option("--subject", bopt.subject, "Subject label");
    bench_run->add_option("--hardware", bopt.hardware, "Hardware label (default: detected)");
    bench_run->add_option("--format", format, "markdown or csv")
        ->check(CLI::IsMember({"markdown", "md", "csv"}));
    bench_run->add_option("--out", out_path, "Report file (default stdout)");
    bench_run->add_option("--runs-csv", runs_csv, "Per-run timings CSV");

    // model-server
    auto* model = app.add_subcommand("model-server", "Serve the analytic field model over IGTL");
    std::string model_config;
    server::ModelServerOptions mopt;
    mopt.port = 18945;
    model->add_option("--config", model_config, "Session config JSON (grid and coil)");
    model->add_option("--port", mopt.port, "Listen port");
    model->add_option("--bind", mopt.bind_address, "Listen address");

    // export-head
    auto* head = app.add_subcommand("export-head", "Write the synthetic head mesh as binary STL");
    std::string head_out;
    head->add_option("--out", head_out, "Output STL path")->required();

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (*serve) {
            auto cfg = load_or_default(serve_config);
            if (igtl_port) cfg.igtl_port = *igtl_port;
            if (ws_port) cfg.ws_port = *ws_port;
            if (backend) cfg.backend = *backend == "remote" ? server::Backend::Remote
                                                            : server::Backend::Analytic;
            if (remote_endpoint) cfg.remote_endpoint = server::parse_endpoint(*remote_endpoint);
            cfg.validate();
            auto svc = server::Service::start(cfg);
            std::cout << "igtl_port=" << svc->igtl_port() << " ws_port=" << svc->ws_port()
                      << std::endl;
            wait_for_signal();
            svc->stop();
            const auto s = svc->session().stats();
            std::cout << "runs=" << svc->session().timings().size()
                      << " compute=" << bench::format_mean_std(s.compute)
                      << " vis=" << bench::format_mean_std(s.vis) << std::endl;
            return 0;
        }
        if (*bench_run) {
            if (bench_configs.empty()) bench_configs.emplace_back();
            const auto traj = bench::make_trajectory(bench::parse_trajectory_spec(trajectory));
            std::vector<bench::BenchReport> reports;
            bool complete = true;
            for (const auto& path : bench_configs) {
                reports.push_back(bench::run_bench(load_or_default(path), traj, bopt));
                complete = complete && reports.back().complete;
                if (!reports.back().complete) {
                    spdlog::error("bench incomplete: {}", reports.back().error);
                }
            }
            write_text(out_path, bench::render_report(reports, bench::parse_report_format(format)));
            if (!runs_csv.empty()) {
                std::string all;
                for (const auto& r : reports) all += bench::render_runs_csv(r);
                write_text(runs_csv, all);
            }
            return complete ? 0 : 1;
        }
        if (*model) {
            const auto cfg = load_or_default(model_config);
            mopt.field_device = cfg.field_device;
            server::ModelServer srv(std::make_unique<AnalyticPredictor>(cfg.coil, cfg.grid), mopt);
            std::cout << "model_port=" << srv.port() << std::endl;
            wait_for_signal();
            return 0;
        }
        if (*head) {
            io::write_stl_file(head_out, vis::synthetic_head());
            return 0;
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 0;
}

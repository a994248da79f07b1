#include "tmsnav/session.hpp"

#include "tmsnav/remote_predictor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cstring>

namespace tmsnav::server {

using nlohmann::json;

MeanStd mean_std(std::span<const double> xs) {
    if (xs.empty()) {
        return {};
    }
    // Shifted by the first sample: constant input gives exactly that value
    // and a zero spread.
    const double shift = xs.front();
    double sum = 0.0;
    for (double x : xs) {
        sum += x - shift;
    }
    const double n = static_cast<double>(xs.size());
    const double mean_off = sum / n;
    double ss = 0.0;
    for (double x : xs) {
        const double d = (x - shift) - mean_off;
        ss += d * d;
    }
    return {shift + mean_off, std::sqrt(ss / n)};
}

StageStats stage_stats(std::span<const RunTiming> log, std::size_t window) {
    const std::size_t n = std::min(window, log.size());
    const auto tail = log.subspan(log.size() - n);
    std::vector<double> c;
    std::vector<double> v;
    c.reserve(n);
    v.reserve(n);
    for (const auto& r : tail) {
        c.push_back(r.compute_s);
        v.push_back(r.vis_s);
    }
    return {n, mean_std(c), mean_std(v)};
}

SessionAssets load_assets(const SessionConfig& cfg) {
    SessionAssets a;
    try {
        a.brain = cfg.brain_mesh_path.empty() ? vis::synthetic_head()
                                              : io::read_stl_file(cfg.brain_mesh_path);
        a.brain.validate();
        if (!cfg.fibers_path.empty()) {
            a.fibers = vis::read_fibers_file(cfg.fibers_path);
        }
    } catch (const Error& e) {
        throw Error(Errc::AssetLoadFailure, e.what());
    }
    return a;
}

std::unique_ptr<Predictor> make_predictor(const SessionConfig& cfg) {
    if (cfg.backend == Backend::Remote) {
        if (!cfg.remote_endpoint) {
            throw Error(Errc::InvalidConfig, "remote backend needs remote_endpoint");
        }
        return std::make_unique<RemotePredictor>(*cfg.remote_endpoint, cfg.grid,
                                                 cfg.remote_timeout_s, cfg.pose_device);
    }
    return std::make_unique<AnalyticPredictor>(cfg.coil, cfg.grid);
}

std::string encode_overlay(std::uint64_t run_id, std::span<const double> values) {
    std::string out(4 + 4 * values.size(), '\0');
    auto put = [&](std::size_t at, std::uint32_t w) {
        if constexpr (std::endian::native == std::endian::big) {
            w = __builtin_bswap32(w);
        }
        std::memcpy(out.data() + at, &w, 4);
    };
    put(0, static_cast<std::uint32_t>(run_id));
    for (std::size_t i = 0; i < values.size(); ++i) {
        put(4 + 4 * i, std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    }
    return out;
}

namespace {

json pose_json(const RigidPose& p) {
    json m = json::array();
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            m.push_back(p.matrix()(r, c));
        }
    }
    return m;
}

json ramp_json(const std::vector<vis::ColorStop>& ramp) {
    json out = json::array();
    for (const auto& s : ramp) {
        out.push_back(json::array({s.t, json::array({s.rgb[0], s.rgb[1], s.rgb[2]})}));
    }
    return out;
}

}  // namespace

Session::Session(SessionConfig cfg, std::unique_ptr<Predictor> predictor, SessionAssets assets,
                 igtl::TimestampSource clock)
    : cfg_(std::move(cfg)),
      predictor_(std::move(predictor)),
      assets_(std::move(assets)),
      clock_(std::move(clock)) {
    cfg_.validate();
    if (!predictor_) {
        throw Error(Errc::InvalidConfig, "session needs a predictor");
    }
    assets_.brain.validate();
    worker_ = std::thread([this] { worker_loop(); });
}

Session::~Session() { stop(); }

std::uint64_t Session::submit_pose(const RigidPose& pose, std::string source) {
    std::lock_guard lk(mu_);
    if (closed_) {
        throw Error(Errc::SessionClosed, "session is stopped");
    }
    const std::uint64_t seq = next_seq_++;
    mailbox_ = Pending{pose, std::move(source), seq};
    wake_.notify_one();
    return seq;
}

bool Session::wait_processed(std::uint64_t seq, std::chrono::milliseconds timeout) {
    std::unique_lock lk(mu_);
    return done_.wait_for(lk, timeout, [&] { return processed_seq_ >= seq || closed_; }) &&
           processed_seq_ >= seq;
}

bool Session::wait_idle(std::chrono::milliseconds timeout) {
    std::unique_lock lk(mu_);
    return done_.wait_for(lk, timeout, [&] { return !mailbox_ && !running_; });
}

std::vector<RunTiming> Session::timings() const {
    std::lock_guard lk(mu_);
    return log_;
}

StageStats Session::stats() const { return stats(cfg_.stats_window); }

StageStats Session::stats(std::size_t window) const {
    std::lock_guard lk(mu_);
    return stage_stats(log_, window);
}

std::size_t Session::failed_runs() const {
    std::lock_guard lk(mu_);
    return failed_;
}

std::optional<std::string> Session::last_error() const {
    std::lock_guard lk(mu_);
    return last_error_;
}

std::uint64_t Session::subscribe(Subscriber fn) {
    std::lock_guard lk(sub_mu_);
    const auto id = next_sub_id_++;
    subscribers_.emplace(id, std::move(fn));
    return id;
}

void Session::unsubscribe(std::uint64_t id) {
    std::lock_guard lk(sub_mu_);
    subscribers_.erase(id);
}

void Session::stop() {
    {
        std::lock_guard lk(mu_);
        closed_ = true;
        mailbox_.reset();
        wake_.notify_all();
        done_.notify_all();
    }
    if (worker_.joinable() && worker_.get_id() != std::this_thread::get_id()) {
        worker_.join();
    }
}

bool Session::stopped() const {
    std::lock_guard lk(mu_);
    return closed_;
}

std::string Session::scene_json() const {
    json range = nullptr;
    if (cfg_.colormap_range) {
        range = json::array({cfg_.colormap_range->first, cfg_.colormap_range->second});
    }
    const auto& g = cfg_.grid;
    return json{
        {"type", "scene"},
        {"mesh_url", "/assets/brain.stl"},
        {"vertex_count", assets_.brain.vertices.size()},
        {"fiber_count", assets_.fibers ? assets_.fibers->polylines.size() : 0},
        {"field_device", cfg_.field_device},
        {"field_mode", cfg_.field_mode == FieldMode::Vector ? "vector" : "magnitude"},
        {"grid",
         {{"dims", g.dims()},
          {"spacing", {g.spacing().x(), g.spacing().y(), g.spacing().z()}},
          {"origin", {g.origin().x(), g.origin().y(), g.origin().z()}}}},
        {"colormap", {{"range", range}, {"ramp", ramp_json(cfg_.colormap_ramp)}}},
    }
        .dump();
}

void Session::worker_loop() {
    for (;;) {
        Pending job;
        {
            std::unique_lock lk(mu_);
            wake_.wait(lk, [&] { return closed_ || mailbox_.has_value(); });
            if (closed_) {
                break;
            }
            job = std::move(*mailbox_);
            mailbox_.reset();
            running_ = true;
        }
        run_once(job);
        {
            std::lock_guard lk(mu_);
            running_ = false;
            processed_seq_ = std::max(processed_seq_, job.seq);
        }
        done_.notify_all();
    }
    std::lock_guard lk(mu_);
    running_ = false;
    done_.notify_all();
}

void Session::run_once(const Pending& job) {
    RunTiming t;
    t.pose = job.pose;
    t.pose_seq = job.seq;
    t.source = job.source;
    t.started = std::chrono::system_clock::now();

    std::optional<ScalarField> field;
    std::optional<VectorField> vec;
    try {
        if (cfg_.field_mode == FieldMode::Vector) {
            vec = predictor_->predict_vector(job.pose);
        }
        if (vec) {
            field = magnitude(*vec);
        } else {
            field = predictor_->predict(job.pose);
        }
    } catch (const std::exception& e) {
        spdlog::warn("prediction failed for pose {}: {}", job.seq, e.what());
        std::lock_guard lk(mu_);
        ++failed_;
        last_error_ = e.what();
        return;
    }
    t.compute_s = predictor_->last_duration_s();
    {
        std::lock_guard lk(mu_);
        t.run_id = next_run_id_++;
    }

    const auto vis_start = std::chrono::steady_clock::now();
    const auto ts = clock_();
    const igtl::Bytes body = vec ? igtl::encode_image(*vec) : igtl::encode_image(*field);
    auto image = std::make_shared<const igtl::Bytes>(
        igtl::frame_message(igtl::MessageType::Image, cfg_.field_device, body, ts));
    const vis::MeshProjection proj = vis::project_to_mesh(*field, assets_.brain);
    std::vector<std::vector<double>> fiber_values;
    std::shared_ptr<const std::string> fiber_meta;
    if (assets_.fibers) {
        fiber_values = vis::project_to_fibers(*field, *assets_.fibers);
        fiber_meta = std::make_shared<const std::string>(
            json{{"type", "fiber_field"}, {"run_id", t.run_id}, {"values", fiber_values}}.dump());
    }
    auto overlay = std::make_shared<const std::string>(encode_overlay(t.run_id, proj.values));
    t.vis_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - vis_start).count();

    const auto [cmin, cmax] = cfg_.colormap_range.value_or(std::pair{0.0, proj.max});
    auto meta = std::make_shared<const std::string>(json{
        {"type", "field_meta"},
        {"run_id", t.run_id},
        {"timestamp", ts},
        {"dims", field->grid().dims()},
        {"range", {cmin, cmax}},
        {"vertex_count", proj.values.size()},
        {"min", proj.min},
        {"max", proj.max},
        {"argmax", proj.argmax},
        {"compute_s", t.compute_s},
        {"vis_s", t.vis_s},
        {"pose", pose_json(job.pose)},
    }
                                                         .dump());
    t.finished = std::chrono::system_clock::now();

    {
        std::lock_guard lk(mu_);
        log_.push_back(t);
    }
    const RunOutput out{t, *field, proj, fiber_values, image, meta, overlay, fiber_meta};
    std::lock_guard lk(sub_mu_);
    for (auto& [id, fn] : subscribers_) {
        try {
            fn(out);
        } catch (const std::exception& e) {
            spdlog::warn("subscriber {} failed on run {}: {}", id, t.run_id, e.what());
        }
    }
}

}  // namespace tmsnav::server

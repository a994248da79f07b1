#include "tmsnav/projection.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tmsnav::vis {

TrilinearSampler::TrilinearSampler(const ScalarField& f)
    : field_(f),
      to_index_(f.grid().spacing().cwiseInverse().asDiagonal() * f.grid().axes().transpose()),
      origin_(f.grid().origin()) {
    for (int a = 0; a < 3; ++a) {
        limit_[a] = static_cast<double>(f.grid().dims()[a] - 1);
    }
}

double TrilinearSampler::operator()(const Vec3& p_mm) const {
    const Vec3 ijk = to_index_ * (p_mm - origin_);
    std::array<std::size_t, 3> lo{};
    std::array<std::size_t, 3> hi{};
    std::array<double, 3> frac{};
    for (int a = 0; a < 3; ++a) {
        const double x = ijk[a];
        if (!(x >= 0.0 && x <= limit_[a])) {
            return 0.0;
        }
        double base = std::floor(x);
        if (base >= limit_[a]) {
            base = std::max(0.0, limit_[a] - 1.0);
        }
        lo[a] = static_cast<std::size_t>(base);
        hi[a] = std::min(lo[a] + 1, static_cast<std::size_t>(limit_[a]));
        frac[a] = x - base;
    }
    const GridSpec& g = field_.grid();
    const auto& d = field_.data();
    auto at = [&](std::size_t i, std::size_t j, std::size_t k) { return d[g.index(i, j, k)]; };
    const double fx = frac[0], fy = frac[1], fz = frac[2];
    const double c00 = at(lo[0], lo[1], lo[2]) * (1 - fx) + at(hi[0], lo[1], lo[2]) * fx;
    const double c10 = at(lo[0], hi[1], lo[2]) * (1 - fx) + at(hi[0], hi[1], lo[2]) * fx;
    const double c01 = at(lo[0], lo[1], hi[2]) * (1 - fx) + at(hi[0], lo[1], hi[2]) * fx;
    const double c11 = at(lo[0], hi[1], hi[2]) * (1 - fx) + at(hi[0], hi[1], hi[2]) * fx;
    const double c0 = c00 * (1 - fy) + c10 * fy;
    const double c1 = c01 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
}

double sample_trilinear(const ScalarField& f, const Vec3& p_mm) {
    return TrilinearSampler(f)(p_mm);
}

MeshProjection project_to_mesh(const ScalarField& f, const io::SurfaceMesh& mesh) {
    const TrilinearSampler sample(f);
    MeshProjection out;
    out.values.resize(mesh.vertices.size());
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        out.values[v] = sample(mesh.vertices[v]);
    }
    if (!out.values.empty()) {
        const auto [lo, hi] = std::minmax_element(out.values.begin(), out.values.end());
        out.min = *lo;
        out.max = *hi;
        out.argmax = static_cast<std::size_t>(hi - out.values.begin());
    }
    return out;
}

void FiberBundle::validate() const {
    for (std::size_t i = 0; i < polylines.size(); ++i) {
        if (polylines[i].size() < 2) {
            throw Error(Errc::InvalidMesh, "fiber " + std::to_string(i) + " has fewer than 2 points");
        }
        for (const Vec3& p : polylines[i]) {
            if (!p.allFinite()) {
                throw Error(Errc::InvalidMesh, "fiber " + std::to_string(i) + " has a non-finite point");
            }
        }
    }
}

FiberBundle parse_fibers_json(const std::string& text) {
    FiberBundle fb;
    try {
        const auto doc = nlohmann::json::parse(text);
        if (!doc.is_array()) {
            throw Error(Errc::InvalidMesh, "fiber JSON must be an array of polylines");
        }
        for (const auto& line : doc) {
            std::vector<Vec3> pts;
            for (const auto& p : line) {
                if (!p.is_array() || p.size() != 3) {
                    throw Error(Errc::InvalidMesh, "fiber points must be [x, y, z]");
                }
                pts.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
            }
            fb.polylines.push_back(std::move(pts));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidMesh, std::string("fiber JSON: ") + e.what());
    }
    fb.validate();
    return fb;
}

FiberBundle read_fibers_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(Errc::Io, "cannot open " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_fibers_json(ss.str());
}

std::vector<std::vector<double>> project_to_fibers(const ScalarField& f, const FiberBundle& fb) {
    const TrilinearSampler sample(f);
    std::vector<std::vector<double>> out;
    out.reserve(fb.polylines.size());
    for (const auto& line : fb.polylines) {
        std::vector<double> values;
        values.reserve(line.size());
        for (const Vec3& p : line) {
            values.push_back(sample(p));
        }
        out.push_back(std::move(values));
    }
    return out;
}

void ColorMap::validate() const {
    if (!std::isfinite(min) || !std::isfinite(max) || !(min < max)) {
        throw Error(Errc::InvalidColorMap, "colormap range needs min < max");
    }
    if (ramp.size() < 2 || ramp.front().t != 0.0 || ramp.back().t != 1.0) {
        throw Error(Errc::InvalidColorMap, "ramp must start at t=0 and end at t=1");
    }
    for (std::size_t i = 1; i < ramp.size(); ++i) {
        if (!(ramp[i].t > ramp[i - 1].t)) {
            throw Error(Errc::InvalidColorMap, "ramp t values must be strictly increasing");
        }
    }
}

ColorMap default_colormap(double max_v_per_m) {
    return ColorMap{0.0, max_v_per_m,
                    {{0.0, {0, 0, 255}}, {0.5, {255, 255, 0}}, {1.0, {255, 0, 0}}}};
}

std::vector<Rgb> apply_colormap(std::span<const double> values, const ColorMap& cm) {
    cm.validate();
    std::vector<Rgb> out;
    out.reserve(values.size());
    const double span = cm.max - cm.min;
    for (double v : values) {
        if (std::isnan(v)) {
            out.push_back(cm.ramp.front().rgb);
            continue;
        }
        const double t = (std::clamp(v, cm.min, cm.max) - cm.min) / span;
        auto upper = std::upper_bound(cm.ramp.begin(), cm.ramp.end(), t,
                                      [](double x, const ColorStop& s) { return x < s.t; });
        if (upper == cm.ramp.end()) {
            out.push_back(cm.ramp.back().rgb);
            continue;
        }
        const ColorStop& b = *upper;
        const ColorStop& a = *(upper - 1);
        const double w = (t - a.t) / (b.t - a.t);
        Rgb rgb{};
        for (int c = 0; c < 3; ++c) {
            rgb[c] = static_cast<std::uint8_t>(std::lround(a.rgb[c] + (b.rgb[c] - a.rgb[c]) * w));
        }
        out.push_back(rgb);
    }
    return out;
}

}  // namespace tmsnav::vis

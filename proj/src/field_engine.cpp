#include "tmsnav/field_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

namespace tmsnav {
namespace {

// Positions stay in mm inside the kernel: m × d_m / |d_m|³ with d_m = 1e-3·d_mm
// is 1e6·m × d_mm / |d_mm|³.
constexpr double kMmKernelScale = kMu0Over4Pi * 1e6;

struct ElementSoA {
    std::vector<double> px, py, pz, mx, my, mz;
};

ElementSoA place_elements(const CoilModel& coil, const RigidPose& pose) {
    ElementSoA soa;
    const std::size_t n = coil.elements.size();
    for (auto* v : {&soa.px, &soa.py, &soa.pz, &soa.mx, &soa.my, &soa.mz}) {
        v->resize(n);
    }
    for (std::size_t e = 0; e < n; ++e) {
        const Vec3 p = pose.apply(coil.elements[e].position_mm);
        const Vec3 m = pose.rotate(coil.elements[e].moment_rate) * kMmKernelScale;
        soa.px[e] = p.x();
        soa.py[e] = p.y();
        soa.pz[e] = p.z();
        soa.mx[e] = m.x();
        soa.my[e] = m.y();
        soa.mz[e] = m.z();
    }
    return soa;
}

struct RowScratch {
    std::vector<double> x, y, z, ax, ay, az;

    explicit RowScratch(std::size_t n) : x(n), y(n), z(n), ax(n), ay(n), az(n) {}
};

// Accumulates one x-row. Looping elements outside and voxels inside keeps
// the hot loop free of reductions so it vectorizes without fast-math.
bool accumulate_row(const ElementSoA& el, RowScratch& row, std::size_t nx) {
    constexpr double kGuard2 = kSingularityGuardMm * kSingularityGuardMm;
    std::fill(row.ax.begin(), row.ax.end(), 0.0);
    std::fill(row.ay.begin(), row.ay.end(), 0.0);
    std::fill(row.az.begin(), row.az.end(), 0.0);
    int singular = 0;
    const double* __restrict rx = row.x.data();
    const double* __restrict ry = row.y.data();
    const double* __restrict rz = row.z.data();
    double* __restrict ax = row.ax.data();
    double* __restrict ay = row.ay.data();
    double* __restrict az = row.az.data();
    for (std::size_t e = 0; e < el.px.size(); ++e) {
        const double ex = el.px[e], ey = el.py[e], ez = el.pz[e];
        const double mx = el.mx[e], my = el.my[e], mz = el.mz[e];
        for (std::size_t i = 0; i < nx; ++i) {
            const double dx = rx[i] - ex;
            const double dy = ry[i] - ey;
            const double dz = rz[i] - ez;
            const double r2 = dx * dx + dy * dy + dz * dz;
            singular |= static_cast<int>(r2 < kGuard2);
            const double inv = 1.0 / (r2 * std::sqrt(r2));
            ax[i] += (my * dz - mz * dy) * inv;
            ay[i] += (mz * dx - mx * dz) * inv;
            az[i] += (mx * dy - my * dx) * inv;
        }
    }
    return singular == 0;
}

[[noreturn]] void throw_singular(const ElementSoA& el, const RowScratch& row, const GridSpec& g,
                                 std::size_t j, std::size_t k) {
    for (std::size_t i = 0; i < g.dims()[0]; ++i) {
        for (std::size_t e = 0; e < el.px.size(); ++e) {
            const Vec3 d(row.x[i] - el.px[e], row.y[i] - el.py[e], row.z[i] - el.pz[e]);
            if (d.norm() < kSingularityGuardMm) {
                const std::size_t idx = g.index(i, j, k);
                std::ostringstream os;
                os << "voxel " << idx << " (" << i << "," << j << "," << k
                   << ") coincides with coil element " << e;
                throw SingularVoxelError(idx, os.str());
            }
        }
    }
    throw SingularVoxelError(g.index(0, j, k), "singular voxel in row");
}

unsigned worker_count(std::size_t slabs) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::min<std::size_t>(hw, slabs));
}

}  // namespace

void CoilParams::validate() const {
    if (!(wing_radius_mm > 0.0) || !std::isfinite(wing_radius_mm)) {
        throw Error(Errc::InvalidParams, "wing_radius must be > 0");
    }
    if (!(wing_separation_mm >= 0.0) || !std::isfinite(wing_separation_mm)) {
        throw Error(Errc::InvalidParams, "wing_separation must be >= 0");
    }
    if (turns < 1) {
        throw Error(Errc::InvalidParams, "turns must be >= 1");
    }
    if (segments_per_wing < 1) {
        throw Error(Errc::InvalidParams, "segments_per_wing must be >= 1");
    }
    if (!std::isfinite(dI_dt)) {
        throw Error(Errc::InvalidParams, "dI_dt must be finite");
    }
}

void CoilModel::validate() const {
    if (elements.size() < 2) {
        throw Error(Errc::InvalidParams, "coil needs at least two elements");
    }
    for (const auto& e : elements) {
        if (!e.position_mm.allFinite() || !e.moment_rate.allFinite()) {
            throw Error(Errc::InvalidParams, "coil element is not finite");
        }
    }
}

CoilModel build_figure8(const CoilParams& params) {
    params.validate();
    const double a_m = params.wing_radius_mm * 1e-3;
    const int n = params.segments_per_wing;
    const double moment =
        params.turns * params.dI_dt * std::numbers::pi * a_m * a_m / static_cast<double>(n);
    const double ring = n == 1 ? 0.0 : params.wing_radius_mm / std::numbers::sqrt2;

    CoilModel coil;
    coil.name = "figure8";
    coil.elements.reserve(2 * static_cast<std::size_t>(n));
    const double half = params.wing_separation_mm / 2.0;
    for (const double sign : {1.0, -1.0}) {
        const double cx = -sign * half;
        for (int s = 0; s < n; ++s) {
            const double theta = 2.0 * std::numbers::pi * s / n;
            coil.elements.push_back(
                {Vec3(cx + ring * std::cos(theta), ring * std::sin(theta), 0.0),
                 Vec3(0.0, 0.0, sign * moment)});
        }
    }
    return coil;
}

VectorField compute_dadt(const CoilModel& coil, const RigidPose& pose, const GridSpec& grid) {
    coil.validate();
    const ElementSoA el = place_elements(coil, pose);
    const auto [nx, ny, nz] = grid.dims();
    const Mat3 lin = grid.index_to_world_linear();
    const Vec3 step = lin.col(0);

    std::vector<Vec3> out(grid.voxel_count());

    auto run_slabs = [&](std::size_t k_begin, std::size_t k_end) {
        RowScratch row(nx);
        for (std::size_t k = k_begin; k < k_end; ++k) {
            for (std::size_t j = 0; j < ny; ++j) {
                const Vec3 base = grid.origin() + lin.col(1) * static_cast<double>(j) +
                                  lin.col(2) * static_cast<double>(k);
                for (std::size_t i = 0; i < nx; ++i) {
                    const Vec3 r = base + step * static_cast<double>(i);
                    row.x[i] = r.x();
                    row.y[i] = r.y();
                    row.z[i] = r.z();
                }
                if (!accumulate_row(el, row, nx)) {
                    throw_singular(el, row, grid, j, k);
                }
                Vec3* dst = out.data() + grid.index(0, j, k);
                for (std::size_t i = 0; i < nx; ++i) {
                    dst[i] = Vec3(row.ax[i], row.ay[i], row.az[i]);
                }
            }
        }
    };

    const unsigned workers = worker_count(nz);
    if (workers <= 1) {
        run_slabs(0, nz);
    } else {
        std::vector<std::thread> threads;
        std::vector<std::exception_ptr> errors(workers);
        const std::size_t chunk = (nz + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t b = w * chunk;
            const std::size_t e = std::min(nz, b + chunk);
            threads.emplace_back([&, w, b, e] {
                try {
                    run_slabs(b, e);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) {
            t.join();
        }
        for (auto& err : errors) {
            if (err) {
                std::rethrow_exception(err);
            }
        }
    }
    return VectorField(grid, std::move(out), FieldUnit::DAdt);
}

VectorField primary_efield(const VectorField& dadt) {
    if (dadt.unit() != FieldUnit::DAdt) {
        throw Error(Errc::WrongUnitTag, "primary_efield expects a dA/dt field");
    }
    std::vector<Vec3> e;
    e.reserve(dadt.data().size());
    for (const Vec3& v : dadt.data()) {
        e.push_back(-v);
    }
    return VectorField(dadt.grid(), std::move(e), FieldUnit::EField);
}

ScalarField magnitude(const VectorField& f) {
    std::vector<double> m;
    m.reserve(f.data().size());
    for (const Vec3& v : f.data()) {
        m.push_back(v.norm());
    }
    return ScalarField(f.grid(), std::move(m));
}

bool same_lattice(const GridSpec& a, const GridSpec& b, double rel_tol) {
    if (a.dims() != b.dims()) {
        return false;
    }
    auto close = [rel_tol](double x, double y) {
        return std::abs(x - y) <= rel_tol * std::max({1.0, std::abs(x), std::abs(y)});
    };
    for (int r = 0; r < 3; ++r) {
        if (!close(a.spacing()[r], b.spacing()[r]) || !close(a.origin()[r], b.origin()[r])) {
            return false;
        }
        for (int c = 0; c < 3; ++c) {
            if (!close(a.axes()(r, c), b.axes()(r, c))) {
                return false;
            }
        }
    }
    return true;
}

namespace {

double ratio_or_sentinel(double num2, double den2) {
    if (den2 == 0.0) {
        return num2 == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return std::sqrt(num2 / den2);
}

}  // namespace

double normalized_error(const ScalarField& pred, const ScalarField& ref) {
    if (!same_lattice(pred.grid(), ref.grid())) {
        throw Error(Errc::GridMismatch, "normalized_error needs fields on the same grid");
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.data().size(); ++i) {
        const double d = pred.data()[i] - ref.data()[i];
        num += d * d;
        den += ref.data()[i] * ref.data()[i];
    }
    return ratio_or_sentinel(num, den);
}

double normalized_error(const VectorField& pred, const VectorField& ref) {
    if (!same_lattice(pred.grid(), ref.grid())) {
        throw Error(Errc::GridMismatch, "normalized_error needs fields on the same grid");
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.data().size(); ++i) {
        num += (pred.data()[i] - ref.data()[i]).squaredNorm();
        den += ref.data()[i].squaredNorm();
    }
    return ratio_or_sentinel(num, den);
}

AnalyticPredictor::AnalyticPredictor(const CoilParams& params, GridSpec grid)
    : coil_(build_figure8(params)), grid_(std::move(grid)) {}

std::optional<VectorField> AnalyticPredictor::predict_vector(const RigidPose& pose) {
    const auto start = std::chrono::steady_clock::now();
    VectorField e = primary_efield(compute_dadt(coil_, pose, grid_));
    std::vector<Vec3> rounded(e.data());
    // Per component: Eigen's chained casts on Vector3d do not round under AVX.
    for (Vec3& v : rounded) {
        for (int c = 0; c < 3; ++c) {
            v[c] = static_cast<double>(static_cast<float>(v[c]));
        }
    }
    VectorField out(grid_, std::move(rounded), FieldUnit::EField);
    last_duration_s_ =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

ScalarField AnalyticPredictor::predict(const RigidPose& pose) {
    const auto start = std::chrono::steady_clock::now();
    ScalarField mag = magnitude(primary_efield(compute_dadt(coil_, pose, grid_)));
    std::vector<double> rounded(mag.data());
    for (double& v : rounded) {
        v = static_cast<double>(static_cast<float>(v));
    }
    ScalarField out(grid_, std::move(rounded));
    last_duration_s_ =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

}  // namespace tmsnav

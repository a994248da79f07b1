// Line-integral reference for the figure-8 coil. Deliberately shares no code
// with the dipole kernel so the two can check each other.

#include "tmsnav/field_engine.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace tmsnav {

std::vector<Vec3> oracle_dadt(const CoilParams& params, const RigidPose& pose,
                              const std::vector<Vec3>& points_mm, int quadrature_n) {
    params.validate();
    if (quadrature_n < 256) {
        throw Error(Errc::InvalidParams, "quadrature_n must be >= 256");
    }
    const double a_mm = params.wing_radius_mm;
    const double a_m = a_mm * 1e-3;
    const double half = params.wing_separation_mm / 2.0;
    const double dtheta = 2.0 * std::numbers::pi / quadrature_n;
    const double drive = kMu0Over4Pi * params.turns * params.dI_dt;

    const RigidPose to_coil = invert(pose);
    const Mat3 back = pose.rotation();

    // Wing at -x circulates counterclockwise about +z (moment +z).
    struct Wing {
        double cx;
        double sense;
    };
    const Wing wings[2] = {{-half, 1.0}, {half, -1.0}};

    std::vector<Vec3> out;
    out.reserve(points_mm.size());
    for (std::size_t p = 0; p < points_mm.size(); ++p) {
        const Vec3 local = to_coil.apply(points_mm[p]);
        Vec3 acc = Vec3::Zero();
        for (const Wing& w : wings) {
            const double rho = std::hypot(local.x() - w.cx, local.y());
            if (std::hypot(rho - a_mm, local.z()) < kSingularityGuardMm) {
                std::ostringstream os;
                os << "probe point " << p << " lies on a coil loop";
                throw Error(Errc::SingularPoint, os.str());
            }
            for (int q = 0; q < quadrature_n; ++q) {
                const double t = q * dtheta;
                const double c = std::cos(t), s = std::sin(t);
                const Vec3 src(w.cx + a_mm * c, a_mm * s, 0.0);
                const double dist_m = (local - src).norm() * 1e-3;
                const Vec3 dl = Vec3(-s, c, 0.0) * (w.sense * a_m * dtheta);
                acc += dl / dist_m;
            }
        }
        out.push_back(back * (acc * drive));
    }
    return out;
}

}  // namespace tmsnav

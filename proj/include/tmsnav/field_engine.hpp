#pragma once

#include "tmsnav/geometry.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tmsnav {

/// μ0/4π in T·m/A.
inline constexpr double kMu0Over4Pi = 1e-7;

/// Voxels closer than this to a dipole element are rejected.
inline constexpr double kSingularityGuardMm = 1e-9;

/// Figure-8 coil geometry and drive. The defaults approximate a 70 mm
/// figure-8 coil (70 mm read as wing diameter); they are engineering
/// choices, all configurable.
struct CoilParams {
    double wing_radius_mm = 35.0;
    double wing_separation_mm = 70.0;  ///< center to center
    int turns = 9;
    double dI_dt = 1e8;  ///< A/s
    int segments_per_wing = 64;

    void validate() const;
};

struct CoilElement {
    Vec3 position_mm;  ///< coil frame
    Vec3 moment_rate;  ///< dm/dt in A·m²/s
};

struct CoilModel {
    std::string name;
    std::vector<CoilElement> elements;

    void validate() const;
};

/// Coil frame: wings centered at (∓separation/2, 0, 0) in the z = 0 plane,
/// +z points from the coil face toward the head, handle along +y. The wing
/// at -x carries moment +z, the wing at +x carries -z.
///
/// Each wing is a ring of segments_per_wing dipoles at radius a/√2, each
/// carrying turns·dI/dt·πa²/segments_per_wing. A current loop equals a
/// uniformly magnetized disk; a/√2 is that disk's RMS radius, so the ring
/// reproduces the loop's field beyond the leading dipole term. With one
/// segment per wing the element sits at the wing center.
CoilModel build_figure8(const CoilParams& params);

/// dA/dt at every voxel center by dipole superposition, in V/m:
///   (μ0/4π) Σ dm/dt × (r - r_k) / |r - r_k|³
/// Elements are moved by pose (positions transformed, moments rotated).
/// Throws SingularVoxelError when a voxel center is within
/// kSingularityGuardMm of an element.
VectorField compute_dadt(const CoilModel& coil, const RigidPose& pose, const GridSpec& grid);

/// Primary field E = -dA/dt. Throws WrongUnitTag unless tagged DAdt.
VectorField primary_efield(const VectorField& dadt);

ScalarField magnitude(const VectorField& f);

/// ‖pred - ref‖₂ / ‖ref‖₂ over all components. Returns 0 when both are zero
/// and +inf when only ref is zero. Not symmetric; the denominator is ref.
double normalized_error(const ScalarField& pred, const ScalarField& ref);
double normalized_error(const VectorField& pred, const VectorField& ref);

/// Grid equality up to a relative tolerance on spacing/origin/axes, so
/// volumes that went through float32 still compare as the same lattice.
bool same_lattice(const GridSpec& a, const GridSpec& b, double rel_tol = 1e-5);

/// Brute-force reference: dA/dt from the line integral over both circular
/// loops, (μ0/4π)·turns·dI/dt·∮ dl'/|r - r'|, trapezoidal rule with
/// quadrature_n nodes per loop. Independent of the dipole path; used for
/// verification. Throws SingularPoint for points on a loop, InvalidParams
/// when quadrature_n < 256.
std::vector<Vec3> oracle_dadt(const CoilParams& params, const RigidPose& pose,
                              const std::vector<Vec3>& points_mm, int quadrature_n);

/// Anything that turns a coil pose into a field on a fixed lattice. The
/// analytic engine is one backend; a remote model server is another.
class Predictor {
public:
    virtual ~Predictor() = default;

    virtual ScalarField predict(const RigidPose& pose) = 0;

    /// Full E vector field for backends that have it.
    virtual std::optional<VectorField> predict_vector(const RigidPose& /*pose*/) {
        return std::nullopt;
    }

    virtual const GridSpec& grid() const = 0;

    /// Wall-clock duration of the most recent predict call, seconds.
    virtual double last_duration_s() const = 0;
};

/// build_figure8 → compute_dadt → primary_efield → magnitude. Output values
/// are rounded to float32, the precision they are streamed at, so a local
/// and a remote instance of this backend produce identical fields.
class AnalyticPredictor final : public Predictor {
public:
    AnalyticPredictor(const CoilParams& params, GridSpec grid);

    ScalarField predict(const RigidPose& pose) override;
    std::optional<VectorField> predict_vector(const RigidPose& pose) override;
    const GridSpec& grid() const override { return grid_; }
    double last_duration_s() const override { return last_duration_s_; }

    const CoilModel& coil() const noexcept { return coil_; }

private:
    CoilModel coil_;
    GridSpec grid_;
    double last_duration_s_ = 0.0;
};

}  // namespace tmsnav

#pragma once

#include "tmsnav/error.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstddef>
#include <vector>

namespace tmsnav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Largest orthonormality residual (max |RᵀR - I| entry) accepted at ingestion.
/// Inputs inside this band are snapped back onto SO(3) by polar decomposition.
inline constexpr double kRigidIngestTolerance = 1e-3;

/// 4×4 homogeneous rigid transform, world units in millimeters.
/// Only constructible through validated paths, so a live instance always
/// satisfies RᵀR = I, det R = +1 and bottom row (0,0,0,1).
class RigidPose {
public:
    RigidPose() : matrix_(Mat4::Identity()) {}

    /// Validates a full homogeneous matrix. The bottom row must be exactly
    /// (0,0,0,1); the rotation block goes through the same path as make_pose.
    static RigidPose from_matrix(const Mat4& m);

    const Mat4& matrix() const noexcept { return matrix_; }
    Mat3 rotation() const { return matrix_.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return matrix_.topRightCorner<3, 1>(); }

    Vec3 apply(const Vec3& p) const { return rotation() * p + translation(); }
    Vec3 rotate(const Vec3& v) const { return rotation() * v; }

    bool is_identity() const { return matrix_ == Mat4::Identity(); }

    friend bool operator==(const RigidPose& a, const RigidPose& b) { return a.matrix_ == b.matrix_; }

private:
    explicit RigidPose(const Mat4& m) : matrix_(m) {}

    friend RigidPose make_pose(const Mat3& rotation, const Vec3& translation_mm);
    friend RigidPose invert(const RigidPose& p);

    Mat4 matrix_;
};

/// Throws Error(NotRigid) for reflections or residuals above kRigidIngestTolerance.
RigidPose make_pose(const Mat3& rotation, const Vec3& translation_mm);

/// Applies b first, then a.
RigidPose compose(const RigidPose& a, const RigidPose& b);

RigidPose invert(const RigidPose& p);

RigidPose translation_pose(const Vec3& t_mm);
RigidPose rotation_z_pose(double radians);
Mat3 rotation_about(const Vec3& axis, double radians);

/// Max |RᵀR - I| entry.
double orthonormality_residual(const Mat3& r);

using GridDims = std::array<std::size_t, 3>;

/// Voxel lattice geometry. Voxel (i,j,k) center sits at
/// origin + axes · (spacing ⊙ (i,j,k)); storage is row-major over (z,y,x).
class GridSpec {
public:
    GridSpec(const GridDims& dims, const Vec3& spacing_mm, const Vec3& origin_mm,
             const Mat3& axes = Mat3::Identity());

    const GridDims& dims() const noexcept { return dims_; }
    const Vec3& spacing() const noexcept { return spacing_; }
    const Vec3& origin() const noexcept { return origin_; }
    const Mat3& axes() const noexcept { return axes_; }

    std::size_t voxel_count() const noexcept { return dims_[0] * dims_[1] * dims_[2]; }

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return (k * dims_[1] + j) * dims_[0] + i;
    }

    /// axes · diag(spacing): maps index offsets to world offsets.
    Mat3 index_to_world_linear() const { return axes_ * spacing_.asDiagonal(); }

    friend bool operator==(const GridSpec& a, const GridSpec& b) {
        return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.origin_ == b.origin_ &&
               a.axes_ == b.axes_;
    }

private:
    GridDims dims_;
    Vec3 spacing_;
    Vec3 origin_;
    Mat3 axes_;
};

/// Builds a grid from an index→world affine (columns = axes·spacing), as
/// stored by NIfTI sforms and IGTL image matrices. Axes that drifted by at
/// most 1e-4 (float32 storage) are snapped back to orthonormal.
GridSpec grid_from_affine(const GridDims& dims, const Mat3& linear, const Vec3& origin_mm);

Vec3 ijk_to_world(const GridSpec& g, const Vec3& ijk);
Vec3 world_to_ijk(const GridSpec& g, const Vec3& p_mm);

enum class FieldUnit { EField, DAdt };

/// One 3-vector per voxel in physical units (V/m for both E and dA/dt).
class VectorField {
public:
    VectorField(GridSpec grid, std::vector<Vec3> data, FieldUnit unit);

    const GridSpec& grid() const noexcept { return grid_; }
    const std::vector<Vec3>& data() const noexcept { return data_; }
    FieldUnit unit() const noexcept { return unit_; }

private:
    GridSpec grid_;
    std::vector<Vec3> data_;
    FieldUnit unit_;
};

/// Non-negative magnitudes in V/m, same ordering as VectorField.
class ScalarField {
public:
    ScalarField(GridSpec grid, std::vector<double> data);

    const GridSpec& grid() const noexcept { return grid_; }
    const std::vector<double>& data() const noexcept { return data_; }

private:
    GridSpec grid_;
    std::vector<double> data_;
};

/// Moves the lattice by p and rotates every voxel's vector by p's rotation.
/// Vector directions have to turn with the grid, otherwise the field would
/// point the wrong way after the coil moves.
VectorField transform_vector_field(const VectorField& f, const RigidPose& p);

}  // namespace tmsnav

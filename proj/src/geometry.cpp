#include "tmsnav/geometry.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <sstream>
#include <utility>

namespace tmsnav {
namespace {

constexpr double kGridAxesTolerance = 1e-6;

// Below this the rotation is already orthonormal to round-off and is kept
// as given, so exact inputs (identity, axis rotations) stay exact.
constexpr double kSnapThreshold = 1e-12;

bool all_finite(const Mat3& m) { return m.allFinite(); }

Mat3 polar_rotation(const Mat3& r) {
    Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

double orthonormality_residual(const Mat3& r) {
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

RigidPose make_pose(const Mat3& rotation, const Vec3& translation_mm) {
    if (!all_finite(rotation) || !translation_mm.allFinite()) {
        throw Error(Errc::NotRigid, "non-finite pose entries");
    }
    const double det = rotation.determinant();
    if (!(det > 0.0)) {
        throw Error(Errc::NotRigid, "rotation determinant is not positive");
    }
    const double residual = orthonormality_residual(rotation);
    if (residual > kRigidIngestTolerance) {
        std::ostringstream os;
        os << "orthonormality residual " << residual << " exceeds " << kRigidIngestTolerance;
        throw Error(Errc::NotRigid, os.str());
    }
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = residual > kSnapThreshold ? polar_rotation(rotation) : rotation;
    m.topRightCorner<3, 1>() = translation_mm;
    return RigidPose(m);
}

RigidPose RigidPose::from_matrix(const Mat4& m) {
    if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) {
        throw Error(Errc::NotRigid, "bottom row must be (0,0,0,1)");
    }
    return make_pose(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
}

RigidPose compose(const RigidPose& a, const RigidPose& b) {
    const Mat4 m = a.matrix() * b.matrix();
    return make_pose(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
}

RigidPose invert(const RigidPose& p) {
    const Mat3 rt = p.rotation().transpose();
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rt;
    m.topRightCorner<3, 1>() = -(rt * p.translation());
    return RigidPose(m);
}

RigidPose translation_pose(const Vec3& t_mm) { return make_pose(Mat3::Identity(), t_mm); }

RigidPose rotation_z_pose(double radians) {
    return make_pose(rotation_about(Vec3::UnitZ(), radians), Vec3::Zero());
}

Mat3 rotation_about(const Vec3& axis, double radians) {
    return Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix();
}

GridSpec::GridSpec(const GridDims& dims, const Vec3& spacing_mm, const Vec3& origin_mm,
                   const Mat3& axes)
    : dims_(dims), spacing_(spacing_mm), origin_(origin_mm), axes_(axes) {
    for (std::size_t d : dims_) {
        if (d == 0) {
            throw Error(Errc::InvalidGrid, "grid dimensions must be positive");
        }
    }
    if (!spacing_.allFinite() || (spacing_.array() <= 0.0).any()) {
        throw Error(Errc::InvalidGrid, "grid spacing must be positive and finite");
    }
    if (!origin_.allFinite() || !all_finite(axes_)) {
        throw Error(Errc::InvalidGrid, "grid origin/axes must be finite");
    }
    if (orthonormality_residual(axes_) > kGridAxesTolerance) {
        throw Error(Errc::InvalidGrid, "grid axes are not orthonormal");
    }
}

GridSpec grid_from_affine(const GridDims& dims, const Mat3& linear, const Vec3& origin_mm) {
    if (!all_finite(linear) || !origin_mm.allFinite()) {
        throw Error(Errc::InvalidGrid, "affine has non-finite entries");
    }
    Vec3 spacing;
    Mat3 axes;
    for (int c = 0; c < 3; ++c) {
        spacing[c] = linear.col(c).norm();
        if (!(spacing[c] > 0.0)) {
            throw Error(Errc::InvalidGrid, "affine has a zero-length column");
        }
        axes.col(c) = linear.col(c) / spacing[c];
    }
    const double residual = orthonormality_residual(axes);
    if (residual > kGridAxesTolerance && residual <= 1e-4) {
        axes = polar_rotation(axes);  // keeps the sign of det for near-orthonormal input
    }
    return GridSpec(dims, spacing, origin_mm, axes);
}

Vec3 ijk_to_world(const GridSpec& g, const Vec3& ijk) {
    return g.origin() + g.axes() * g.spacing().cwiseProduct(ijk);
}

Vec3 world_to_ijk(const GridSpec& g, const Vec3& p_mm) {
    return (g.axes().transpose() * (p_mm - g.origin())).cwiseQuotient(g.spacing());
}

VectorField::VectorField(GridSpec grid, std::vector<Vec3> data, FieldUnit unit)
    : grid_(std::move(grid)), data_(std::move(data)), unit_(unit) {
    if (data_.size() != grid_.voxel_count()) {
        throw Error(Errc::InvalidField, "vector field length does not match grid");
    }
    for (const Vec3& v : data_) {
        if (!v.allFinite()) {
            throw Error(Errc::InvalidField, "vector field contains non-finite values");
        }
    }
}

ScalarField::ScalarField(GridSpec grid, std::vector<double> data)
    : grid_(std::move(grid)), data_(std::move(data)) {
    if (data_.size() != grid_.voxel_count()) {
        throw Error(Errc::InvalidField, "scalar field length does not match grid");
    }
    for (double v : data_) {
        if (!std::isfinite(v) || v < 0.0) {
            throw Error(Errc::InvalidField, "scalar field values must be finite and >= 0");
        }
    }
}

VectorField transform_vector_field(const VectorField& f, const RigidPose& p) {
    if (p.is_identity()) {
        return f;
    }
    const Mat3 r = p.rotation();
    const GridSpec& g = f.grid();
    GridSpec moved(g.dims(), g.spacing(), p.apply(g.origin()), r * g.axes());

    std::vector<Vec3> rotated;
    rotated.reserve(f.data().size());
    for (const Vec3& v : f.data()) {
        rotated.push_back(r * v);
    }
    return VectorField(std::move(moved), std::move(rotated), f.unit());
}

}  // namespace tmsnav

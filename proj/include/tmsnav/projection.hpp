#pragma once

#include "tmsnav/geometry.hpp"
#include "tmsnav/volume_io.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tmsnav::vis {

/// Trilinear sample at a world point (mm). Points whose continuous index
/// falls outside [0, dim-1] on any axis read as 0: the mesh routinely
/// extends past the reduced field of view, and the field is ~0 out there.
double sample_trilinear(const ScalarField& f, const Vec3& p_mm);

/// Precomputed world→index map for sampling many points against one field.
class TrilinearSampler {
public:
    explicit TrilinearSampler(const ScalarField& f);

    double operator()(const Vec3& p_mm) const;

private:
    const ScalarField& field_;
    Mat3 to_index_;
    Vec3 origin_;
    std::array<double, 3> limit_;
};

struct MeshProjection {
    std::vector<double> values;  ///< one per vertex
    double min = 0.0;
    double max = 0.0;
    std::size_t argmax = 0;
};

MeshProjection project_to_mesh(const ScalarField& f, const io::SurfaceMesh& mesh);

struct FiberBundle {
    std::vector<std::vector<Vec3>> polylines;

    /// Each polyline needs at least two finite points (InvalidMesh otherwise).
    void validate() const;
};

/// Fiber JSON: an array of polylines, each an array of [x, y, z] in mm.
FiberBundle parse_fibers_json(const std::string& text);
FiberBundle read_fibers_file(const std::string& path);

std::vector<std::vector<double>> project_to_fibers(const ScalarField& f, const FiberBundle& fb);

using Rgb = std::array<std::uint8_t, 3>;

struct ColorStop {
    double t;
    Rgb rgb;
};

struct ColorMap {
    double min = 0.0;  ///< V/m
    double max = 1.0;  ///< V/m
    std::vector<ColorStop> ramp;

    /// min < max; ramp t strictly increasing from 0 to 1 (InvalidColorMap).
    void validate() const;
};

/// Blue → yellow → red over [0, max_v_per_m].
ColorMap default_colormap(double max_v_per_m);

/// Clamp to range, normalize, interpolate the ramp, round per channel.
/// NaN maps to the first ramp color.
std::vector<Rgb> apply_colormap(std::span<const double> values, const ColorMap& cm);

struct HeadShape {
    Vec3 center_mm{0.0, 0.0, 72.0};
    Vec3 radii_mm{64.0, 82.0, 58.0};
    std::size_t rings = 250;     ///< latitude rings between the poles
    std::size_t segments = 400;  ///< vertices per ring
    double fold_depth = 0.025;   ///< relative amplitude of the surface ripple
};

/// Deterministic closed cortex-like surface: a rippled ellipsoid with
/// rings·segments + 2 vertices. The defaults give 100,002 vertices.
io::SurfaceMesh synthetic_head(const HeadShape& shape = {});

}  // namespace tmsnav::vis

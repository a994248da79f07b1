#include "tmsnav/projection.hpp"

#include <cmath>
#include <numbers>

namespace tmsnav::vis {

io::SurfaceMesh synthetic_head(const HeadShape& shape) {
    if (shape.rings < 1 || shape.segments < 3) {
        throw Error(Errc::InvalidMesh, "synthetic head needs >= 1 ring and >= 3 segments");
    }
    const std::size_t nr = shape.rings;
    const std::size_t ns = shape.segments;
    io::SurfaceMesh mesh;
    mesh.vertices.reserve(nr * ns + 2);

    auto surface = [&](double polar, double azimuth) {
        const double ripple =
            1.0 + shape.fold_depth * std::sin(11.0 * polar) * std::sin(9.0 * azimuth);
        const Vec3 dir(std::sin(polar) * std::cos(azimuth), std::sin(polar) * std::sin(azimuth),
                       std::cos(polar));
        return Vec3(shape.center_mm + ripple * shape.radii_mm.cwiseProduct(dir));
    };

    // Pole 0 faces the coil (-z).
    mesh.vertices.push_back(shape.center_mm - Vec3(0.0, 0.0, shape.radii_mm.z()));
    for (std::size_t r = 0; r < nr; ++r) {
        const double polar = std::numbers::pi * (1.0 - double(r + 1) / double(nr + 1));
        for (std::size_t s = 0; s < ns; ++s) {
            mesh.vertices.push_back(surface(polar, 2.0 * std::numbers::pi * double(s) / double(ns)));
        }
    }
    mesh.vertices.push_back(shape.center_mm + Vec3(0.0, 0.0, shape.radii_mm.z()));

    auto at = [&](std::size_t r, std::size_t s) {
        return static_cast<std::uint32_t>(1 + r * ns + s % ns);
    };
    const auto top = static_cast<std::uint32_t>(nr * ns + 1);
    mesh.triangles.reserve(2 * ns * nr);
    for (std::size_t s = 0; s < ns; ++s) {
        mesh.triangles.push_back({0u, at(0, s + 1), at(0, s)});
    }
    for (std::size_t r = 0; r + 1 < nr; ++r) {
        for (std::size_t s = 0; s < ns; ++s) {
            mesh.triangles.push_back({at(r, s), at(r, s + 1), at(r + 1, s + 1)});
            mesh.triangles.push_back({at(r, s), at(r + 1, s + 1), at(r + 1, s)});
        }
    }
    for (std::size_t s = 0; s < ns; ++s) {
        mesh.triangles.push_back({top, at(nr - 1, s), at(nr - 1, s + 1)});
    }
    return mesh;
}

}  // namespace tmsnav::vis

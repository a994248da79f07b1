#include "tmsnav/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <unordered_map>

namespace tmsnav::io {
namespace {

constexpr std::size_t kStlHeader = 80;
constexpr std::size_t kStlFacet = 50;

std::uint32_t get_u32_le(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

float get_f32_le(const std::uint8_t* p) { return std::bit_cast<float>(get_u32_le(p)); }

void put_u32_le(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        p[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
}

void put_f32_le(std::uint8_t* p, float v) { put_u32_le(p, std::bit_cast<std::uint32_t>(v)); }

bool looks_ascii(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 5 && std::memcmp(bytes.data(), "solid", 5) == 0;
}

using Key = std::array<std::uint32_t, 3>;

struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::uint32_t v : k) {
            h = (h ^ v) * 0x100000001b3ULL;
        }
        return static_cast<std::size_t>(h);
    }
};

// Bit pattern with -0 folded onto +0 so exact coordinate equality matches.
std::uint32_t coord_bits(float f) { return std::bit_cast<std::uint32_t>(f == 0.0f ? 0.0f : f); }

}  // namespace

void SurfaceMesh::validate() const {
    for (const Vec3& v : vertices) {
        if (!v.allFinite()) {
            throw Error(Errc::InvalidMesh, "mesh has a non-finite vertex");
        }
    }
    for (const Triangle& t : triangles) {
        for (std::uint32_t idx : t) {
            if (idx >= vertices.size()) {
                throw Error(Errc::InvalidMesh, "triangle index out of range");
            }
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
            throw Error(Errc::InvalidMesh, "degenerate triangle");
        }
    }
    if (!scalars.empty() && scalars.size() != vertices.size()) {
        throw Error(Errc::InvalidMesh, "scalar channel length differs from vertex count");
    }
}

SurfaceMesh read_stl(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kStlHeader + 4) {
        if (looks_ascii(bytes)) {
            throw Error(Errc::AsciiStlUnsupported, "ASCII STL is not supported");
        }
        throw Error(Errc::Truncated, "STL needs at least 84 bytes");
    }
    const std::uint64_t count = get_u32_le(bytes.data() + kStlHeader);
    if (kStlHeader + 4 + kStlFacet * count != bytes.size()) {
        if (looks_ascii(bytes)) {
            throw Error(Errc::AsciiStlUnsupported, "ASCII STL is not supported");
        }
        throw Error(Errc::Truncated, "STL facet count " + std::to_string(count) +
                                         " disagrees with file length " +
                                         std::to_string(bytes.size()));
    }

    SurfaceMesh mesh;
    std::unordered_map<Key, std::uint32_t, KeyHash> index;
    index.reserve(static_cast<std::size_t>(count));
    mesh.triangles.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t f = 0; f < count; ++f) {
        const std::uint8_t* facet = bytes.data() + kStlHeader + 4 + kStlFacet * f;
        Triangle tri{};
        for (int c = 0; c < 3; ++c) {
            const std::uint8_t* p = facet + 12 + 12 * c;
            const float x = get_f32_le(p), y = get_f32_le(p + 4), z = get_f32_le(p + 8);
            if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
                throw Error(Errc::InvalidMesh, "STL facet " + std::to_string(f) +
                                                   " has a non-finite vertex");
            }
            const Key key{coord_bits(x), coord_bits(y), coord_bits(z)};
            auto [it, inserted] =
                index.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
            if (inserted) {
                mesh.vertices.emplace_back(x, y, z);
            }
            tri[c] = it->second;
        }
        if (tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2]) {
            mesh.triangles.push_back(tri);
        }
    }
    return mesh;
}

Bytes write_stl(const SurfaceMesh& mesh) {
    mesh.validate();
    Bytes out(kStlHeader + 4 + kStlFacet * mesh.triangles.size(), 0);
    constexpr char kBanner[] = "binary STL";
    std::memcpy(out.data(), kBanner, sizeof(kBanner) - 1);
    put_u32_le(out.data() + kStlHeader, static_cast<std::uint32_t>(mesh.triangles.size()));
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        std::uint8_t* facet = out.data() + kStlHeader + 4 + kStlFacet * f;
        const Triangle& t = mesh.triangles[f];
        const Vec3& a = mesh.vertices[t[0]];
        const Vec3& b = mesh.vertices[t[1]];
        const Vec3& c = mesh.vertices[t[2]];
        Vec3 n = (b - a).cross(c - a);
        if (n.norm() > 0.0) {
            n.normalize();
        }
        for (int k = 0; k < 3; ++k) {
            put_f32_le(facet + 4 * k, static_cast<float>(n[k]));
        }
        for (int v = 0; v < 3; ++v) {
            const Vec3& p = mesh.vertices[t[v]];
            for (int k = 0; k < 3; ++k) {
                put_f32_le(facet + 12 + 12 * v + 4 * k, static_cast<float>(p[k]));
            }
        }
    }
    return out;
}

SurfaceMesh read_stl_file(const std::filesystem::path& path) { return read_stl(read_file(path)); }

void write_stl_file(const std::filesystem::path& path, const SurfaceMesh& mesh) {
    write_file(path, write_stl(mesh));
}

}  // namespace tmsnav::io

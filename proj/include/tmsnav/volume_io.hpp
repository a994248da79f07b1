#pragma once

#include "tmsnav/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tmsnav::io {

using Bytes = std::vector<std::uint8_t>;

namespace nifti {
inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::int32_t kVoxOffset = 352;
inline constexpr std::int16_t kUint8 = 2;
inline constexpr std::int16_t kInt16 = 4;
inline constexpr std::int16_t kFloat32 = 16;
inline constexpr std::int16_t kIntentVector = 1007;
inline constexpr std::int16_t kUnitsMm = 2;
}  // namespace nifti

struct NiftiIntent {
    std::int16_t code = 0;
    float p1 = 0.0f;
    float p2 = 0.0f;
    float p3 = 0.0f;
    std::string name;  ///< up to 16 bytes

    friend bool operator==(const NiftiIntent&, const NiftiIntent&) = default;
};

/// NIfTI-1 single-file volume. Geometry comes from the sform only.
/// A 4-D file with dim[4] = 3 and vector intent loads as a VectorField
/// (component planes on disk, interleaved in memory).
struct NiftiVolume {
    std::variant<ScalarField, VectorField> data;
    std::int16_t datatype = nifti::kFloat32;  ///< on-disk code the volume was read from
    std::int16_t sform_code = 1;
    NiftiIntent intent;
    std::string descrip;  ///< up to 80 bytes

    const GridSpec& grid() const;
};

/// Throws BadMagic, UnsupportedDatatype, NoSform, Truncated, InvalidField.
NiftiVolume read_nifti(std::span<const std::uint8_t> bytes);

/// Canonical single-file NIfTI-1: little-endian header, float32 payload,
/// sform set, qform unset, vox_offset 352.
Bytes write_nifti(const NiftiVolume& v);

/// gzip-compressed input (.nii.gz) is detected by its magic bytes and
/// inflated before parsing.
Bytes maybe_gunzip(Bytes bytes);
Bytes gzip(std::span<const std::uint8_t> bytes);

NiftiVolume read_nifti_file(const std::filesystem::path& path);
/// Compresses when the path ends in ".gz".
void write_nifti_file(const std::filesystem::path& path, const NiftiVolume& v);

using Triangle = std::array<std::uint32_t, 3>;

struct SurfaceMesh {
    std::vector<Vec3> vertices;  ///< mm
    std::vector<Triangle> triangles;
    std::vector<double> scalars;  ///< optional per-vertex channel (empty or one per vertex)

    /// Throws InvalidMesh on out-of-range indices, degenerate triangles,
    /// non-finite coordinates or a mis-sized scalar channel.
    void validate() const;
};

/// Binary STL. Vertices are deduplicated by exact coordinate match, winding
/// is kept, and facets that collapse to a repeated vertex are dropped.
/// Throws Truncated when the facet count disagrees with the byte length,
/// AsciiStlUnsupported for text files, InvalidMesh for non-finite data.
SurfaceMesh read_stl(std::span<const std::uint8_t> bytes);
Bytes write_stl(const SurfaceMesh& mesh);

SurfaceMesh read_stl_file(const std::filesystem::path& path);
void write_stl_file(const std::filesystem::path& path, const SurfaceMesh& mesh);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace tmsnav::io

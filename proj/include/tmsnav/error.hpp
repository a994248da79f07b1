#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tmsnav {

enum class Errc {
    NotRigid,
    InvalidGrid,
    InvalidField,
    InvalidParams,
    SingularVoxel,
    SingularPoint,
    WrongUnitTag,
    GridMismatch,
    NameTooLong,
    Truncated,
    UnknownType,
    BadLength,
    UnsupportedScalarType,
    BadComponentCount,
    UnsupportedSubvolume,
    CrcMismatch,
    BadMagic,
    UnsupportedDatatype,
    NoSform,
    AsciiStlUnsupported,
    InvalidMesh,
    InvalidColorMap,
    InvalidConfig,
    BindFailure,
    AssetLoadFailure,
    SessionClosed,
    Timeout,
    ConnectionLost,
    InvalidScheme,
    Io,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers can dispatch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

class SingularVoxelError : public Error {
public:
    SingularVoxelError(std::size_t voxel_index, const std::string& what)
        : Error(Errc::SingularVoxel, what), voxel_index_(voxel_index) {}

    std::size_t voxel_index() const noexcept { return voxel_index_; }

private:
    std::size_t voxel_index_;
};

}  // namespace tmsnav

#include "tmsnav/error.hpp"

namespace tmsnav {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::NotRigid: return "NotRigid";
        case Errc::InvalidGrid: return "InvalidGrid";
        case Errc::InvalidField: return "InvalidField";
        case Errc::InvalidParams: return "InvalidParams";
        case Errc::SingularVoxel: return "SingularVoxel";
        case Errc::SingularPoint: return "SingularPoint";
        case Errc::WrongUnitTag: return "WrongUnitTag";
        case Errc::GridMismatch: return "GridMismatch";
        case Errc::NameTooLong: return "NameTooLong";
        case Errc::Truncated: return "Truncated";
        case Errc::UnknownType: return "UnknownType";
        case Errc::BadLength: return "BadLength";
        case Errc::UnsupportedScalarType: return "UnsupportedScalarType";
        case Errc::BadComponentCount: return "BadComponentCount";
        case Errc::UnsupportedSubvolume: return "UnsupportedSubvolume";
        case Errc::CrcMismatch: return "CrcMismatch";
        case Errc::BadMagic: return "BadMagic";
        case Errc::UnsupportedDatatype: return "UnsupportedDatatype";
        case Errc::NoSform: return "NoSform";
        case Errc::AsciiStlUnsupported: return "AsciiStlUnsupported";
        case Errc::InvalidMesh: return "InvalidMesh";
        case Errc::InvalidColorMap: return "InvalidColorMap";
        case Errc::InvalidConfig: return "InvalidConfig";
        case Errc::BindFailure: return "BindFailure";
        case Errc::AssetLoadFailure: return "AssetLoadFailure";
        case Errc::SessionClosed: return "SessionClosed";
        case Errc::Timeout: return "Timeout";
        case Errc::ConnectionLost: return "ConnectionLost";
        case Errc::InvalidScheme: return "InvalidScheme";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace tmsnav

#pragma once

// OpenIGTLink-compatible subset: 58-byte header, CRC-64/ECMA-182 over the
// body, TRANSFORM and IMAGE bodies. Everything on the wire is big-endian.

#include "tmsnav/geometry.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tmsnav::igtl {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kHeaderSize = 58;
inline constexpr std::size_t kTypeNameSize = 12;
inline constexpr std::size_t kDeviceNameSize = 20;
inline constexpr std::size_t kTransformBodySize = 48;
inline constexpr std::size_t kImageHeaderSize = 72;

/// Header version 1 is the 58-byte header without the extended header that
/// version 2 (protocol v3) announces.
inline constexpr std::uint16_t kHeaderVersion = 1;
inline constexpr std::uint16_t kImageBodyVersion = 1;

/// Upper bound on accepted body sizes; larger announcements are treated as
/// garbage rather than allocated.
inline constexpr std::uint64_t kMaxBodySize = std::uint64_t{1} << 30;

inline constexpr std::uint64_t kCrc64Polynomial = 0x42F0E1EBA9EA3693ULL;

/// CRC-64/ECMA-182: init 0, no reflection, no final xor.
std::uint64_t crc64(std::span<const std::uint8_t> bytes, std::uint64_t crc = 0);

enum class MessageType { Transform, Image };

std::string_view type_name(MessageType t);

struct Header {
    std::uint16_t version = kHeaderVersion;
    std::string type_name;
    std::string device_name;
    std::uint64_t timestamp = 0;  ///< 32.32 fixed point seconds since the Unix epoch
    std::uint64_t body_size = 0;
    std::uint64_t crc = 0;

    friend bool operator==(const Header&, const Header&) = default;
};

/// Raised for well-formed headers whose type is outside the subset. The
/// stream stays usable by skipping body_size bytes.
class UnknownTypeError : public Error {
public:
    UnknownTypeError(std::string name, std::uint64_t body_size)
        : Error(Errc::UnknownType, "unsupported message type '" + name + "'"),
          name_(std::move(name)),
          body_size_(body_size) {}

    const std::string& name() const noexcept { return name_; }
    std::uint64_t body_size() const noexcept { return body_size_; }

private:
    std::string name_;
    std::uint64_t body_size_;
};

/// Throws NameTooLong for names over 12/20 bytes.
std::array<std::uint8_t, kHeaderSize> encode_header(const Header& h);

/// Throws Truncated below 58 bytes and UnknownTypeError for types outside
/// {TRANSFORM, IMAGE}.
Header decode_header(std::span<const std::uint8_t> bytes);

std::uint64_t to_timestamp(std::chrono::system_clock::time_point t);
std::chrono::system_clock::time_point from_timestamp(std::uint64_t ts);

using TimestampSource = std::function<std::uint64_t()>;
TimestampSource system_timestamp_source();

/// 12 float32: rotation columns then translation (mm).
Bytes encode_transform(const RigidPose& p);
/// Throws BadLength unless exactly 48 bytes; NotRigid from pose validation.
RigidPose decode_transform(std::span<const std::uint8_t> bytes);

enum class ScalarType : std::uint8_t { Float32 = 10 };
enum class Endian : std::uint8_t { Big = 1, Little = 2 };
enum class Coordinate : std::uint8_t { RAS = 1, LPS = 2 };

using ImageField = std::variant<ScalarField, VectorField>;

/// IMAGE body with float32 big-endian pixels, row-major (z,y,x).
/// The image matrix carries axes·diag(spacing) as its columns and, per
/// OpenIGTLink convention, the world position of the volume *center* as its
/// translation. Decoding shifts back to the corner-voxel origin.
Bytes encode_image(const ScalarField& f);
Bytes encode_image(const VectorField& f);

/// Throws Truncated, UnsupportedScalarType, BadComponentCount,
/// UnsupportedSubvolume, InvalidGrid or InvalidField.
ImageField decode_image(std::span<const std::uint8_t> bytes);

using Body = std::variant<RigidPose, ScalarField, VectorField>;

struct Message {
    Header header;
    Body body;
};

/// Verifies the CRC (CrcMismatch) and decodes the body named by the header.
Message decode_message(const Header& header, std::span<const std::uint8_t> body);

class ByteSource {
public:
    virtual ~ByteSource() = default;
    /// Returns 0 only at end of stream.
    virtual std::size_t read_some(std::span<std::uint8_t> out) = 0;
};

class ByteSink {
public:
    virtual ~ByteSink() = default;
    virtual void write(std::span<const std::uint8_t> bytes) = 0;
};

/// In-memory duplex byte stream.
class MemoryStream final : public ByteSource, public ByteSink {
public:
    std::size_t read_some(std::span<std::uint8_t> out) override;
    void write(std::span<const std::uint8_t> bytes) override;

    std::size_t pending() const noexcept { return buffer_.size(); }
    std::deque<std::uint8_t>& buffer() noexcept { return buffer_; }

private:
    std::deque<std::uint8_t> buffer_;
};

/// Frames a message: header with CRC over body, then the body.
Bytes frame_message(MessageType type, std::string_view device_name,
                    std::span<const std::uint8_t> body, std::uint64_t timestamp);

void write_message(ByteSink& sink, MessageType type, std::string_view device_name,
                   std::span<const std::uint8_t> body, std::uint64_t timestamp = 0);

/// Reads one framed message. Returns nullopt on clean end of stream. Body
/// bytes are always consumed before CrcMismatch/UnknownType are thrown, so
/// the next call starts at the following header.
std::optional<Message> read_message(ByteSource& source);

}  // namespace tmsnav::igtl

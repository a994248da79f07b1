#include "tmsnav/igtl.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace tmsnav::igtl {
namespace {

constexpr auto make_crc_table() {
    std::array<std::uint64_t, 256> table{};
    for (std::uint64_t b = 0; b < 256; ++b) {
        std::uint64_t crc = b << 56;
        for (int bit = 0; bit < 8; ++bit) {
            crc = (crc & (std::uint64_t{1} << 63)) ? (crc << 1) ^ kCrc64Polynomial : crc << 1;
        }
        table[b] = crc;
    }
    return table;
}

constexpr auto kCrcTable = make_crc_table();

template <typename T>
void put_be(std::uint8_t* dst, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        dst[i] = static_cast<std::uint8_t>(v >> (8 * (sizeof(T) - 1 - i)));
    }
}

template <typename T>
T get_be(const std::uint8_t* src) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v = static_cast<T>((v << 8) | src[i]);
    }
    return v;
}

void put_f32(std::uint8_t* dst, double v) {
    put_be(dst, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

float get_f32(const std::uint8_t* src, Endian endian) {
    std::uint32_t u = get_be<std::uint32_t>(src);
    if (endian == Endian::Little) {
        u = ((u & 0xFFu) << 24) | ((u & 0xFF00u) << 8) | ((u >> 8) & 0xFF00u) | (u >> 24);
    }
    return std::bit_cast<float>(u);
}

void put_name(std::uint8_t* dst, std::string_view name, std::size_t width) {
    std::memset(dst, 0, width);
    std::memcpy(dst, name.data(), name.size());
}

std::string get_name(const std::uint8_t* src, std::size_t width) {
    const auto* end = std::find(src, src + width, std::uint8_t{0});
    return std::string(src, end);
}

bool known_type(std::string_view name) {
    return name == type_name(MessageType::Transform) || name == type_name(MessageType::Image);
}

void put_image_header(Bytes& out, const GridSpec& g, std::uint8_t components) {
    out.resize(kImageHeaderSize);
    std::uint8_t* p = out.data();
    put_be<std::uint16_t>(p, kImageBodyVersion);
    p[2] = components;
    p[3] = static_cast<std::uint8_t>(ScalarType::Float32);
    p[4] = static_cast<std::uint8_t>(Endian::Big);
    p[5] = static_cast<std::uint8_t>(Coordinate::RAS);
    for (int a = 0; a < 3; ++a) {
        if (g.dims()[a] > 0xFFFF) {
            throw Error(Errc::InvalidGrid, "IMAGE dimensions are limited to 65535 per axis");
        }
        put_be<std::uint16_t>(p + 6 + 2 * a, static_cast<std::uint16_t>(g.dims()[a]));
    }
    const Mat3 lin = g.index_to_world_linear();
    const Vec3 half_extent((g.dims()[0] - 1) / 2.0, (g.dims()[1] - 1) / 2.0,
                           (g.dims()[2] - 1) / 2.0);
    const Vec3 center = g.origin() + lin * half_extent;
    for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < 3; ++r) {
            put_f32(p + 12 + 4 * (3 * c + r), lin(r, c));
        }
        put_f32(p + 48 + 4 * c, center[c]);
    }
    for (int a = 0; a < 3; ++a) {
        put_be<std::uint16_t>(p + 60 + 2 * a, 0);
        put_be<std::uint16_t>(p + 66 + 2 * a, static_cast<std::uint16_t>(g.dims()[a]));
    }
}

}  // namespace

std::uint64_t crc64(std::span<const std::uint8_t> bytes, std::uint64_t crc) {
    for (std::uint8_t b : bytes) {
        crc = kCrcTable[((crc >> 56) ^ b) & 0xFF] ^ (crc << 8);
    }
    return crc;
}

std::string_view type_name(MessageType t) {
    return t == MessageType::Transform ? "TRANSFORM" : "IMAGE";
}

std::array<std::uint8_t, kHeaderSize> encode_header(const Header& h) {
    if (h.type_name.size() > kTypeNameSize) {
        throw Error(Errc::NameTooLong, "type name '" + h.type_name + "' exceeds 12 bytes");
    }
    if (h.device_name.size() > kDeviceNameSize) {
        throw Error(Errc::NameTooLong, "device name '" + h.device_name + "' exceeds 20 bytes");
    }
    std::array<std::uint8_t, kHeaderSize> out{};
    put_be(out.data(), h.version);
    put_name(out.data() + 2, h.type_name, kTypeNameSize);
    put_name(out.data() + 14, h.device_name, kDeviceNameSize);
    put_be(out.data() + 34, h.timestamp);
    put_be(out.data() + 42, h.body_size);
    put_be(out.data() + 50, h.crc);
    return out;
}

Header decode_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize) {
        throw Error(Errc::Truncated, "header needs 58 bytes, got " + std::to_string(bytes.size()));
    }
    const std::uint8_t* p = bytes.data();
    Header h;
    h.version = get_be<std::uint16_t>(p);
    h.type_name = get_name(p + 2, kTypeNameSize);
    h.device_name = get_name(p + 14, kDeviceNameSize);
    h.timestamp = get_be<std::uint64_t>(p + 34);
    h.body_size = get_be<std::uint64_t>(p + 42);
    h.crc = get_be<std::uint64_t>(p + 50);
    if (!known_type(h.type_name)) {
        throw UnknownTypeError(h.type_name, h.body_size);
    }
    return h;
}

std::uint64_t to_timestamp(std::chrono::system_clock::time_point t) {
    const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t.time_since_epoch());
    const auto secs = static_cast<std::uint64_t>(ns.count() / 1'000'000'000);
    const auto frac_ns = static_cast<std::uint64_t>(ns.count() % 1'000'000'000);
    const std::uint64_t frac = (frac_ns << 32) / 1'000'000'000;
    return (secs << 32) | (frac & 0xFFFFFFFFu);
}

std::chrono::system_clock::time_point from_timestamp(std::uint64_t ts) {
    const std::uint64_t secs = ts >> 32;
    const std::uint64_t frac_ns = ((ts & 0xFFFFFFFFu) * 1'000'000'000) >> 32;
    return std::chrono::system_clock::time_point(std::chrono::duration_cast<
                                                 std::chrono::system_clock::duration>(
        std::chrono::seconds(secs) + std::chrono::nanoseconds(frac_ns)));
}

TimestampSource system_timestamp_source() {
    return [] { return to_timestamp(std::chrono::system_clock::now()); };
}

Bytes encode_transform(const RigidPose& pose) {
    Bytes out(kTransformBodySize);
    const Mat4& m = pose.matrix();
    for (int c = 0; c < 4; ++c) {
        for (int r = 0; r < 3; ++r) {
            put_f32(out.data() + 4 * (3 * c + r), m(r, c));
        }
    }
    return out;
}

RigidPose decode_transform(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kTransformBodySize) {
        throw Error(Errc::BadLength,
                    "TRANSFORM body must be 48 bytes, got " + std::to_string(bytes.size()));
    }
    Mat3 r;
    Vec3 t;
    for (int c = 0; c < 3; ++c) {
        for (int row = 0; row < 3; ++row) {
            r(row, c) = get_f32(bytes.data() + 4 * (3 * c + row), Endian::Big);
        }
        t[c] = get_f32(bytes.data() + 36 + 4 * c, Endian::Big);
    }
    return make_pose(r, t);
}

Bytes encode_image(const ScalarField& f) {
    Bytes out;
    put_image_header(out, f.grid(), 1);
    const auto& v = f.data();
    out.resize(kImageHeaderSize + 4 * v.size());
    std::uint8_t* dst = out.data() + kImageHeaderSize;
    for (std::size_t i = 0; i < v.size(); ++i) {
        put_f32(dst + 4 * i, v[i]);
    }
    return out;
}

Bytes encode_image(const VectorField& f) {
    Bytes out;
    put_image_header(out, f.grid(), 3);
    const auto& v = f.data();
    out.resize(kImageHeaderSize + 12 * v.size());
    std::uint8_t* dst = out.data() + kImageHeaderSize;
    for (std::size_t i = 0; i < v.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            put_f32(dst + 12 * i + 4 * c, v[i][c]);
        }
    }
    return out;
}

ImageField decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kImageHeaderSize) {
        throw Error(Errc::Truncated, "IMAGE header needs 72 bytes");
    }
    const std::uint8_t* p = bytes.data();
    const std::uint8_t components = p[2];
    if (components != 1 && components != 3) {
        throw Error(Errc::BadComponentCount,
                    "IMAGE has " + std::to_string(components) + " components");
    }
    if (p[3] != static_cast<std::uint8_t>(ScalarType::Float32)) {
        throw Error(Errc::UnsupportedScalarType,
                    "IMAGE scalar type " + std::to_string(p[3]) + " is not float32");
    }
    if (p[4] != static_cast<std::uint8_t>(Endian::Big) &&
        p[4] != static_cast<std::uint8_t>(Endian::Little)) {
        throw Error(Errc::UnsupportedScalarType, "IMAGE endianness code is invalid");
    }
    const auto endian = static_cast<Endian>(p[4]);
    GridDims dims{};
    for (int a = 0; a < 3; ++a) {
        dims[a] = get_be<std::uint16_t>(p + 6 + 2 * a);
        if (get_be<std::uint16_t>(p + 60 + 2 * a) != 0 ||
            get_be<std::uint16_t>(p + 66 + 2 * a) != dims[a]) {
            throw Error(Errc::UnsupportedSubvolume, "only full-volume IMAGE messages are supported");
        }
    }
    const std::uint64_t count = std::uint64_t{dims[0]} * dims[1] * dims[2];
    const std::uint64_t expected = kImageHeaderSize + count * components * 4;
    if (bytes.size() < expected) {
        throw Error(Errc::Truncated, "IMAGE pixel data is short");
    }
    if (bytes.size() > expected) {
        throw Error(Errc::BadLength, "IMAGE body has trailing bytes");
    }
    Mat3 lin;
    Vec3 center;
    for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < 3; ++r) {
            lin(r, c) = get_f32(p + 12 + 4 * (3 * c + r), Endian::Big);
        }
        center[c] = get_f32(p + 48 + 4 * c, Endian::Big);
    }
    const Vec3 half_extent((dims[0] - 1.0) / 2.0, (dims[1] - 1.0) / 2.0, (dims[2] - 1.0) / 2.0);
    GridSpec grid = grid_from_affine(dims, lin, center - lin * half_extent);

    const std::uint8_t* px = p + kImageHeaderSize;
    if (components == 1) {
        std::vector<double> data(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            data[i] = get_f32(px + 4 * i, endian);
        }
        return ScalarField(std::move(grid), std::move(data));
    }
    std::vector<Vec3> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        data[i] = Vec3(get_f32(px + 12 * i, endian), get_f32(px + 12 * i + 4, endian),
                       get_f32(px + 12 * i + 8, endian));
    }
    return VectorField(std::move(grid), std::move(data), FieldUnit::EField);
}

Message decode_message(const Header& header, std::span<const std::uint8_t> body) {
    if (header.body_size != body.size()) {
        throw Error(Errc::BadLength, "body length does not match header");
    }
    if (crc64(body) != header.crc) {
        throw Error(Errc::CrcMismatch, "CRC mismatch on " + header.type_name + " from '" +
                                           header.device_name + "'");
    }
    if (header.type_name == type_name(MessageType::Transform)) {
        return Message{header, decode_transform(body)};
    }
    if (header.type_name == type_name(MessageType::Image)) {
        return std::visit([&](auto&& f) { return Message{header, Body(std::move(f))}; },
                          decode_image(body));
    }
    throw UnknownTypeError(header.type_name, header.body_size);
}

std::size_t MemoryStream::read_some(std::span<std::uint8_t> out) {
    const std::size_t n = std::min(out.size(), buffer_.size());
    std::copy_n(buffer_.begin(), n, out.begin());
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
    return n;
}

void MemoryStream::write(std::span<const std::uint8_t> bytes) {
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

Bytes frame_message(MessageType type, std::string_view device_name,
                    std::span<const std::uint8_t> body, std::uint64_t timestamp) {
    Header h;
    h.type_name = std::string(type_name(type));
    h.device_name = std::string(device_name);
    h.timestamp = timestamp;
    h.body_size = body.size();
    h.crc = crc64(body);
    const auto head = encode_header(h);
    Bytes out(kHeaderSize + body.size());
    std::copy(head.begin(), head.end(), out.begin());
    if (!body.empty()) {
        std::memcpy(out.data() + kHeaderSize, body.data(), body.size());
    }
    return out;
}

void write_message(ByteSink& sink, MessageType type, std::string_view device_name,
                   std::span<const std::uint8_t> body, std::uint64_t timestamp) {
    sink.write(frame_message(type, device_name, body, timestamp));
}

namespace {

// Fills out completely; returns the number of bytes read before EOF.
std::size_t read_fully(ByteSource& source, std::span<std::uint8_t> out) {
    std::size_t got = 0;
    while (got < out.size()) {
        const std::size_t n = source.read_some(out.subspan(got));
        if (n == 0) {
            break;
        }
        got += n;
    }
    return got;
}

void skip_bytes(ByteSource& source, std::uint64_t count) {
    std::array<std::uint8_t, 4096> scratch{};
    while (count > 0) {
        const std::size_t want = static_cast<std::size_t>(std::min<std::uint64_t>(count, scratch.size()));
        const std::size_t got = read_fully(source, std::span(scratch.data(), want));
        if (got < want) {
            throw Error(Errc::Truncated, "stream ended inside a skipped body");
        }
        count -= got;
    }
}

}  // namespace

std::optional<Message> read_message(ByteSource& source) {
    std::array<std::uint8_t, kHeaderSize> head{};
    const std::size_t got = read_fully(source, head);
    if (got == 0) {
        return std::nullopt;
    }
    if (got < kHeaderSize) {
        throw Error(Errc::Truncated, "stream ended inside a header");
    }
    Header header;
    try {
        header = decode_header(head);
    } catch (const UnknownTypeError& e) {
        if (e.body_size() > kMaxBodySize) {
            throw Error(Errc::BadLength, "announced body size is implausible");
        }
        skip_bytes(source, e.body_size());
        throw;
    }
    if (header.body_size > kMaxBodySize) {
        throw Error(Errc::BadLength, "announced body size is implausible");
    }
    // Grow with the data actually received, so a lying header costs nothing.
    constexpr std::size_t kChunk = std::size_t{1} << 20;
    Bytes body;
    while (body.size() < header.body_size) {
        const std::size_t have = body.size();
        const std::size_t want = std::min<std::size_t>(kChunk, header.body_size - have);
        body.resize(have + want);
        if (read_fully(source, std::span(body).subspan(have)) < want) {
            throw Error(Errc::Truncated, "stream ended inside a body");
        }
    }
    return decode_message(header, body);
}

}  // namespace tmsnav::igtl

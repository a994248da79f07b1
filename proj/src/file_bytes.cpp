#include "tmsnav/volume_io.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

namespace tmsnav::io {

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::Io, "cannot open " + path.string());
    }
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(Errc::Io, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(Errc::Io, "short write to " + path.string());
    }
}

Bytes maybe_gunzip(Bytes bytes) {
    if (bytes.size() < 2 || bytes[0] != 0x1f || bytes[1] != 0x8b) {
        return bytes;
    }
    z_stream zs{};
    // 16 + MAX_WBITS: expect a gzip wrapper.
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) {
        throw Error(Errc::Io, "zlib init failed");
    }
    Bytes out;
    std::array<std::uint8_t, 1 << 16> chunk{};
    zs.next_in = bytes.data();
    zs.avail_in = static_cast<uInt>(bytes.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw Error(Errc::Truncated, "corrupt or truncated gzip stream");
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw Error(Errc::Truncated, "gzip stream ended early");
        }
    }
    inflateEnd(&zs);
    return out;
}

Bytes gzip(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK) {
        throw Error(Errc::Io, "zlib init failed");
    }
    Bytes out(deflateBound(&zs, static_cast<uLong>(bytes.size())));
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) {
        throw Error(Errc::Io, "gzip compression failed");
    }
    out.resize(zs.total_out);
    return out;
}

}  // namespace tmsnav::io

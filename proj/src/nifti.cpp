#include "tmsnav/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace tmsnav::io {
namespace {

// Header field offsets (NIfTI-1, 348 bytes).
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffIntentP1 = 56;
constexpr std::size_t kOffIntentCode = 68;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrow = 280;
constexpr std::size_t kOffIntentName = 328;
constexpr std::size_t kOffMagic = 344;

class HeaderReader {
public:
    HeaderReader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <typename T>
    T get(std::size_t off) const {
        std::array<std::uint8_t, sizeof(T)> raw{};
        std::memcpy(raw.data(), bytes_.data() + off, sizeof(T));
        if (swap_) {
            std::reverse(raw.begin(), raw.end());
        }
        return std::bit_cast<T>(raw);
    }

    std::string text(std::size_t off, std::size_t width) const {
        const auto* b = bytes_.data() + off;
        return std::string(b, std::find(b, b + width, std::uint8_t{0}));
    }

private:
    std::span<const std::uint8_t> bytes_;
    bool swap_;
};

template <typename T>
void put_le(Bytes& out, std::size_t off, T v) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(raw.begin(), raw.end());
    }
    std::memcpy(out.data() + off, raw.data(), sizeof(T));
}

void put_text(Bytes& out, std::size_t off, const std::string& s, std::size_t width) {
    std::memcpy(out.data() + off, s.data(), std::min(s.size(), width));
}

std::size_t bytes_per_voxel(std::int16_t datatype) {
    switch (datatype) {
        case nifti::kUint8: return 1;
        case nifti::kInt16: return 2;
        case nifti::kFloat32: return 4;
        default:
            throw Error(Errc::UnsupportedDatatype,
                        "NIfTI datatype " + std::to_string(datatype) + " is not supported");
    }
}

}  // namespace

const GridSpec& NiftiVolume::grid() const {
    return std::visit([](const auto& f) -> const GridSpec& { return f.grid(); }, data);
}

NiftiVolume read_nifti(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < static_cast<std::size_t>(nifti::kHeaderSize)) {
        throw Error(Errc::Truncated, "NIfTI header needs 348 bytes");
    }
    bool swap = false;
    {
        HeaderReader probe(bytes, false);
        const auto sz = probe.get<std::int32_t>(0);
        if (sz != nifti::kHeaderSize) {
            if (__builtin_bswap32(static_cast<std::uint32_t>(sz)) !=
                static_cast<std::uint32_t>(nifti::kHeaderSize)) {
                throw Error(Errc::BadMagic, "sizeof_hdr is not 348");
            }
            swap = true;
        }
    }
    if constexpr (std::endian::native == std::endian::big) {
        swap = !swap;
    }
    const HeaderReader h(bytes, swap);
    if (std::memcmp(bytes.data() + kOffMagic, "n+1\0", 4) != 0) {
        throw Error(Errc::BadMagic, "only single-file NIfTI-1 (magic n+1) is supported");
    }

    const auto ndim = h.get<std::int16_t>(kOffDim);
    if (ndim != 3 && ndim != 4) {
        throw Error(Errc::InvalidField, "dim[0] must be 3 or 4, got " + std::to_string(ndim));
    }
    GridDims dims{};
    for (int a = 0; a < 3; ++a) {
        const auto d = h.get<std::int16_t>(kOffDim + 2 * (a + 1));
        if (d < 1) {
            throw Error(Errc::InvalidGrid, "NIfTI dimensions must be positive");
        }
        dims[a] = static_cast<std::size_t>(d);
    }
    const std::int16_t dim4 = ndim == 4 ? h.get<std::int16_t>(kOffDim + 8) : 1;

    struct {
        NiftiIntent intent;
        std::string descrip;
        std::int16_t datatype = 0;
        std::int16_t sform_code = 0;
    } v;
    v.intent.p1 = h.get<float>(kOffIntentP1);
    v.intent.p2 = h.get<float>(kOffIntentP1 + 4);
    v.intent.p3 = h.get<float>(kOffIntentP1 + 8);
    v.intent.code = h.get<std::int16_t>(kOffIntentCode);
    v.intent.name = h.text(kOffIntentName, 16);
    v.descrip = h.text(kOffDescrip, 80);
    v.datatype = h.get<std::int16_t>(kOffDatatype);

    const bool vector = dim4 == 3 && v.intent.code == nifti::kIntentVector;
    if (dim4 != 1 && !vector) {
        throw Error(Errc::InvalidField, "4-D NIfTI must have dim[4] = 1, or 3 with vector intent");
    }
    const std::size_t bpv = bytes_per_voxel(v.datatype);

    v.sform_code = h.get<std::int16_t>(kOffSformCode);
    if (v.sform_code <= 0) {
        throw Error(Errc::NoSform, "NIfTI file has no sform; qform-only files are unsupported");
    }
    Mat3 lin;
    Vec3 origin;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            lin(r, c) = h.get<float>(kOffSrow + 16 * r + 4 * c);
        }
        origin[r] = h.get<float>(kOffSrow + 16 * r + 12);
    }
    GridSpec grid = grid_from_affine(dims, lin, origin);

    const float vox_offset = h.get<float>(kOffVoxOffset);
    if (!(vox_offset >= static_cast<float>(nifti::kHeaderSize)) || vox_offset > 1e9f) {
        throw Error(Errc::Truncated, "vox_offset points inside the header");
    }
    const std::size_t data_start = static_cast<std::size_t>(vox_offset);
    const std::size_t count = grid.voxel_count();
    const std::size_t components = vector ? 3 : 1;
    const std::size_t payload = count * components * bpv;
    if (bytes.size() < data_start || bytes.size() - data_start < payload) {
        throw Error(Errc::Truncated, "NIfTI payload is shorter than the header announces");
    }

    float slope = h.get<float>(kOffSclSlope);
    float inter = h.get<float>(kOffSclInter);
    const bool scaled = std::isfinite(slope) && slope != 0.0f && (slope != 1.0f || inter != 0.0f);
    if (!std::isfinite(inter)) {
        inter = 0.0f;
    }

    const HeaderReader data(bytes.subspan(data_start), swap);
    auto sample = [&](std::size_t i) -> double {
        double raw = 0.0;
        switch (v.datatype) {
            case nifti::kUint8: raw = bytes[data_start + i]; break;
            case nifti::kInt16: raw = data.get<std::int16_t>(2 * i); break;
            default: raw = data.get<float>(4 * i); break;
        }
        return scaled ? static_cast<double>(slope) * raw + static_cast<double>(inter) : raw;
    };

    if (vector) {
        std::vector<Vec3> values(count);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < count; ++i) {
                values[i][static_cast<Eigen::Index>(c)] = sample(c * count + i);
            }
        }
        return NiftiVolume{VectorField(std::move(grid), std::move(values), FieldUnit::EField),
                           v.datatype, v.sform_code, v.intent, v.descrip};
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        values[i] = sample(i);
    }
    return NiftiVolume{ScalarField(std::move(grid), std::move(values)), v.datatype, v.sform_code,
                       v.intent, v.descrip};
}

Bytes write_nifti(const NiftiVolume& v) {
    const GridSpec& g = v.grid();
    const bool vector = std::holds_alternative<VectorField>(v.data);
    const std::size_t count = g.voxel_count();
    const std::size_t components = vector ? 3 : 1;
    for (std::size_t d : g.dims()) {
        if (d > 32767) {
            throw Error(Errc::InvalidGrid, "NIfTI-1 dimensions are limited to 32767");
        }
    }

    Bytes out(static_cast<std::size_t>(nifti::kVoxOffset) + count * components * 4, 0);
    put_le<std::int32_t>(out, 0, nifti::kHeaderSize);
    put_le<std::int16_t>(out, kOffDim, vector ? 4 : 3);
    for (int a = 0; a < 7; ++a) {
        std::int16_t d = 1;
        if (a < 3) {
            d = static_cast<std::int16_t>(g.dims()[a]);
        } else if (a == 3 && vector) {
            d = 3;
        }
        put_le<std::int16_t>(out, kOffDim + 2 * (a + 1), d);
    }
    const NiftiIntent intent = [&] {
        NiftiIntent i = v.intent;
        if (vector) {
            i.code = nifti::kIntentVector;
        }
        return i;
    }();
    put_le<float>(out, kOffIntentP1, intent.p1);
    put_le<float>(out, kOffIntentP1 + 4, intent.p2);
    put_le<float>(out, kOffIntentP1 + 8, intent.p3);
    put_le<std::int16_t>(out, kOffIntentCode, intent.code);
    put_le<std::int16_t>(out, kOffDatatype, nifti::kFloat32);
    put_le<std::int16_t>(out, kOffBitpix, 32);
    // pixdim is the length of the stored (float32) sform column, so a file
    // that is read and written again comes out identical.
    const Eigen::Matrix3f lin32 = g.index_to_world_linear().cast<float>();
    put_le<float>(out, kOffPixdim, 1.0f);
    for (int a = 0; a < 3; ++a) {
        put_le<float>(out, kOffPixdim + 4 * (a + 1),
                      static_cast<float>(lin32.col(a).cast<double>().norm()));
    }
    put_le<float>(out, kOffVoxOffset, static_cast<float>(nifti::kVoxOffset));
    put_le<float>(out, kOffSclSlope, 1.0f);
    put_le<float>(out, kOffSclInter, 0.0f);
    out[kOffXyztUnits] = static_cast<std::uint8_t>(nifti::kUnitsMm);
    put_text(out, kOffDescrip, v.descrip, 80);
    put_le<std::int16_t>(out, kOffQformCode, 0);
    put_le<std::int16_t>(out, kOffSformCode, v.sform_code > 0 ? v.sform_code : std::int16_t{1});
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            put_le<float>(out, kOffSrow + 16 * r + 4 * c, lin32(r, c));
        }
        put_le<float>(out, kOffSrow + 16 * r + 12, static_cast<float>(g.origin()[r]));
    }
    put_text(out, kOffIntentName, intent.name, 16);
    std::memcpy(out.data() + kOffMagic, "n+1\0", 4);

    std::size_t off = static_cast<std::size_t>(nifti::kVoxOffset);
    if (vector) {
        const auto& d = std::get<VectorField>(v.data).data();
        for (int c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < count; ++i, off += 4) {
                put_le<float>(out, off, static_cast<float>(d[i][c]));
            }
        }
    } else {
        for (double value : std::get<ScalarField>(v.data).data()) {
            put_le<float>(out, off, static_cast<float>(value));
            off += 4;
        }
    }
    return out;
}

NiftiVolume read_nifti_file(const std::filesystem::path& path) {
    return read_nifti(maybe_gunzip(read_file(path)));
}

void write_nifti_file(const std::filesystem::path& path, const NiftiVolume& v) {
    const Bytes raw = write_nifti(v);
    if (path.extension() == ".gz") {
        write_file(path, gzip(raw));
    } else {
        write_file(path, raw);
    }
}

}  // namespace tmsnav::io

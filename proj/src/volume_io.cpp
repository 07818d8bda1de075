#include "mrvf/volume_io.hpp"

#include <fstream>
#include <string>

#include "mrvf/binary_io.hpp"
#include "mrvf/errors.hpp"

namespace mrvf::io {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + path.string() + "' for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path.string() + "'");
    return is;
}

void put_header(std::ostream& os, const char* magic, Dims d, Vec3 h) {
    os.write(magic, 4);
    put_u32(os, static_cast<std::uint32_t>(d.nx));
    put_u32(os, static_cast<std::uint32_t>(d.ny));
    put_u32(os, static_cast<std::uint32_t>(d.nz));
    put_f32(os, static_cast<float>(h.x));
    put_f32(os, static_cast<float>(h.y));
    put_f32(os, static_cast<float>(h.z));
}

Dims get_dims(std::istream& is) {
    Dims d;
    d.nx = get_u32(is, "nx");
    d.ny = get_u32(is, "ny");
    d.nz = get_u32(is, "nz");
    if (d.nx == 0 || d.ny == 0 || d.nz == 0) throw DimensionError("zero dimension in header");
    return d;
}

Vec3 get_spacing(std::istream& is) {
    Vec3 h;
    h.x = get_f32(is, "spacing");
    h.y = get_f32(is, "spacing");
    h.z = get_f32(is, "spacing");
    return h;
}

void finish(std::ofstream& os, const std::filesystem::path& path) {
    os.flush();
    if (!os) throw Error("write failed for '" + path.string() + "'");
}

} // namespace

void write_mask(const Lattice3D& lattice, const std::filesystem::path& path) {
    auto os = open_out(path);
    put_header(os, "VXM1", lattice.dims(), lattice.spacing());
    const auto mask = lattice.mask();
    os.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
    finish(os, path);
}

Lattice3D ingest_mask(const std::filesystem::path& path) {
    auto is = open_in(path);
    expect_magic(is, "VXM1");
    const Dims d = get_dims(is);
    const Vec3 h = get_spacing(is);
    std::vector<std::uint8_t> mask(d.count());
    read_exact(is, reinterpret_cast<char*>(mask.data()), mask.size(), "mask payload");
    expect_eof(is);
    return Lattice3D(d, h, std::move(mask));
}

void write_float_volume(const FloatVolume& vol, const std::filesystem::path& path) {
    if (vol.values.size() != vol.dims.count()) throw DimensionError("volume size mismatch");
    auto os = open_out(path);
    put_header(os, "VXF1", vol.dims, vol.spacing);
    for (float v : vol.values) put_f32(os, v);
    finish(os, path);
}

FloatVolume read_float_volume(const std::filesystem::path& path) {
    auto is = open_in(path);
    expect_magic(is, "VXF1");
    FloatVolume vol;
    vol.dims = get_dims(is);
    vol.spacing = get_spacing(is);
    vol.values.resize(vol.dims.count());
    for (auto& v : vol.values) v = get_f32(is, "VXF1 payload");
    expect_eof(is);
    return vol;
}

void write_fingerprint_volume(const FingerprintVolume& vol, const std::filesystem::path& path) {
    if (vol.values.size() != vol.dims.count() * vol.length)
        throw DimensionError("fingerprint volume size mismatch");
    auto os = open_out(path);
    os.write("FPV1", 4);
    put_u32(os, static_cast<std::uint32_t>(vol.dims.nx));
    put_u32(os, static_cast<std::uint32_t>(vol.dims.ny));
    put_u32(os, static_cast<std::uint32_t>(vol.dims.nz));
    put_u32(os, static_cast<std::uint32_t>(vol.length));
    for (float v : vol.values) put_f32(os, v);
    finish(os, path);
}

FingerprintVolume read_fingerprint_volume(const std::filesystem::path& path) {
    auto is = open_in(path);
    expect_magic(is, "FPV1");
    FingerprintVolume vol;
    vol.dims = get_dims(is);
    vol.length = get_u32(is, "fingerprint length");
    if (vol.length == 0) throw DimensionError("zero fingerprint length");
    vol.values.resize(vol.dims.count() * vol.length);
    for (auto& v : vol.values) v = get_f32(is, "FPV1 payload");
    expect_eof(is);
    return vol;
}

} // namespace mrvf::io

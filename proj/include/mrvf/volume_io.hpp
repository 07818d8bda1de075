#pragma once

#include <filesystem>
#include <vector>

#include "mrvf/lattice.hpp"

namespace mrvf::io {

/// VXM1: "VXM1", u32 nx ny nz, f32 spacing xyz (µm), nx*ny*nz bytes of 0/1, x-fastest.
void write_mask(const Lattice3D& lattice, const std::filesystem::path& path);
Lattice3D ingest_mask(const std::filesystem::path& path);

/// Scalar volume with the VXM1 header layout and an f32 payload ("VXF1").
struct FloatVolume {
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<float> values;
};

void write_float_volume(const FloatVolume& vol, const std::filesystem::path& path);
FloatVolume read_float_volume(const std::filesystem::path& path);

/// FPV1 fingerprint volume: "FPV1", u32 nx ny nz, u32 length, then one f32 vector of
/// `length` samples per voxel, voxels in x-fastest order.
struct FingerprintVolume {
    Dims dims;
    std::size_t length = 0;
    std::vector<float> values;  // dims.count() * length

    std::span<const float> voxel(std::size_t i) const {
        return std::span<const float>(values).subspan(i * length, length);
    }
};

void write_fingerprint_volume(const FingerprintVolume& vol, const std::filesystem::path& path);
FingerprintVolume read_fingerprint_volume(const std::filesystem::path& path);

} // namespace mrvf::io

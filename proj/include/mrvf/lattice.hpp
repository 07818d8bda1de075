#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mrvf {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
    double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

double dot(Vec3 a, Vec3 b);
double norm(Vec3 a);

/// Grid size in cells.
struct Dims {
    std::size_t nx = 1;
    std::size_t ny = 1;
    std::size_t nz = 1;

    std::size_t operator[](std::size_t i) const { return i == 0 ? nx : (i == 1 ? ny : nz); }
    std::size_t count() const { return nx * ny * nz; }
    friend bool operator==(const Dims&, const Dims&) = default;
};

/// Binary occupancy grid with physical spacing (µm). Index order is x-fastest.
class Lattice3D {
public:
    Lattice3D() = default;
    /// Empty (all background) lattice.
    Lattice3D(Dims dims, Vec3 spacing);
    Lattice3D(Dims dims, Vec3 spacing, std::vector<std::uint8_t> mask);

    const Dims& dims() const { return dims_; }
    const Vec3& spacing() const { return spacing_; }
    Vec3 extent() const;
    std::size_t size() const { return mask_.size(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + dims_.nx * (y + dims_.ny * z);
    }
    std::uint8_t operator()(std::size_t x, std::size_t y, std::size_t z) const {
        return mask_[index(x, y, z)];
    }
    std::uint8_t& operator()(std::size_t x, std::size_t y, std::size_t z) {
        return mask_[index(x, y, z)];
    }

    std::span<const std::uint8_t> mask() const { return mask_; }
    std::span<std::uint8_t> mask() { return mask_; }

    std::size_t occupied() const;

    friend bool operator==(const Lattice3D&, const Lattice3D&) = default;

private:
    Dims dims_{};
    Vec3 spacing_{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> mask_;
};

} // namespace mrvf

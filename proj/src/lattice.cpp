#include "mrvf/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrvf/errors.hpp"

namespace mrvf {

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

namespace {

void check_shape(Dims dims, Vec3 spacing) {
    if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
        throw DimensionError("lattice dimensions must be >= 1");
    if (!(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0) ||
        !std::isfinite(spacing.x) || !std::isfinite(spacing.y) || !std::isfinite(spacing.z))
        throw DimensionError("lattice spacing must be positive and finite");
}

} // namespace

Lattice3D::Lattice3D(Dims dims, Vec3 spacing) : dims_(dims), spacing_(spacing) {
    check_shape(dims, spacing);
    mask_.assign(dims.count(), 0);
}

Lattice3D::Lattice3D(Dims dims, Vec3 spacing, std::vector<std::uint8_t> mask)
    : dims_(dims), spacing_(spacing), mask_(std::move(mask)) {
    check_shape(dims, spacing);
    if (mask_.size() != dims.count())
        throw DimensionError("mask holds " + std::to_string(mask_.size()) + " cells, dims require " +
                             std::to_string(dims.count()));
    for (auto& v : mask_)
        if (v > 1) throw FormatError("mask values must be 0 or 1");
}

Vec3 Lattice3D::extent() const {
    return {static_cast<double>(dims_.nx) * spacing_.x, static_cast<double>(dims_.ny) * spacing_.y,
            static_cast<double>(dims_.nz) * spacing_.z};
}

std::size_t Lattice3D::occupied() const {
    return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

} // namespace mrvf

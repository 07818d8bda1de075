#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "mrvf/lattice.hpp"
#include "mrvf/rng.hpp"

namespace mrvf::geometry {

enum class Provenance : std::uint8_t { Disks2D, Cylinders3D, RealisticMask, Eroded };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

/// How cells beyond the lattice faces are treated.
///   Open:     for distances the outside counts as background; for erosion missing
///             neighbours are ignored (edge replication).
///   Periodic: indices wrap around, matching the field solver and the generators.
enum class Boundary : std::uint8_t { Open, Periodic };

/// A characterized virtual voxel. `bvf` and `mean_radius` are always recomputable
/// from `lattice` with compute_bvf / compute_mean_radius(boundary()).
struct VoxelGeometry {
    Lattice3D lattice;
    double bvf = 0.0;
    double mean_radius = 0.0;  // µm
    Provenance provenance = Provenance::RealisticMask;
    std::uint64_t seed = 0;

    Boundary boundary() const {
        return provenance == Provenance::Disks2D || provenance == Provenance::Cylinders3D
                   ? Boundary::Periodic
                   : Boundary::Open;
    }
};

/// Straight vessel: an axis through `axis_point` along unit `direction`.
struct CylinderSpec {
    Vec3 axis_point;
    Vec3 direction;
    double radius = 0.0;  // µm

    /// Throws ValidationError unless |direction| = 1 within 1e-9 and radius > 0.
    void validate() const;
};

double compute_bvf(const Lattice3D& lattice);

/// Euclidean distance (µm) from every cell centre to the nearest background cell
/// centre; 0 on background cells. Exact separable transform.
std::vector<double> distance_transform(const Lattice3D& lattice, Boundary boundary);

/// Local thickness (µm): for each vessel cell, the largest distance-transform value
/// among inscribed balls that cover it, i.e. the medial radius of the vessel it belongs
/// to. 0 on background cells.
std::vector<double> local_thickness(const Lattice3D& lattice, Boundary boundary);

/// Mean vessel radius (µm): the medial-axis distance to the nearest background cell,
/// averaged per unit centreline length. Computed from the local thickness t of every
/// vessel cell as sum(1/t) / sum(1/t^2). A fully occupied lattice has no background
/// under periodic wrap and is measured with Open boundaries. Throws EmptyMask on an
/// empty lattice.
double compute_mean_radius(const Lattice3D& lattice, Boundary boundary = Boundary::Open);

/// Wraps a lattice into a VoxelGeometry, measuring bvf and mean radius.
VoxelGeometry characterize(Lattice3D lattice, Provenance provenance, std::uint64_t seed);

struct PlacementOptions {
    std::size_t max_consecutive_failures = 10000;
    /// Shape of the gamma law for cylinder radii; scale = target_mean_radius / shape.
    double radius_shape = 4.0;
};

/// Non-overlapping disks of one radius on a single-slice periodic lattice, added at
/// uniform random centres until the rasterized BVf first reaches `target_bvf`.
VoxelGeometry generate_disks_2d(double target_bvf, double radius, std::size_t nx, std::size_t ny,
                                double spacing, std::uint64_t seed, const PlacementOptions& opts = {});

/// Isotropically oriented, non-overlapping straight cylinders with gamma-distributed
/// radii on a periodic lattice. Each cylinder is a segment centred on its axis point
/// whose length is the box chord along its direction, so its periodic images tile one
/// period; an axis-aligned cylinder is therefore infinite.
VoxelGeometry generate_cylinders_3d(double target_bvf, double target_mean_radius, Dims dims,
                                    double spacing, std::uint64_t seed,
                                    const PlacementOptions& opts = {});

/// Uniform direction on the unit sphere.
Vec3 sample_direction(Rng& rng);

/// Length of the periodic segment used for a cylinder along `direction` in a box.
double periodic_segment_length(Vec3 direction, Vec3 box);

/// Marks cells whose centres lie inside the periodic segment-cylinder. Returns the
/// number of newly occupied cells.
std::size_t rasterize_cylinder(Lattice3D& lattice, const CylinderSpec& cyl, double length);

/// Marks cells whose centres lie within `radius` of `centre` in the xy plane of every
/// slice, with periodic wrap. Returns the number of newly occupied cells.
std::size_t rasterize_disk(Lattice3D& lattice, double cx, double cy, double radius);

/// Non-overlapping tiling into sub-lattices of physical size `voxel_um`, x-fastest order.
/// Partial remainders at the far faces are dropped.
std::vector<Lattice3D> chop(const Lattice3D& volume, Vec3 voxel_um);

/// Nearest-neighbour resampling to `new_spacing`, preserving the physical extent.
Lattice3D rescale(const Lattice3D& lattice, Vec3 new_spacing);

/// 6-connected binary erosion applied `iterations` times.
Lattice3D erode(const Lattice3D& lattice, int iterations, Boundary boundary = Boundary::Open);

} // namespace mrvf::geometry

#include "mrvf/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mrvf/errors.hpp"

namespace mrvf::geometry {

std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::Disks2D: return "Disks2D";
    case Provenance::Cylinders3D: return "Cylinders3D";
    case Provenance::RealisticMask: return "RealisticMask";
    case Provenance::Eroded: return "Eroded";
    }
    return "RealisticMask";
}

Provenance provenance_from_string(std::string_view s) {
    for (auto p : {Provenance::Disks2D, Provenance::Cylinders3D, Provenance::RealisticMask,
                   Provenance::Eroded})
        if (to_string(p) == s) return p;
    throw FormatError("unknown provenance '" + std::string(s) + "'");
}

void CylinderSpec::validate() const {
    if (std::abs(norm(direction) - 1.0) > 1e-9)
        throw ValidationError("cylinder direction must be a unit vector");
    if (!(radius > 0.0)) throw ValidationError("cylinder radius must be positive");
}

double compute_bvf(const Lattice3D& lattice) {
    return static_cast<double>(lattice.occupied()) / static_cast<double>(lattice.size());
}

// ---------------------------------------------------------------------------
// Distance transform

namespace {

constexpr double kFar = 1e30;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) on a line of `n` samples
// spaced `h` apart. `f` holds squared distances; the result replaces it.
void squared_edt_line(std::vector<double>& f, double h, std::vector<std::size_t>& v,
                      std::vector<double>& z, std::vector<double>& out) {
    const std::size_t n = f.size();
    v.resize(n);
    z.resize(n + 1);
    out.resize(n);
    auto pos = [h](std::size_t q) { return static_cast<double>(q) * h; };
    std::size_t k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (std::size_t q = 1; q < n; ++q) {
        auto meet = [&](std::size_t p) {
            return ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
        };
        double s = meet(v[k]);
        while (s <= z[k]) s = meet(v[--k]);
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < pos(q)) ++k;
        const double d = pos(q) - pos(v[k]);
        out[q] = d * d + f[v[k]];
    }
    f.swap(out);
}

// One separable pass along `axis`.
void edt_pass(std::vector<double>& sq, Dims dims, double h, int axis, Boundary boundary) {
    const std::size_t n = dims[static_cast<std::size_t>(axis)];
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? dims.nx : dims.nx * dims.ny);
    const std::size_t lines = dims.count() / n;
    std::vector<double> line, out, z;
    std::vector<std::size_t> v;
    for (std::size_t l = 0; l < lines; ++l) {
        // Base offset of the l-th line that runs along `axis`.
        std::size_t base = 0;
        if (axis == 0) {
            base = l * dims.nx;
        } else if (axis == 1) {
            base = (l % dims.nx) + (l / dims.nx) * dims.nx * dims.ny;
        } else {
            base = l;
        }
        if (boundary == Boundary::Periodic) {
            line.assign(3 * n, 0.0);
            for (std::size_t r = 0; r < 3; ++r)
                for (std::size_t i = 0; i < n; ++i) line[r * n + i] = sq[base + i * stride];
            squared_edt_line(line, h, v, z, out);
            for (std::size_t i = 0; i < n; ++i) sq[base + i * stride] = line[n + i];
        } else {
            line.assign(n + 2, 0.0);
            for (std::size_t i = 0; i < n; ++i) line[i + 1] = sq[base + i * stride];
            squared_edt_line(line, h, v, z, out);
            for (std::size_t i = 0; i < n; ++i) sq[base + i * stride] = line[i + 1];
        }
    }
}

} // namespace

std::vector<double> distance_transform(const Lattice3D& lattice, Boundary boundary) {
    const auto mask = lattice.mask();
    std::vector<double> sq(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) sq[i] = mask[i] ? kFar : 0.0;
    const Vec3 h = lattice.spacing();
    for (int axis = 0; axis < 3; ++axis)
        edt_pass(sq, lattice.dims(), h[static_cast<std::size_t>(axis)], axis, boundary);
    for (auto& d : sq) d = d >= kFar ? std::numeric_limits<double>::infinity() : std::sqrt(d);
    return sq;
}

std::vector<double> local_thickness(const Lattice3D& lattice, Boundary boundary) {
    const auto dist = distance_transform(lattice, boundary);
    const Dims d = lattice.dims();
    const auto mask = lattice.mask();
    const Vec3 h = lattice.spacing();
    std::vector<double> thick(dist.size(), 0.0);

    auto wrap = [](std::ptrdiff_t i, std::size_t n, bool& inside) -> std::size_t {
        const auto sn = static_cast<std::ptrdiff_t>(n);
        if (i >= 0 && i < sn) return static_cast<std::size_t>(i);
        inside = false;
        return static_cast<std::size_t>(((i % sn) + sn) % sn);
    };
    auto at = [&](std::size_t x, std::size_t y, std::size_t z, std::ptrdiff_t dx, std::ptrdiff_t dy,
                  std::ptrdiff_t dz, bool& inside) {
        const auto nx = wrap(static_cast<std::ptrdiff_t>(x) + dx, d.nx, inside);
        const auto ny = wrap(static_cast<std::ptrdiff_t>(y) + dy, d.ny, inside);
        const auto nz = wrap(static_cast<std::ptrdiff_t>(z) + dz, d.nz, inside);
        return lattice.index(nx, ny, nz);
    };

    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
                const std::size_t c = lattice.index(x, y, z);
                if (!mask[c]) continue;
                const double dc = dist[c];
                // Skip balls contained in a neighbour's ball; they cannot raise any cell.
                bool contained = false;
                for (int dz = -1; dz <= 1 && !contained; ++dz)
                    for (int dy = -1; dy <= 1 && !contained; ++dy)
                        for (int dx = -1; dx <= 1 && !contained; ++dx) {
                            if (dx == 0 && dy == 0 && dz == 0) continue;
                            bool inside = true;
                            const std::size_t q = at(x, y, z, dx, dy, dz, inside);
                            if (!inside && boundary == Boundary::Open) continue;
                            const double step = std::hypot(dx * h.x, dy * h.y, dz * h.z);
                            if (dist[q] >= dc + step) contained = true;
                        }
                if (contained) continue;
                const auto rx = static_cast<std::ptrdiff_t>(std::ceil(dc / h.x));
                const auto ry = static_cast<std::ptrdiff_t>(std::ceil(dc / h.y));
                const auto rz = static_cast<std::ptrdiff_t>(std::ceil(dc / h.z));
                for (std::ptrdiff_t dz = -rz; dz <= rz; ++dz)
                    for (std::ptrdiff_t dy = -ry; dy <= ry; ++dy)
                        for (std::ptrdiff_t dx = -rx; dx <= rx; ++dx) {
                            const double px = static_cast<double>(dx) * h.x;
                            const double py = static_cast<double>(dy) * h.y;
                            const double pz = static_cast<double>(dz) * h.z;
                            if (px * px + py * py + pz * pz >= dc * dc) continue;
                            bool inside = true;
                            const std::size_t q = at(x, y, z, dx, dy, dz, inside);
                            if (!inside && boundary == Boundary::Open) continue;
                            thick[q] = std::max(thick[q], dc);
                        }
            }
    return thick;
}

double compute_mean_radius(const Lattice3D& lattice, Boundary boundary) {
    const std::size_t occ = lattice.occupied();
    if (occ == 0) throw EmptyMask("cannot measure radius of an empty mask");
    if (occ == lattice.size()) boundary = Boundary::Open;

    // Each cell of a tube with medial radius r carries 1/(pi r^2) of centreline length,
    // so weighting cells by 1/t^2 turns the volume average into a per-length average of
    // the medial radius.
    const auto thick = local_thickness(lattice, boundary);
    const auto mask = lattice.mask();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < thick.size(); ++i) {
        if (!mask[i]) continue;
        num += 1.0 / thick[i];
        den += 1.0 / (thick[i] * thick[i]);
    }
    return num / den;
}

VoxelGeometry characterize(Lattice3D lattice, Provenance provenance, std::uint64_t seed) {
    VoxelGeometry g;
    g.provenance = provenance;
    g.seed = seed;
    g.bvf = compute_bvf(lattice);
    g.lattice = std::move(lattice);
    g.mean_radius = g.bvf > 0.0 ? compute_mean_radius(g.lattice, g.boundary()) : 0.0;
    return g;
}

// ---------------------------------------------------------------------------
// Rasterization

namespace {

constexpr double kBvfOvershoot = 0.004;  // fraction above target the final cylinder may add
constexpr double kRadiusBand = 0.05;     // relative band for the running mean radius
constexpr int kRadiusRedraws = 1000;
constexpr std::size_t kRetriesPerRadius = 1000;

std::size_t wrap_index(long long i, std::size_t n) {
    const auto sn = static_cast<long long>(n);
    return static_cast<std::size_t>(((i % sn) + sn) % sn);
}

double min_image(double d, double period) { return d - period * std::round(d / period); }

} // namespace

std::size_t rasterize_disk(Lattice3D& lattice, double cx, double cy, double radius) {
    const Dims d = lattice.dims();
    const Vec3 h = lattice.spacing();
    const double r2 = radius * radius;
    const long long x0 = static_cast<long long>(std::floor((cx - radius) / h.x - 0.5));
    const long long x1 = static_cast<long long>(std::ceil((cx + radius) / h.x - 0.5));
    const long long y0 = static_cast<long long>(std::floor((cy - radius) / h.y - 0.5));
    const long long y1 = static_cast<long long>(std::ceil((cy + radius) / h.y - 0.5));
    std::size_t added = 0;
    for (long long j = y0; j <= y1; ++j) {
        const double py = (static_cast<double>(j) + 0.5) * h.y - cy;
        for (long long i = x0; i <= x1; ++i) {
            const double px = (static_cast<double>(i) + 0.5) * h.x - cx;
            if (px * px + py * py > r2) continue;
            const std::size_t xi = wrap_index(i, d.nx);
            const std::size_t yi = wrap_index(j, d.ny);
            for (std::size_t z = 0; z < d.nz; ++z) {
                auto& cell = lattice(xi, yi, z);
                if (!cell) {
                    cell = 1;
                    ++added;
                }
            }
        }
    }
    return added;
}

double periodic_segment_length(Vec3 direction, Vec3 box) {
    double len = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 3; ++i)
        if (std::abs(direction[i]) > 1e-12) len = std::min(len, box[i] / std::abs(direction[i]));
    return len;
}

std::size_t rasterize_cylinder(Lattice3D& lattice, const CylinderSpec& cyl, double length) {
    cyl.validate();
    const Dims d = lattice.dims();
    const Vec3 h = lattice.spacing();
    const double half = 0.5 * length;
    const double r2 = cyl.radius * cyl.radius;
    std::array<long long, 3> lo{}, hi{};
    for (std::size_t a = 0; a < 3; ++a) {
        const double reach = std::abs(cyl.direction[a]) * half + cyl.radius;
        lo[a] = static_cast<long long>(std::floor((cyl.axis_point[a] - reach) / h[a] - 0.5));
        hi[a] = static_cast<long long>(std::ceil((cyl.axis_point[a] + reach) / h[a] - 0.5));
    }
    std::size_t added = 0;
    for (long long k = lo[2]; k <= hi[2]; ++k)
        for (long long j = lo[1]; j <= hi[1]; ++j)
            for (long long i = lo[0]; i <= hi[0]; ++i) {
                const Vec3 p{(static_cast<double>(i) + 0.5) * h.x, (static_cast<double>(j) + 0.5) * h.y,
                             (static_cast<double>(k) + 0.5) * h.z};
                const Vec3 rel = p - cyl.axis_point;
                const double t = dot(rel, cyl.direction);
                if (std::abs(t) > half) continue;
                const Vec3 perp = rel - t * cyl.direction;
                if (dot(perp, perp) > r2) continue;
                auto& cell = lattice(wrap_index(i, d.nx), wrap_index(j, d.ny), wrap_index(k, d.nz));
                if (!cell) {
                    cell = 1;
                    ++added;
                }
            }
    return added;
}

Vec3 sample_direction(Rng& rng) {
    const double cz = 2.0 * uniform01(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * uniform01(rng);
    const double s = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    return {s * std::cos(phi), s * std::sin(phi), cz};
}

namespace {

// Squared distance between segments p1+s*d1 and p2+t*d2, s,t in [0,1].
double segment_distance_sq(Vec3 p1, Vec3 d1, Vec3 p2, Vec3 d2) {
    const Vec3 r = p1 - p2;
    const double a = dot(d1, d1);
    const double e = dot(d2, d2);
    const double f = dot(d2, r);
    const double c = dot(d1, r);
    const double b = dot(d1, d2);
    const double denom = a * e - b * b;
    double s = denom > 1e-14 * a * e ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
    double t = (b * s + f) / e;
    if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
    } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
    }
    const Vec3 diff = (p1 + s * d1) - (p2 + t * d2);
    return dot(diff, diff);
}

struct PlacedCylinder {
    Vec3 centre;
    Vec3 dir;
    double radius;
    double length;
};

// Minimum distance between the periodic images of two segments. When `same` is set
// the zero shift is skipped (self-image test).
double periodic_segment_distance(const PlacedCylinder& a, const PlacedCylinder& b, Vec3 box,
                                 bool same) {
    Vec3 delta = b.centre - a.centre;
    for (std::size_t i = 0; i < 3; ++i) delta[i] = min_image(delta[i], box[i]);
    const Vec3 a0 = (-0.5 * a.length) * a.dir;
    const Vec3 da = a.length * a.dir;
    const Vec3 db = b.length * b.dir;
    double best = std::numeric_limits<double>::infinity();
    for (int sx = -1; sx <= 1; ++sx)
        for (int sy = -1; sy <= 1; ++sy)
            for (int sz = -1; sz <= 1; ++sz) {
                if (same && sx == 0 && sy == 0 && sz == 0) continue;
                const Vec3 shift{sx * box.x, sy * box.y, sz * box.z};
                const Vec3 b0 = delta + shift + (-0.5 * b.length) * b.dir;
                best = std::min(best, segment_distance_sq(a0, da, b0, db));
            }
    return std::sqrt(best);
}

void check_target(double target_bvf, double radius) {
    if (!(target_bvf > 0.0 && target_bvf < 1.0))
        throw ValidationError("target BVf must lie in (0, 1)");
    if (!(radius > 0.0)) throw ValidationError("radius must be positive");
}

} // namespace

VoxelGeometry generate_disks_2d(double target_bvf, double radius, std::size_t nx, std::size_t ny,
                                double spacing, std::uint64_t seed, const PlacementOptions& opts) {
    check_target(target_bvf, radius);
    Lattice3D lattice(Dims{nx, ny, 1}, Vec3{spacing, spacing, spacing});
    const Vec3 box = lattice.extent();
    if (std::numbers::pi * radius * radius >= box.x * box.y || 2.0 * radius > std::min(box.x, box.y))
        throw InfeasibleGeometry("a single disk of radius " + std::to_string(radius) +
                                 " um does not fit the domain");

    Rng rng(seed);
    std::vector<std::array<double, 2>> centres;
    std::size_t occupied = 0;
    const auto total = static_cast<double>(lattice.size());
    std::size_t failures = 0;
    while (static_cast<double>(occupied) / total < target_bvf) {
        const double cx = uniform01(rng) * box.x;
        const double cy = uniform01(rng) * box.y;
        bool clash = false;
        for (const auto& c : centres) {
            const double dx = min_image(cx - c[0], box.x);
            const double dy = min_image(cy - c[1], box.y);
            if (dx * dx + dy * dy < 4.0 * radius * radius) {
                clash = true;
                break;
            }
        }
        if (clash) {
            if (++failures >= opts.max_consecutive_failures)
                throw InfeasibleGeometry("disk placement failed " + std::to_string(failures) +
                                         " consecutive times at BVf " +
                                         std::to_string(static_cast<double>(occupied) / total));
            continue;
        }
        failures = 0;
        centres.push_back({cx, cy});
        occupied += rasterize_disk(lattice, cx, cy, radius);
    }
    return characterize(std::move(lattice), Provenance::Disks2D, seed);
}

VoxelGeometry generate_cylinders_3d(double target_bvf, double target_mean_radius, Dims dims,
                                    double spacing, std::uint64_t seed,
                                    const PlacementOptions& opts) {
    check_target(target_bvf, target_mean_radius);
    if (!(opts.radius_shape > 0.0)) throw ValidationError("radius shape must be positive");
    Lattice3D lattice(dims, Vec3{spacing, spacing, spacing});
    const Vec3 box = lattice.extent();
    const double min_side = std::min({box.x, box.y, box.z});
    if (2.0 * target_mean_radius > min_side)
        throw InfeasibleGeometry("mean radius " + std::to_string(target_mean_radius) +
                                 " um does not fit the domain");

    Rng rng(seed);
    std::gamma_distribution<double> radius_law(opts.radius_shape,
                                               target_mean_radius / opts.radius_shape);
    std::vector<PlacedCylinder> placed;
    std::size_t occupied = 0;
    const auto total = static_cast<double>(lattice.size());
    const double cell_volume = spacing * spacing * spacing;
    // No periodic segment is longer than the box diagonal.
    const double max_length = norm(box);
    double radius_sum = 0.0;

    // Draws the next radius. Draws that would push the running mean radius outside the
    // band, or the volume fraction past the overshoot cap, are redrawn; the volume cap
    // wins when both cannot be met.
    auto draw_radius = [&] {
        const double room = (target_bvf + kBvfOvershoot) * total * cell_volume -
                            static_cast<double>(occupied) * cell_volume;
        const double r_cap = std::sqrt(std::max(room, 0.0) / (std::numbers::pi * max_length));
        const double n = static_cast<double>(placed.size());
        auto mean_ok = [&](double r) {
            if (placed.empty()) return true;
            const double before = std::abs(radius_sum / n - target_mean_radius);
            const double after = std::abs((radius_sum + r) / (n + 1.0) - target_mean_radius);
            return after <= kRadiusBand * target_mean_radius || after < before;
        };
        double fallback = 0.0;
        for (int attempt = 0; attempt < kRadiusRedraws; ++attempt) {
            const double r = radius_law(rng);
            if (r > r_cap) continue;
            if (mean_ok(r)) return r;
            if (fallback == 0.0) fallback = r;
        }
        return fallback > 0.0 ? fallback : std::min(radius_law(rng), r_cap);
    };

    std::size_t failures = 0;
    double r = 0.0;
    while (static_cast<double>(occupied) / total < target_bvf) {
        if (r == 0.0) r = draw_radius();
        if (!(r > 0.0)) throw InfeasibleGeometry("no admissible radius remains below the BVf cap");
        const Vec3 dir = sample_direction(rng);
        const Vec3 centre{uniform01(rng) * box.x, uniform01(rng) * box.y, uniform01(rng) * box.z};
        PlacedCylinder cand{centre, dir, r, periodic_segment_length(dir, box)};
        bool ok = 2.0 * r <= min_side && periodic_segment_distance(cand, cand, box, true) >= 2.0 * r;
        for (std::size_t i = 0; ok && i < placed.size(); ++i)
            if (periodic_segment_distance(placed[i], cand, box, false) < placed[i].radius + r) ok = false;
        if (!ok) {
            if (++failures >= opts.max_consecutive_failures)
                throw InfeasibleGeometry("cylinder placement failed " + std::to_string(failures) +
                                         " consecutive times at BVf " +
                                         std::to_string(static_cast<double>(occupied) / total));
            // A radius that keeps failing is too large for the remaining space.
            if (failures % kRetriesPerRadius == 0) r = 0.0;
            continue;
        }
        failures = 0;
        placed.push_back(cand);
        radius_sum += r;
        r = 0.0;
        occupied += rasterize_cylinder(lattice, CylinderSpec{centre, dir, cand.radius}, cand.length);
    }
    return characterize(std::move(lattice), Provenance::Cylinders3D, seed);
}

// ---------------------------------------------------------------------------
// Resampling and morphology

std::vector<Lattice3D> chop(const Lattice3D& volume, Vec3 voxel_um) {
    const Dims d = volume.dims();
    const Vec3 h = volume.spacing();
    const Vec3 ext = volume.extent();
    std::array<std::size_t, 3> cells{}, tiles{};
    for (std::size_t a = 0; a < 3; ++a) {
        if (!(voxel_um[a] > 0.0)) throw DimensionError("voxel size must be positive");
        if (voxel_um[a] > ext[a] * (1.0 + 1e-12))
            throw DimensionError("voxel size exceeds the volume along axis " + std::to_string(a));
        cells[a] = static_cast<std::size_t>(std::llround(voxel_um[a] / h[a]));
        if (cells[a] == 0 || cells[a] > d[a])
            throw DimensionError("voxel size does not resolve to a valid cell count");
        tiles[a] = d[a] / cells[a];
    }
    std::vector<Lattice3D> out;
    out.reserve(tiles[0] * tiles[1] * tiles[2]);
    const Dims sub{cells[0], cells[1], cells[2]};
    for (std::size_t tz = 0; tz < tiles[2]; ++tz)
        for (std::size_t ty = 0; ty < tiles[1]; ++ty)
            for (std::size_t tx = 0; tx < tiles[0]; ++tx) {
                Lattice3D part(sub, h);
                for (std::size_t z = 0; z < sub.nz; ++z)
                    for (std::size_t y = 0; y < sub.ny; ++y)
                        for (std::size_t x = 0; x < sub.nx; ++x)
                            part(x, y, z) = volume(tx * sub.nx + x, ty * sub.ny + y, tz * sub.nz + z);
                out.push_back(std::move(part));
            }
    return out;
}

Lattice3D rescale(const Lattice3D& lattice, Vec3 new_spacing) {
    if (!(new_spacing.x > 0.0 && new_spacing.y > 0.0 && new_spacing.z > 0.0))
        throw DimensionError("new spacing must be positive");
    const Dims d = lattice.dims();
    const Vec3 h = lattice.spacing();
    const Vec3 ext = lattice.extent();
    Dims out_dims{};
    std::array<std::vector<std::size_t>, 3> src;
    for (std::size_t a = 0; a < 3; ++a) {
        const auto n = std::max<long long>(1, std::llround(ext[a] / new_spacing[a]));
        auto& map = src[a];
        map.resize(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < map.size(); ++i) {
            const double centre = (static_cast<double>(i) + 0.5) * new_spacing[a];
            const auto j = static_cast<std::size_t>(std::max(0.0, std::floor(centre / h[a])));
            map[i] = std::min(j, d[a] - 1);
        }
    }
    out_dims = Dims{src[0].size(), src[1].size(), src[2].size()};
    Lattice3D out(out_dims, new_spacing);
    for (std::size_t z = 0; z < out_dims.nz; ++z)
        for (std::size_t y = 0; y < out_dims.ny; ++y)
            for (std::size_t x = 0; x < out_dims.nx; ++x)
                out(x, y, z) = lattice(src[0][x], src[1][y], src[2][z]);
    return out;
}

Lattice3D erode(const Lattice3D& lattice, int iterations, Boundary boundary) {
    if (iterations < 1) throw ValidationError("erosion needs at least one iteration");
    const Dims d = lattice.dims();
    Lattice3D cur = lattice;
    Lattice3D next = lattice;
    // Neighbour index along one axis; returns false when it falls outside an Open lattice.
    auto step = [boundary](std::size_t i, int delta, std::size_t n, std::size_t& out) {
        const auto j = static_cast<long long>(i) + delta;
        if (j >= 0 && j < static_cast<long long>(n)) {
            out = static_cast<std::size_t>(j);
            return true;
        }
        if (boundary == Boundary::Open) return false;
        out = wrap_index(j, n);
        return true;
    };
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t z = 0; z < d.nz; ++z)
            for (std::size_t y = 0; y < d.ny; ++y)
                for (std::size_t x = 0; x < d.nx; ++x) {
                    std::uint8_t keep = cur(x, y, z);
                    for (int delta : {-1, 1}) {
                        if (!keep) break;
                        std::size_t j = 0;
                        if (step(x, delta, d.nx, j) && !cur(j, y, z)) keep = 0;
                        if (step(y, delta, d.ny, j) && !cur(x, j, z)) keep = 0;
                        if (step(z, delta, d.nz, j) && !cur(x, y, j)) keep = 0;
                    }
                    next(x, y, z) = keep;
                }
        std::swap(cur, next);
    }
    return cur;
}

} // namespace mrvf::geometry

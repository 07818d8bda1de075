#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "fftw_support.hpp"
#include "mrvf/errors.hpp"
#include "mrvf/physics.hpp"

namespace mrvf::physics {

namespace {

using detail::fftw_buffer;
using detail::Plan;

// Signed integer frequency of bin i on an n-point grid.
double signed_bin(std::size_t i, std::size_t n) {
    return i <= n / 2 ? static_cast<double>(i) : static_cast<double>(i) - static_cast<double>(n);
}

double wavenumber(std::size_t i, std::size_t n, double h) {
    return 2.0 * std::numbers::pi * signed_bin(i, n) / (static_cast<double>(n) * h);
}

} // namespace

FieldAxis default_field_axis(const Lattice3D& lattice) {
    return lattice.dims().nz == 1 ? FieldAxis::Y : FieldAxis::Z;
}

SusceptibilityMap susceptibility_from_geometry(const geometry::VoxelGeometry& geom, double so2,
                                               bool with_contrast, const PhysicsParams& p) {
    if (!(so2 >= 0.0 && so2 <= 1.0)) throw ValidationError("SO2 must lie in [0, 1]");
    const double vessel = p.dchi_deoxy * p.hct * (1.0 - so2) + (with_contrast ? p.dchi_uspio : 0.0);
    SusceptibilityMap chi{geom.lattice.dims(), geom.lattice.spacing(), {}};
    const auto mask = geom.lattice.mask();
    chi.values.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) chi.values[i] = mask[i] ? vessel : 0.0;
    return chi;
}

FieldMap solve_field(const SusceptibilityMap& chi, double b0, FieldAxis axis) {
    const Dims d = chi.dims;
    if (chi.values.size() != d.count()) throw DimensionError("susceptibility map size mismatch");
    const auto axis_index = static_cast<std::size_t>(axis);
    if (d[axis_index] < 2) throw DimensionError("field axis needs at least 2 cells");

    const std::size_t n = d.count();
    const std::size_t nxh = d.nx / 2 + 1;
    const std::size_t nk = d.nz * d.ny * nxh;
    auto real = fftw_buffer<double>(n);
    auto spec = fftw_buffer<fftw_complex>(nk);

    std::unique_ptr<Plan> fwd, inv;
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        const int nz = static_cast<int>(d.nz), ny = static_cast<int>(d.ny), nx = static_cast<int>(d.nx);
        fwd = std::make_unique<Plan>(fftw_plan_dft_r2c_3d(nz, ny, nx, real.get(), spec.get(), FFTW_ESTIMATE));
        inv = std::make_unique<Plan>(fftw_plan_dft_c2r_3d(nz, ny, nx, spec.get(), real.get(), FFTW_ESTIMATE));
    }
    std::copy(chi.values.begin(), chi.values.end(), real.get());
    fwd->execute();

    const Vec3 h = chi.spacing;
    const double scale = b0 / static_cast<double>(n);
    for (std::size_t z = 0; z < d.nz; ++z) {
        const double kz = wavenumber(z, d.nz, h.z);
        for (std::size_t y = 0; y < d.ny; ++y) {
            const double ky = wavenumber(y, d.ny, h.y);
            for (std::size_t x = 0; x < nxh; ++x) {
                const double kx = 2.0 * std::numbers::pi * static_cast<double>(x) /
                                  (static_cast<double>(d.nx) * h.x);
                const double k2 = kx * kx + ky * ky + kz * kz;
                const double kb = axis == FieldAxis::X ? kx : (axis == FieldAxis::Y ? ky : kz);
                const double kernel = k2 > 0.0 ? (1.0 / 3.0 - kb * kb / k2) * scale : 0.0;
                auto& c = spec[(z * d.ny + y) * nxh + x];
                c[0] *= kernel;
                c[1] *= kernel;
            }
        }
    }
    inv->execute();

    FieldMap field{d, h, axis, std::vector<double>(real.get(), real.get() + n)};
    return field;
}

void spectral_diffusion_fft(std::vector<double>& interleaved, Dims d, Vec3 h,
                            double diffusion_um2_per_ms, double h_ms) {
    const std::size_t n = d.count();
    if (interleaved.size() != 2 * n) throw DimensionError("complex lattice size mismatch");
    auto buf = fftw_buffer<fftw_complex>(n);
    std::unique_ptr<Plan> fwd, inv;
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        const int nz = static_cast<int>(d.nz), ny = static_cast<int>(d.ny), nx = static_cast<int>(d.nx);
        fwd = std::make_unique<Plan>(
            fftw_plan_dft_3d(nz, ny, nx, buf.get(), buf.get(), FFTW_FORWARD, FFTW_ESTIMATE));
        inv = std::make_unique<Plan>(
            fftw_plan_dft_3d(nz, ny, nx, buf.get(), buf.get(), FFTW_BACKWARD, FFTW_ESTIMATE));
    }
    for (std::size_t i = 0; i < n; ++i) {
        buf[i][0] = interleaved[2 * i];
        buf[i][1] = interleaved[2 * i + 1];
    }
    fwd->execute();
    for (std::size_t z = 0; z < d.nz; ++z) {
        const double kz = wavenumber(z, d.nz, h.z);
        for (std::size_t y = 0; y < d.ny; ++y) {
            const double ky = wavenumber(y, d.ny, h.y);
            for (std::size_t x = 0; x < d.nx; ++x) {
                const double kx = wavenumber(x, d.nx, h.x);
                const double g = std::exp(-diffusion_um2_per_ms * (kx * kx + ky * ky + kz * kz) * h_ms) /
                                 static_cast<double>(n);
                auto& c = buf[(z * d.ny + y) * d.nx + x];
                c[0] *= g;
                c[1] *= g;
            }
        }
    }
    inv->execute();
    for (std::size_t i = 0; i < n; ++i) {
        interleaved[2 * i] = buf[i][0];
        interleaved[2 * i + 1] = buf[i][1];
    }
}

} // namespace mrvf::physics

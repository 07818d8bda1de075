#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "mrvf/errors.hpp"
#include "mrvf/geometry.hpp"
#include "mrvf/physics.hpp"
#include "support/field_oracles.hpp"

using namespace mrvf;
using namespace mrvf::physics;

namespace {

geometry::VoxelGeometry z_cylinder_voxel(std::size_t n, std::size_t nz, double h, double r) {
    Lattice3D l(Dims{n, n, nz}, Vec3{h, h, h});
    const double c = 0.5 * static_cast<double>(n) * h;
    for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double dx = (static_cast<double>(x) + 0.5) * h - c;
                const double dy = (static_cast<double>(y) + 0.5) * h - c;
                l(x, y, z) = dx * dx + dy * dy <= r * r ? 1 : 0;
            }
    return geometry::characterize(std::move(l), geometry::Provenance::Cylinders3D, 0);
}

FieldMap random_field(Dims d, double amplitude, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amplitude, amplitude);
    FieldMap f{d, Vec3{2, 2, 2}, FieldAxis::Z, std::vector<double>(d.count())};
    for (double& v : f.values) v = u(rng);
    return f;
}

// Independent per-cell reference for D = 0: each cell rotates at gamma*ΔB and flips the
// sign of its accumulated phase at the refocusing pulse.
double static_reference(const FieldMap& f, double t2, double gamma, double refocus, double t) {
    std::complex<double> sum{0.0, 0.0};
    for (double b : f.values) {
        double phase = 0.0;
        if (t <= refocus) {
            phase = -gamma * b * t * 1e-3;
        } else {
            phase = gamma * b * refocus * 1e-3;
            phase -= gamma * b * (t - refocus) * 1e-3;
        }
        sum += std::polar(1.0, phase);
    }
    return std::abs(sum) / static_cast<double>(f.values.size()) * std::exp(-t / t2);
}

} // namespace

TEST_CASE("susceptibility map") {
    const auto geom = z_cylinder_voxel(16, 4, 2.0, 6.0);
    PhysicsParams p;

    auto chi = susceptibility_from_geometry(geom, 1.0, false, p);
    for (double v : chi.values) CHECK(v == 0.0);

    chi = susceptibility_from_geometry(geom, 0.6, false, p);
    const double expected = 3.318e-6 * 0.42 * 0.4;
    CHECK(std::abs(expected / 5.574e-7 - 1.0) < 1e-4);
    const auto mask = geom.lattice.mask();
    for (std::size_t i = 0; i < mask.size(); ++i) CHECK(chi.values[i] == (mask[i] ? expected : 0.0));

    chi = susceptibility_from_geometry(geom, 0.6, true, p);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) CHECK(std::abs(chi.values[i] / (expected + 1e-6) - 1.0) < 1e-12);

    const auto empty = geometry::characterize(Lattice3D(Dims{8, 8, 8}, Vec3{1, 1, 1}),
                                              geometry::Provenance::Cylinders3D, 0);
    for (double v : susceptibility_from_geometry(empty, 0.3, true, p).values) CHECK(v == 0.0);

    CHECK_THROWS_AS(susceptibility_from_geometry(geom, 1.2, false, p), ValidationError);
}

TEST_CASE("field of uniform susceptibility is zero") {
    SusceptibilityMap chi{Dims{8, 6, 10}, Vec3{1, 1, 1}, std::vector<double>(480, 2.5e-6)};
    const auto f = solve_field(chi, 4.7);
    for (double v : f.values) CHECK(std::abs(v) < 1e-20);
}

TEST_CASE("field of an infinite cylinder") {
    SUBCASE("parallel to B0") {
        const auto r = testing::cylinder_oracle(64, 6.0, false);
        CHECK(r.interior_cells > 0);
        CHECK(r.max_error < 0.02);
    }
    SUBCASE("perpendicular to B0") {
        const auto r = testing::cylinder_oracle(64, 6.0, true);
        CHECK(r.interior_cells > 0);
        CHECK(r.max_error < 0.02);
    }
}

TEST_CASE("field inside a sphere vanishes") {
    const auto r = testing::sphere_oracle(64, 9.0);
    CHECK(r.interior_cells > 0);
    CHECK(r.max_error < 0.03);
}

TEST_CASE("field solver is linear with zero mean") {
    const Dims d{12, 10, 8};
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1e-6);
    SusceptibilityMap a{d, Vec3{1, 1, 2}, std::vector<double>(d.count())};
    SusceptibilityMap b = a, mix = a;
    for (auto& v : a.values) v = u(rng);
    for (auto& v : b.values) v = u(rng);
    const double ca = 1.7, cb = -0.4;
    for (std::size_t i = 0; i < d.count(); ++i) mix.values[i] = ca * a.values[i] + cb * b.values[i];

    const auto fa = solve_field(a, 4.7), fb = solve_field(b, 4.7), fm = solve_field(mix, 4.7);
    double scale = 0.0, err = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < d.count(); ++i) {
        const double lin = ca * fa.values[i] + cb * fb.values[i];
        scale = std::max(scale, std::abs(lin));
        err = std::max(err, std::abs(fm.values[i] - lin));
        mean += fm.values[i];
    }
    CHECK(err <= 1e-10 * scale);
    CHECK(std::abs(mean / static_cast<double>(d.count())) <= 1e-12 * scale);
}

TEST_CASE("field axis conventions") {
    SusceptibilityMap flat{Dims{16, 16, 1}, Vec3{1, 1, 1}, std::vector<double>(256, 0.0)};
    flat.values[8 * 16 + 8] = 1e-6;
    CHECK_THROWS_AS(solve_field(flat, 4.7, FieldAxis::Z), DimensionError);
    CHECK_NOTHROW(solve_field(flat, 4.7, FieldAxis::Y));

    Lattice3D slice(Dims{16, 16, 1}, Vec3{1, 1, 1});
    CHECK(default_field_axis(slice) == FieldAxis::Y);
    Lattice3D vol(Dims{16, 16, 4}, Vec3{1, 1, 1});
    CHECK(default_field_axis(vol) == FieldAxis::Z);
}

TEST_CASE("disk in a single slice acts as a perpendicular cylinder") {
    // A disk in the xy plane with B0 along y is a cylinder along z tilted 90° from B0.
    const std::size_t n = 64;
    const double radius = 6.0, dchi = 1e-6, b0 = 4.7;
    SusceptibilityMap chi{Dims{n, n, 1}, Vec3{1, 1, 1}, std::vector<double>(n * n, 0.0)};
    std::vector<double> rho(n * n);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double px = static_cast<double>(x) - 32.0, py = static_cast<double>(y) - 32.0;
            rho[y * n + x] = std::hypot(px + 0.5, py + 0.5);
            chi.values[y * n + x] = dchi * testing::disk_fraction(px, py, radius);
        }
    const auto f = solve_field(chi, b0, FieldAxis::Y);
    double base = 0.0;
    std::size_t nb = 0;
    for (std::size_t i = 0; i < rho.size(); ++i)
        if (rho[i] >= radius + 2.0) {
            base += f.values[i];
            ++nb;
        }
    base /= static_cast<double>(nb);
    const double expected = -b0 * dchi / 6.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i)
        if (rho[i] <= radius - 2.0) worst = std::max(worst, std::abs((f.values[i] - base) / expected - 1.0));
    CHECK(worst < 0.02);
}

TEST_CASE("sequence timing") {
    SequenceSpec seq;
    const auto te = seq.echo_times();
    REQUIRE(te.size() == 32);
    CHECK(te.front() == doctest::Approx(3.3));
    CHECK(te.back() == doctest::Approx(105.6));
    CHECK(seq.refocus_time() == 30.0);
    // 180° pulse between echoes 9 and 10.
    CHECK(te[8] < 30.0);
    CHECK(te[9] > 30.0);

    SequenceSpec bad = seq;
    bad.n_echoes = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    PhysicsParams p;
    p.dt = 2.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("pure relaxation without field") {
    const auto geom = z_cylinder_voxel(16, 8, 2.0, 4.0);
    FieldMap zero{geom.lattice.dims(), geom.lattice.spacing(), FieldAxis::Z,
                  std::vector<double>(geom.lattice.size(), 0.0)};
    SequenceSpec seq;
    const double t2 = 70.0;

    PhysicsParams p;
    p.diffusion = 0.0;
    auto s = simulate_gesfidse(geom, zero, t2, p, seq);
    for (std::size_t i = 0; i < s.times.size(); ++i)
        CHECK(std::abs(s.magnitudes[i] - std::exp(-s.times[i] / t2)) <= 1e-9);

    // The stepped lattice route stays at unit magnitude under diffusion alone.
    p.diffusion = 1000.0;
    s = simulate_gesfidse(geom, zero, t2, p, seq);
    for (std::size_t i = 0; i < s.times.size(); ++i)
        CHECK(std::abs(s.magnitudes[i] - std::exp(-s.times[i] / t2)) <= 1e-6);
}

TEST_CASE("static field refocuses at the spin echo") {
    const Dims d{16, 12, 10};
    const auto field = random_field(d, 2e-6, 11);
    PhysicsParams p;
    p.diffusion = 0.0;
    const double t2 = 60.0;
    const std::vector<double> times{10.0, 30.0, 45.0, 60.0, 75.0};
    const auto s = simulate_signal(field, t2, p, 30.0, times);
    CHECK(std::abs(s.magnitudes[3] - std::exp(-60.0 / t2)) <= 1e-6);
    for (std::size_t i = 0; i < times.size(); ++i)
        CHECK(s.magnitudes[i] == doctest::Approx(static_reference(field, t2, p.gamma, 30.0, times[i])).epsilon(1e-9));
}

TEST_CASE("stepped lattice route matches the closed form at negligible diffusion") {
    const Dims d{8, 8, 8};
    const auto field = random_field(d, 1e-6, 5);
    PhysicsParams p;
    p.diffusion = 1e-9;
    const double t2 = 80.0;
    const std::vector<double> times{3.3, 20.0, 30.0, 45.0, 60.0};
    const auto s = simulate_signal(field, t2, p, 30.0, times);
    for (std::size_t i = 0; i < times.size(); ++i)
        CHECK(s.magnitudes[i] == doctest::Approx(static_reference(field, t2, p.gamma, 30.0, times[i])).epsilon(1e-4));
}

TEST_CASE("diffusion through heterogeneous field lowers the spin echo") {
    const auto geom = z_cylinder_voxel(32, 8, 2.0, 8.0);
    PhysicsParams p;
    const auto chi = susceptibility_from_geometry(geom, 0.5, true, p);
    const auto field = solve_field(chi, p.b0);
    const double t2 = 60.0;
    const std::vector<double> times{60.0};

    p.diffusion = 0.0;
    const double still = simulate_signal(field, t2, p, 30.0, times).magnitudes[0];
    CHECK(std::abs(still - std::exp(-1.0)) <= 1e-6);
    p.diffusion = 1000.0;
    const double moving = simulate_signal(field, t2, p, 30.0, times).magnitudes[0];
    CHECK(moving < still);
}

TEST_CASE("pre-refocus echoes decay monotonically without diffusion") {
    const auto geom = z_cylinder_voxel(32, 4, 2.0, 5.0);
    PhysicsParams p;
    p.diffusion = 0.0;
    const auto field = solve_field(susceptibility_from_geometry(geom, 0.4, true, p), p.b0);
    SequenceSpec seq;
    const auto s = simulate_gesfidse(geom, field, 80.0, p, seq);
    for (std::size_t i = 1; i < s.times.size() && s.times[i] < seq.refocus_time(); ++i)
        CHECK(s.magnitudes[i] <= s.magnitudes[i - 1]);
}

TEST_CASE("halving the time step") {
    const auto geom = geometry::generate_cylinders_3d(0.04, 4.0, Dims{32, 32, 32}, 2.0, 9);
    PhysicsParams p;
    SequenceSpec seq;
    const auto coarse = simulate_fingerprint(geom, 0.6, 70.0, p, seq);
    p.dt = 0.1;
    const auto fine = simulate_fingerprint(geom, 0.6, 70.0, p, seq);
    for (std::size_t i = 0; i < coarse.size(); ++i)
        CHECK(std::abs(coarse.values[i] - fine.values[i]) <= 0.005 * fine.values[i]);
}

TEST_CASE("per-axis float diffusion matches the double 3D spectral reference") {
    const Dims d{12, 9, 7};
    const Vec3 h{1.5, 2.0, 2.5};
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g;
    std::vector<double> a(2 * d.count());
    for (double& v : a) v = g(rng);
    auto b = a;
    spectral_diffusion_fft(a, d, h, 1.0, 0.7);
    spectral_diffusion_separable(b, d, h, 1.0, 0.7);
    double err = 0.0;
    double peak = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        err = std::max(err, std::abs(a[i] - b[i]));
        peak = std::max(peak, std::abs(a[i]));
    }
    // Single-precision lattice.
    CHECK(err < 1e-6 * peak * 4);
}

TEST_CASE("a single Fourier mode decays at the diffusion rate") {
    const Dims d{32, 4, 4};
    const Vec3 h{2, 2, 2};
    const double k = 2.0 * std::numbers::pi * 3.0 / 64.0;
    std::vector<double> m(2 * d.count(), 0.0);
    for (std::size_t i = 0; i < d.count(); ++i) m[2 * i] = std::cos(k * (static_cast<double>(i % 32) * 2.0));
    const double dcoef = 1.0, t = 2.0;
    spectral_diffusion_separable(m, d, h, dcoef, t);
    const double expected = std::exp(-dcoef * k * k * t);
    // The spectral operator uses the continuous Laplacian, so a lattice mode decays exactly.
    double err = 0.0;
    for (std::size_t i = 0; i < d.count(); ++i)
        err = std::max(err, std::abs(m[2 * i] - expected * std::cos(k * (static_cast<double>(i % 32) * 2.0))));
    CHECK(err < 1e-6);
}

TEST_CASE("step size guard") {
    const auto field = random_field(Dims{4, 4, 4}, 1e-4, 2);
    PhysicsParams p;
    const std::vector<double> times{10.0};
    CHECK_THROWS_AS(simulate_signal(field, 50.0, p, 5.0, times), StepTooCoarse);
    p.dt = 0.01;
    CHECK_NOTHROW(simulate_signal(field, 50.0, p, 5.0, times));
}

TEST_CASE("fingerprint construction") {
    SignalTrace ones;
    for (int i = 1; i <= 32; ++i) {
        ones.times.push_back(3.3 * i);
        ones.magnitudes.push_back(1.0);
    }
    const auto fp = make_fingerprint(ones, ones);
    REQUIRE(fp.size() == 64);
    for (double v : fp.values) CHECK(v == doctest::Approx(0.125).epsilon(1e-15));

    SignalTrace pre = ones, post = ones;
    for (int i = 0; i < 32; ++i) {
        pre.magnitudes[i] = std::exp(-0.02 * i);
        post.magnitudes[i] = 0.7 * std::exp(-0.05 * i);
    }
    const auto base = make_fingerprint(pre, post);
    double norm = 0.0;
    for (double v : base.values) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);

    SignalTrace pre2 = pre, post2 = post;
    for (auto& v : pre2.magnitudes) v *= 3.7;
    for (auto& v : post2.magnitudes) v *= 3.7;
    const auto scaled = make_fingerprint(pre2, post2);
    for (std::size_t i = 0; i < 64; ++i) CHECK(scaled.values[i] == doctest::Approx(base.values[i]).epsilon(1e-14));

    SignalTrace shorter = ones;
    shorter.times.pop_back();
    shorter.magnitudes.pop_back();
    CHECK_THROWS_AS(make_fingerprint(ones, shorter), LengthMismatch);
    SignalTrace shifted = ones;
    shifted.times[3] += 0.5;
    CHECK_THROWS_AS(make_fingerprint(ones, shifted), LengthMismatch);
    SignalTrace zero = ones;
    std::fill(zero.magnitudes.begin(), zero.magnitudes.end(), 0.0);
    CHECK_THROWS_AS(make_fingerprint(zero, zero), ZeroSignal);
}

TEST_CASE("fingerprint without contrast agent has equal halves") {
    const auto geom = z_cylinder_voxel(16, 8, 2.0, 4.0);
    PhysicsParams p;
    p.dchi_uspio = 0.0;
    SequenceSpec seq;
    const auto fp = simulate_fingerprint(geom, 0.5, 60.0, p, seq);
    REQUIRE(fp.size() == 64);
    for (std::size_t i = 0; i < 32; ++i) CHECK(fp.values[i] == fp.values[i + 32]);
    REQUIRE(fp.meta.has_value());
    CHECK(fp.meta->so2 == 0.5);
    CHECK(fp.meta->t2 == 60.0);
}

TEST_CASE("fingerprints do not depend on the thread count") {
    const auto geom = geometry::generate_cylinders_3d(0.05, 4.0, Dims{24, 24, 24}, 2.0, 4);
    PhysicsParams p;
    SequenceSpec seq;
    const auto one = simulate_fingerprint(geom, 0.7, 50.0, p, seq, SimOptions{1});
    const auto many = simulate_fingerprint(geom, 0.7, 50.0, p, seq, SimOptions{5});
    CHECK(one.values == many.values);
    p.diffusion = 0.0;
    CHECK(simulate_fingerprint(geom, 0.7, 50.0, p, seq, SimOptions{1}).values ==
          simulate_fingerprint(geom, 0.7, 50.0, p, seq, SimOptions{3}).values);
}

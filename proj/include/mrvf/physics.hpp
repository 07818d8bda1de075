#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrvf/geometry.hpp"
#include "mrvf/lattice.hpp"

namespace mrvf::physics {

/// Magnetostatic and transport constants for one simulation. Units: b0 in T, gamma in
/// rad/s/T, susceptibilities dimensionless (SI), diffusion in µm²/s, dt in ms.
struct PhysicsParams {
    double b0 = 4.7;
    double gamma = 2.675e8;
    double hct = 0.42;
    double dchi_deoxy = 3.318e-6;  // fully deoxygenated blood at Hct = 1
    double dchi_uspio = 1.0e-6;
    double diffusion = 1000.0;
    double dt = 0.2;

    void validate() const;
};

/// GESFIDSE timing in ms. Echoes sit at i*delta_te (i = 1..n_echoes); the ideal 180°
/// pulse sits at se_time / 2.
struct SequenceSpec {
    double tr = 4000.0;
    int n_echoes = 32;
    double delta_te = 3.3;
    double se_time = 60.0;

    double refocus_time() const { return 0.5 * se_time; }
    std::vector<double> echo_times() const;
    void validate() const;
};

/// Axis of the static field. Volumetric lattices use Z; single-slice lattices represent
/// vessels running through the slice and put B0 in-plane along Y.
enum class FieldAxis : std::uint8_t { X, Y, Z };

FieldAxis default_field_axis(const Lattice3D& lattice);

struct SusceptibilityMap {
    Dims dims;
    Vec3 spacing;
    std::vector<double> values;
};

/// Field offset ΔB (T) per cell with zero spatial mean.
struct FieldMap {
    Dims dims;
    Vec3 spacing;
    FieldAxis axis = FieldAxis::Z;
    std::vector<double> values;
};

struct SignalTrace {
    std::vector<double> times;       // ms
    std::vector<double> magnitudes;  // |mean transverse magnetization|
};

struct FingerprintMeta {
    double so2 = 0.0;
    double t2 = 0.0;
    std::string geometry_id;
};

struct Fingerprint {
    std::vector<double> values;
    std::optional<FingerprintMeta> meta;

    std::size_t size() const { return values.size(); }
};

/// Vessel cells get dchi_deoxy*hct*(1-so2) (+ dchi_uspio with contrast); tissue gets 0.
SusceptibilityMap susceptibility_from_geometry(const geometry::VoxelGeometry& geom, double so2,
                                               bool with_contrast, const PhysicsParams& p);

/// ΔB = IFT[ FT[χ] · b0 · (1/3 − k_b²/|k|²) ], k = 0 term zeroed, periodic boundaries.
FieldMap solve_field(const SusceptibilityMap& chi, double b0, FieldAxis axis = FieldAxis::Z);

struct SimOptions {
    /// Worker threads for the per-step lattice passes (0 = auto). Results do not depend on it.
    unsigned threads = 1;
};

/// Lattice-mean magnetization magnitude at `sample_times` (ms, ascending, > 0), with an
/// ideal 180° pulse at `refocus_time` (ignored when it is not before the last sample).
/// Throws StepTooCoarse when gamma*max|ΔB|*dt > 0.5 rad.
SignalTrace simulate_signal(const FieldMap& field, double t2, const PhysicsParams& p,
                            double refocus_time, std::span<const double> sample_times,
                            const SimOptions& opts = {});

/// GESFIDSE trace sampled at the sequence's echo times.
SignalTrace simulate_gesfidse(const geometry::VoxelGeometry& geom, const FieldMap& field, double t2,
                              const PhysicsParams& p, const SequenceSpec& seq,
                              const SimOptions& opts = {});

/// Pre-contrast then post-contrast magnitudes, scaled to unit L2 norm.
Fingerprint make_fingerprint(const SignalTrace& pre, const SignalTrace& post);

/// Full pipeline for one voxel: susceptibility, field and GESFIDSE before and after
/// contrast, concatenated into a fingerprint.
Fingerprint simulate_fingerprint(const geometry::VoxelGeometry& geom, double so2, double t2,
                                 const PhysicsParams& p, const SequenceSpec& seq,
                                 const SimOptions& opts = {});

/// Reference route for the diffusion operator: in-place spectral multiplication of a
/// complex lattice (interleaved re/im) by exp(−D|k|²h) via a double-precision 3D FFT.
void spectral_diffusion_fft(std::vector<double>& interleaved, Dims dims, Vec3 spacing,
                            double diffusion_um2_per_ms, double h_ms);

/// Same operator through the propagator's single-precision per-axis FFT passes.
void spectral_diffusion_separable(std::vector<double>& interleaved, Dims dims, Vec3 spacing,
                                  double diffusion_um2_per_ms, double h_ms);

} // namespace mrvf::physics

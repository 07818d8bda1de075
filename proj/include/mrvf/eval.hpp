#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mrvf/dictionary.hpp"
#include "mrvf/lattice.hpp"
#include "mrvf/physics.hpp"
#include "mrvf/reconstruction.hpp"

namespace mrvf::eval {

using dictionary::VascularParams;
using ParamArray = std::array<double, VascularParams::kCount>;

/// Gaussian magnitude noise. The reference amplitude is the first pre-contrast echo, so
/// for a unit-norm fingerprint the standard deviation is fp[0] / snr.
struct NoiseSpec {
    static constexpr double kNoiseless = std::numeric_limits<double>::infinity();

    double snr = kNoiseless;
    std::uint64_t seed = 0;
};

/// Noisy samples before renormalization. Returns the input unchanged when snr is infinite.
std::vector<double> add_noise_raw(std::span<const double> fp, const NoiseSpec& spec);

/// add_noise_raw followed by rescaling to unit L2 norm.
physics::Fingerprint add_noise(const physics::Fingerprint& fp, const NoiseSpec& spec);

struct RecoveryReport {
    std::string label;
    std::size_t n = 0;
    ParamArray mae{}, rmse{}, bias{};
};

/// Per-parameter error of `est` against `truth` (bias = mean of est − truth).
RecoveryReport recovery_metrics(std::span<const VascularParams> truth, std::span<const VascularParams> est,
                                std::string label = {});

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided
};

/// Welch's unequal-variance two-sample t-test. Throws DegenerateSample when both
/// samples are constant and ValidationError when either has fewer than 2 values.
TTestResult welch_ttest(std::span<const double> a, std::span<const double> b);

struct RoiStats {
    std::string label;
    std::size_t n = 0;
    ParamArray mean{}, std{};  // population standard deviation
};

/// Statistics over voxels where `roi` is nonzero. Throws EmptyRoi and DimensionError.
RoiStats roi_stats(const reconstruction::ParamMaps& maps, const Lattice3D& roi, std::string label = {});

/// Configuration of the cross-geometry experiment: test voxels from one family are
/// reconstructed with dictionaries built from each family at identical coverage.
struct BiasExperiment {
    physics::PhysicsParams physics;
    physics::SequenceSpec sequence;
    dictionary::Range bvf{0.02, 0.08};
    dictionary::Range r{2.5, 6.0};
    dictionary::Range so2{0.4, 0.9};
    dictionary::Range t2{40.0, 120.0};
    Dims dims_3d{32, 32, 32};
    double spacing_3d = 2.0;
    Dims dims_2d{64, 64, 1};
    double spacing_2d = 2.0;
    std::size_t dictionary_entries = 512;
    double snr = 40.0;
    reconstruction::Method method = reconstruction::Method::Dbm;
    std::size_t k = 0;  // DBL component count, 0 = default
    std::vector<geometry::Provenance> generators{geometry::Provenance::Cylinders3D};
    std::vector<geometry::Provenance> dictionaries{geometry::Provenance::Cylinders3D,
                                                   geometry::Provenance::Disks2D};
    unsigned threads = 1;

    void validate() const;
    dictionary::VoxelSampling sampling(geometry::Provenance family) const;
};

struct BiasCell {
    geometry::Provenance generator;
    geometry::Provenance dictionary;
    RecoveryReport report;
    std::vector<VascularParams> truth, estimates;
};

struct BiasTable {
    std::size_t n = 0;
    std::vector<BiasCell> cells;  // generators × dictionaries, generator-major

    const BiasCell& at(geometry::Provenance generator, geometry::Provenance dictionary) const;
    /// True when every parameter's diagonal |bias| is below each off-diagonal |bias| of
    /// the same generator.
    bool diagonal_dominant() const;
};

/// Prebuilt dictionary for one family, so callers can share dictionaries between runs.
struct FamilyDictionary {
    geometry::Provenance family;
    dictionary::Dictionary dict;
};

/// Builds the dictionary the experiment uses for `family`.
dictionary::Dictionary build_family_dictionary(const BiasExperiment& cfg, geometry::Provenance family,
                                               std::uint64_t seed);

/// Test fingerprints drawn with their own seed streams, disjoint from dictionary seeds.
struct TestSet {
    std::vector<VascularParams> truth;
    std::vector<physics::Fingerprint> noiseless;
};

TestSet make_test_set(const BiasExperiment& cfg, geometry::Provenance family, std::size_t n, std::uint64_t seed);

/// Signed per-parameter bias for every (generator, dictionary) pair. Dictionaries are
/// built unless supplied in `prebuilt`. Requires n ≥ 50.
BiasTable cross_model_bias(std::size_t n, std::uint64_t seed, const BiasExperiment& cfg,
                           std::span<const FamilyDictionary> prebuilt = {});

/// TSV writers with one header line.
std::string format_recovery(std::span<const RecoveryReport> reports);
std::string format_bias(const BiasTable& table);
std::string format_ttest(std::span<const std::string> labels, std::span<const TTestResult> results);

} // namespace mrvf::eval

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mrvf/geometry.hpp"
#include "mrvf/physics.hpp"

namespace mrvf::dictionary {

struct Range {
    double lo = 0.0;
    double hi = 1.0;

    double width() const { return hi - lo; }
    bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Digitally shift-scrambled Sobol sequence with random access by index. Dimensions 1..8
/// use the Joe–Kuo direction numbers; one XOR shift per dimension comes from `seed`.
class SobolSequence {
public:
    static constexpr std::size_t kMaxDims = 8;

    SobolSequence(std::size_t dims, std::uint64_t seed);

    std::size_t dims() const { return dims_; }
    /// Point `index` in [0, 1)^dims.
    void point(std::uint64_t index, std::span<double> out) const;

private:
    std::size_t dims_;
    std::vector<std::array<std::uint32_t, 32>> directions_;
    std::vector<std::uint32_t> shifts_;
};

/// Rows [first, first + n) of the scrambled sequence mapped affinely into `ranges`
/// (row-major n × ranges.size()).
std::vector<double> sobol_scrambled(std::size_t n, std::span<const Range> ranges, std::uint64_t seed,
                                    std::uint64_t first = 0);

struct VascularParams {
    double bvf = 0.0;
    double r = 0.0;
    double so2 = 0.0;
    double t2 = 0.0;

    static constexpr std::size_t kCount = 4;
    double operator[](std::size_t i) const;
    bool operator==(const VascularParams&) const = default;
};

inline constexpr std::array<const char*, VascularParams::kCount> kParamNames{"bvf", "r", "so2", "t2"};

/// Ordered key=value metadata. Values are text; doubles use 17 significant digits.
using Meta = std::map<std::string, std::string>;

std::string format_double(double v);
double meta_double(const Meta& m, const std::string& key);
std::uint64_t meta_u64(const Meta& m, const std::string& key);
const std::string& meta_string(const Meta& m, const std::string& key);

/// Newline-separated key=value text as stored in the binary containers.
std::string encode_meta(const Meta& m);
Meta decode_meta(const std::string& text);

void write_physics(Meta& m, const physics::PhysicsParams& p);
void write_sequence(Meta& m, const physics::SequenceSpec& s);
physics::PhysicsParams read_physics(const Meta& m);
physics::SequenceSpec read_sequence(const Meta& m);

/// Synthetic voxel family with (BVf, R) targets spread over the given ranges.
struct VoxelSampling {
    geometry::Provenance family = geometry::Provenance::Cylinders3D;  // or Disks2D
    Dims dims{64, 64, 64};
    double spacing = 2.0;  // µm
    Range bvf{0.01, 0.1};
    Range r{2.0, 8.0};     // µm; the disk radius for Disks2D

    void validate() const;
};

/// Voxels [first, first + n) of a sampling run. Voxel i targets the scrambled Sobol point
/// i over (bvf, r) and is generated with its own derived seed, so any sub-range
/// reproduces the matching voxels of a full run. Failures carry the voxel index.
std::vector<geometry::VoxelGeometry> generate_voxels(const VoxelSampling& spec, std::size_t n,
                                                     std::uint64_t seed, std::uint64_t first = 0,
                                                     unsigned threads = 1);

struct Dictionary {
    std::vector<VascularParams> entries;
    std::size_t length = 0;     // fingerprint length
    std::vector<float> signals;  // entries.size() × length, row-major
    Meta meta;

    std::size_t size() const { return entries.size(); }
    std::span<const float> row(std::size_t i) const { return {signals.data() + i * length, length}; }
};

struct BuildOptions {
    unsigned threads = 1;           // 0 = auto
    std::uint64_t first_index = 0;  // global index of geoms[0] in the Sobol sequence
    /// Called after each finished entry with the number done so far; may be empty.
    std::function<void(std::size_t)> progress;
};

/// One entry per geometry: entry i gets Sobol point first_index + i as (so2, t2), and
/// parameters (bvf, mean_radius, so2, t2). Failures abort with the entry index.
Dictionary build_dictionary(std::span<const geometry::VoxelGeometry> geoms, Range so2_range, Range t2_range,
                            const physics::PhysicsParams& p, const physics::SequenceSpec& seq,
                            std::uint64_t seed, const BuildOptions& opts = {});

/// Rows of `b` appended to `a`. Signal lengths must agree; meta is taken from `a` with
/// the entry count of the result.
Dictionary concatenate(const Dictionary& a, const Dictionary& b);

struct Histogram {
    std::string name;
    Range range;
    std::vector<std::size_t> counts;
};

struct CoverageReport {
    std::vector<Histogram> marginals;           // bvf, r, so2, t2
    Range bvf_range, r_range;
    std::size_t bins = 0;
    std::vector<std::size_t> bvf_r_occupancy;    // bins × bins, bvf-major
};

/// Per-parameter histograms plus a (bvf, r) occupancy grid. SO₂ and T₂ bin over the
/// sampling ranges recorded in meta when present; other axes over the data span.
CoverageReport coverage_report(const Dictionary& dict, std::size_t n_bins);
std::string format_coverage(const CoverageReport& report);

/// MRVD container. Load validates the whole file before returning.
void save_dictionary(const Dictionary& dict, const std::filesystem::path& path);
Dictionary load_dictionary(const std::filesystem::path& path);

inline constexpr std::uint32_t kDictionaryVersion = 1;

} // namespace mrvf::dictionary

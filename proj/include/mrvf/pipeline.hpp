#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mrvf/dictionary.hpp"
#include "mrvf/eval.hpp"
#include "mrvf/physics.hpp"
#include "mrvf/reconstruction.hpp"

namespace mrvf::pipeline {

enum class GeometryModel : std::uint8_t { Cylinders3D, Disks2D, Masks };

std::string_view to_string(GeometryModel m);

/// Family names as written in config files: "cylinders3d", "disks2d".
geometry::Provenance family_from_string(std::string_view s);
std::string_view family_name(geometry::Provenance p);

/// Every setting of a pipeline run. Parsed from a flat key=value file; keys absent from
/// the file keep the defaults below.
struct PipelineConfig {
    physics::PhysicsParams physics;
    physics::SequenceSpec sequence;

    struct Geometry {
        GeometryModel model = GeometryModel::Cylinders3D;
        std::optional<Dims> dims;  // unset: 128×128×384, or 128×128×1 for disks2d
        double spacing = 1.9375;   // µm
        dictionary::Range bvf{0.01, 0.1};
        dictionary::Range r{2.0, 8.0};
        std::string mask_dir;  // masks model only; relative paths resolve against base_dir

        Dims effective_dims() const;
    } geometry;

    struct Sampling {
        dictionary::Range so2{0.35, 0.9};
        dictionary::Range t2{45.0, 110.0};
        std::size_t n = 8;
        std::uint64_t seed = 1;
    } sampling;

    struct Reconstruction {
        reconstruction::Method method = reconstruction::Method::Dbm;
        std::size_t k = 0;  // 0 = default_k of the dictionary size
        reconstruction::ClipRules clips = reconstruction::ClipRules::standard();
    } reconstruction;

    struct Eval {
        std::size_t n = 100;
        double snr = 40.0;
        Dims dims_3d{32, 32, 32};
        double spacing_3d = 2.0;
        Dims dims_2d{64, 64, 1};
        double spacing_2d = 2.0;
        std::size_t dictionary_entries = 512;
        dictionary::Range bvf{0.02, 0.08};
        dictionary::Range r{2.5, 6.0};
        std::vector<geometry::Provenance> generators{geometry::Provenance::Cylinders3D};
        std::vector<geometry::Provenance> dictionaries{geometry::Provenance::Cylinders3D,
                                                       geometry::Provenance::Disks2D};
    } eval;

    /// Directory of the config file. Not part of the canonical form.
    std::filesystem::path base_dir;

    /// Throws ValidationError naming the offending key. Checks that referenced paths exist.
    void validate() const;

    std::filesystem::path mask_dir_path() const;
    dictionary::VoxelSampling voxel_sampling() const;
    eval::BiasExperiment experiment(unsigned threads) const;
};

/// Parses config text. Lines are `key = value`; `#` starts a comment. Unknown,
/// duplicate and malformed keys raise ValidationError with the line number.
PipelineConfig parse_config(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Every key with its effective value, sorted by key, one `key=value` per line.
std::string canonical_config(const PipelineConfig& cfg);

std::uint64_t fnv1a64(std::string_view data);

/// FNV-1a 64 of the canonical form as 16 lowercase hex digits.
std::string config_hash(const PipelineConfig& cfg);

inline constexpr const char* kHashKey = "config.hash";

/// Voxel list written next to generated masks. `file` is relative to the manifest.
struct ManifestEntry {
    std::string file;
    double bvf = 0.0;
    double mean_radius = 0.0;
    geometry::Provenance provenance = geometry::Provenance::Cylinders3D;
    std::uint64_t seed = 0;
};

struct Manifest {
    std::string config_hash;
    std::vector<ManifestEntry> entries;
};

std::string format_manifest(const Manifest& m);
Manifest parse_manifest(std::string_view text);
Manifest read_manifest(const std::filesystem::path& path);

inline constexpr const char* kManifestName = "manifest.tsv";

struct RunOptions {
    unsigned threads = 0;         // 0 = auto
    std::ostream* log = nullptr;  // progress and summaries; null = silent
};

/// Writes n VXM1 masks and the manifest into out_dir.
void cmd_gen_voxels(const PipelineConfig& cfg, const std::filesystem::path& out_dir, const RunOptions& opts);

/// Builds an MRVD dictionary from the masks of a manifest produced under the same config.
dictionary::Dictionary cmd_build_dict(const PipelineConfig& cfg, const std::filesystem::path& manifest,
                                      const std::filesystem::path& out_path, const RunOptions& opts);

/// Trains an MRVM model. k = 0 picks default_k. When `cfg` is given its hash must match
/// the dictionary's.
reconstruction::RegressionModel cmd_train(const std::filesystem::path& dict_path, std::size_t k,
                                          std::uint64_t seed, const std::filesystem::path& out_path,
                                          const RunOptions& opts, const PipelineConfig* cfg = nullptr);

struct ReconstructRequest {
    std::filesystem::path input;  // FPV1 volume or MRVD dictionary
    reconstruction::Method method = reconstruction::Method::Dbm;
    std::optional<std::filesystem::path> dict, model;
    std::filesystem::path out_dir;
    const PipelineConfig* config = nullptr;  // clip rules and hash check; standard clips when null
};

/// Writes bvf/r/so2/t2 VXF1 maps and summary.tsv with the global means.
reconstruction::ParamMaps cmd_reconstruct(const ReconstructRequest& req, const RunOptions& opts);

/// Writes recovery.tsv, bias.tsv, ttest.tsv and config.txt into out_dir. Failures
/// name the stage.
void cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& out_dir, const RunOptions& opts);

} // namespace mrvf::pipeline

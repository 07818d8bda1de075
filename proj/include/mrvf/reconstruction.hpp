#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrvf/dictionary.hpp"
#include "mrvf/volume_io.hpp"

namespace mrvf::reconstruction {

using dictionary::Dictionary;
using dictionary::VascularParams;

struct Clip {
    double lo = 0.0;
    std::optional<double> hi;
};

/// Per-parameter bounds in VascularParams order (bvf, r, so2, t2).
struct ClipRules {
    std::array<Clip, VascularParams::kCount> clips{};

    /// BVf and SO₂ in [0, 1], R in [0, 250] µm, T₂ ≥ 0 ms.
    static ClipRules standard();

    void validate() const;
    VascularParams apply(const VascularParams& v) const;
    bool satisfied(const VascularParams& v) const;
};

/// Index of the row with the largest inner product with `fp`; ties go to the lowest index.
std::size_t match_index(std::span<const double> fp, const Dictionary& dict);
VascularParams match_dbm(std::span<const double> fp, const Dictionary& dict);

/// One component of the forward mixture: x ~ N(c, Γ), y | x ~ N(A x + b, diag(σ²)),
/// with y the standardized signal.
struct Component {
    double weight = 0.0;
    std::array<double, VascularParams::kCount> mean{};                                    // c
    std::array<double, VascularParams::kCount * VascularParams::kCount> covariance{};     // Γ, row-major
    std::vector<double> a;         // length × 4, row-major
    std::vector<double> offset;    // b
    std::vector<double> noise;     // σ² per sample
};

struct RegressionModel {
    std::size_t length = 0;
    std::vector<double> signal_mean;
    std::vector<double> signal_scale;
    std::vector<Component> components;
    std::uint32_t requested_k = 0;
    std::uint32_t iterations = 0;
    double log_likelihood = 0.0;
    dictionary::Meta meta;

    std::size_t k() const { return components.size(); }
    /// Count of components pruned for vanishing responsibility.
    std::uint32_t pruned() const { return requested_k - static_cast<std::uint32_t>(components.size()); }
};

struct TrainOptions {
    unsigned threads = 1;  // 0 = auto; the model does not depend on it
    int max_iterations = 200;
    double tolerance = 1e-6;  // relative log-likelihood improvement
};

/// Default component count for a dictionary of `n` entries.
std::size_t default_k(std::size_t n);

/// EM fit of a k-component mixture from parameters to standardized signals, initialized
/// by k-means++ on standardized parameters. Requires n ≥ 10·k. Throws mrvf::Error if the
/// log-likelihood ever decreases.
RegressionModel train_dbl(const Dictionary& dict, std::size_t k, std::uint64_t seed,
                          const TrainOptions& opts = {});

/// Precomputed inversion of a model for repeated prediction.
class DblPredictor {
public:
    explicit DblPredictor(const RegressionModel& model);
    ~DblPredictor();
    DblPredictor(DblPredictor&&) noexcept;
    DblPredictor& operator=(DblPredictor&&) noexcept;

    std::size_t length() const;
    /// Posterior mean of the parameters given `fp`, before clipping.
    VascularParams predict_raw(std::span<const double> fp) const;
    VascularParams predict(std::span<const double> fp, const ClipRules& clips) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

VascularParams predict_dbl(const RegressionModel& model, std::span<const double> fp, const ClipRules& clips);

enum class Method : std::uint8_t { Dbm, Dbl };

const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct ParamMaps {
    Dims dims;
    Method method = Method::Dbm;
    std::array<std::vector<double>, VascularParams::kCount> maps;  // bvf, r, so2, t2

    VascularParams at(std::size_t i) const;
};

/// Voxelwise estimation over a fingerprint volume. DBM uses `dict`, DBL uses `model`.
/// Errors are rethrown with the voxel coordinates prefixed.
ParamMaps reconstruct_map(const io::FingerprintVolume& volume, Method method, const Dictionary* dict,
                          const RegressionModel* model, const ClipRules& clips, unsigned threads = 1);

/// MRVM container: "MRVM", u32 version, u32 k, u32 length, u32 requested_k,
/// u32 iterations, f64 log-likelihood, u32 meta length, meta text, f64 signal mean
/// and scale, then per component f64 weight, mean, covariance, A, b, σ².
/// Round trip is bit-exact.
void save_model(const RegressionModel& model, const std::filesystem::path& path);
RegressionModel load_model(const std::filesystem::path& path);

inline constexpr std::uint32_t kModelVersion = 1;

} // namespace mrvf::reconstruction

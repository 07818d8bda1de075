#include "mrvf/eval.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include "mrvf/errors.hpp"
#include "mrvf/parallel.hpp"
#include "mrvf/rng.hpp"

namespace mrvf::eval {

using dictionary::format_double;
using geometry::Provenance;

std::vector<double> add_noise_raw(std::span<const double> fp, const NoiseSpec& spec) {
    if (!(spec.snr > 0.0)) throw ValidationError("snr must be > 0");
    std::vector<double> out(fp.begin(), fp.end());
    if (std::isinf(spec.snr) || out.empty()) return out;
    const double sigma = std::abs(out[0]) / spec.snr;
    Rng rng(derive_seed(spec.seed, Stream::Noise));
    std::normal_distribution<double> g(0.0, sigma);
    for (double& v : out) v += g(rng);
    return out;
}

physics::Fingerprint add_noise(const physics::Fingerprint& fp, const NoiseSpec& spec) {
    physics::Fingerprint out;
    out.meta = fp.meta;
    out.values = add_noise_raw(fp.values, spec);
    if (std::isinf(spec.snr)) return out;
    double sq = 0.0;
    for (double v : out.values) sq += v * v;
    const double nrm = std::sqrt(sq);
    if (!(nrm > 0.0)) throw ZeroSignal("noisy fingerprint has zero norm");
    for (double& v : out.values) v /= nrm;
    return out;
}

RecoveryReport recovery_metrics(std::span<const VascularParams> truth, std::span<const VascularParams> est,
                                std::string label) {
    if (truth.size() != est.size())
        throw LengthMismatch("truth has " + std::to_string(truth.size()) + " items, estimates " +
                             std::to_string(est.size()));
    if (truth.empty()) throw ValidationError("recovery metrics need at least one item");
    RecoveryReport r;
    r.label = std::move(label);
    r.n = truth.size();
    for (std::size_t i = 0; i < truth.size(); ++i)
        for (std::size_t p = 0; p < VascularParams::kCount; ++p) {
            const double e = est[i][p] - truth[i][p];
            r.mae[p] += std::abs(e);
            r.rmse[p] += e * e;
            r.bias[p] += e;
        }
    const auto n = static_cast<double>(r.n);
    for (std::size_t p = 0; p < VascularParams::kCount; ++p) {
        r.mae[p] /= n;
        r.rmse[p] = std::sqrt(r.rmse[p] / n);
        r.bias[p] /= n;
        // Rounding can put RMSE an ulp under MAE when all errors are equal.
        r.rmse[p] = std::max(r.rmse[p], r.mae[p]);
    }
    return r;
}

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;  // unbiased
};

Moments moments(std::span<const double> x) {
    Moments m;
    for (double v : x) m.mean += v;
    m.mean /= static_cast<double>(x.size());
    for (double v : x) m.var += (v - m.mean) * (v - m.mean);
    m.var /= static_cast<double>(x.size() - 1);
    return m;
}

} // namespace

TTestResult welch_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw ValidationError("t-test needs at least 2 values per sample");
    const Moments ma = moments(a), mb = moments(b);
    if (ma.var == 0.0 && mb.var == 0.0) throw DegenerateSample("both samples are constant");
    const double va = ma.var / static_cast<double>(a.size());
    const double vb = mb.var / static_cast<double>(b.size());
    const double se2 = va + vb;
    TTestResult r;
    r.t = (ma.mean - mb.mean) / std::sqrt(se2);
    r.df = se2 * se2 /
           (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
    if (r.t == 0.0) {
        r.p = 1.0;
        return r;
    }
    const boost::math::students_t dist(r.df);
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
    return r;
}

RoiStats roi_stats(const reconstruction::ParamMaps& maps, const Lattice3D& roi, std::string label) {
    if (roi.dims() != maps.dims) throw DimensionError("ROI and map dims differ");
    RoiStats s;
    s.label = std::move(label);
    const auto mask = roi.mask();
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            ++s.n;
            for (std::size_t p = 0; p < VascularParams::kCount; ++p) s.mean[p] += maps.maps[p][i];
        }
    if (s.n == 0) throw EmptyRoi("ROI '" + s.label + "' has no voxels");
    const auto n = static_cast<double>(s.n);
    for (double& m : s.mean) m /= n;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i])
            for (std::size_t p = 0; p < VascularParams::kCount; ++p) {
                const double d = maps.maps[p][i] - s.mean[p];
                s.std[p] += d * d;
            }
    for (double& v : s.std) v = std::sqrt(v / n);
    return s;
}

// ---------------------------------------------------------------------------
// Cross-geometry experiment

void BiasExperiment::validate() const {
    physics.validate();
    sequence.validate();
    if (!(so2.lo >= 0.0 && so2.hi <= 1.0 && so2.lo <= so2.hi)) throw ValidationError("so2 range must lie in [0, 1]");
    if (!(t2.lo > 0.0 && t2.lo <= t2.hi)) throw ValidationError("t2 range must be positive and ordered");
    if (!(snr > 0.0)) throw ValidationError("snr must be > 0");
    if (dictionary_entries == 0) throw ValidationError("dictionary needs entries");
    if (generators.empty() || dictionaries.empty()) throw ValidationError("experiment needs at least one arm");
    for (auto fam : generators) sampling(fam).validate();
    for (auto fam : dictionaries) sampling(fam).validate();
}

dictionary::VoxelSampling BiasExperiment::sampling(Provenance family) const {
    dictionary::VoxelSampling s;
    s.family = family;
    s.bvf = bvf;
    s.r = r;
    if (family == Provenance::Disks2D) {
        s.dims = dims_2d;
        s.spacing = spacing_2d;
    } else {
        s.dims = dims_3d;
        s.spacing = spacing_3d;
    }
    return s;
}

const BiasCell& BiasTable::at(Provenance generator, Provenance dictionary) const {
    for (const auto& c : cells)
        if (c.generator == generator && c.dictionary == dictionary) return c;
    throw ValidationError("no bias cell for " + std::string(geometry::to_string(generator)) + " / " +
                          std::string(geometry::to_string(dictionary)));
}

bool BiasTable::diagonal_dominant() const {
    for (const auto& diag : cells) {
        if (diag.generator != diag.dictionary) continue;
        for (const auto& off : cells) {
            if (off.generator != diag.generator || off.dictionary == diag.dictionary) continue;
            for (std::size_t p = 0; p < VascularParams::kCount; ++p)
                if (!(std::abs(diag.report.bias[p]) < std::abs(off.report.bias[p]))) return false;
        }
    }
    return true;
}

dictionary::Dictionary build_family_dictionary(const BiasExperiment& cfg, Provenance family, std::uint64_t seed) {
    cfg.validate();
    // One seed for every family, so all dictionaries share their (bvf, r, so2, t2) targets.
    const std::uint64_t dict_seed = derive_seed(seed, 1);
    const auto geoms = dictionary::generate_voxels(cfg.sampling(family), cfg.dictionary_entries, dict_seed, 0,
                                                   cfg.threads);
    dictionary::BuildOptions opts;
    opts.threads = cfg.threads;
    return dictionary::build_dictionary(geoms, cfg.so2, cfg.t2, cfg.physics, cfg.sequence, dict_seed, opts);
}

TestSet make_test_set(const BiasExperiment& cfg, Provenance family, std::size_t n, std::uint64_t seed) {
    cfg.validate();
    const auto geoms =
        dictionary::generate_voxels(cfg.sampling(family), n, derive_seed(seed, Stream::TestTargets), 0, cfg.threads);
    const std::uint64_t param_seed = derive_seed(seed, Stream::TestParams);
    TestSet set;
    set.truth.resize(n);
    set.noiseless.resize(n);
    parallel_for(n, cfg.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            Rng rng(derive_seed(param_seed, i));
            const double so2 = cfg.so2.lo + cfg.so2.width() * uniform01(rng);
            const double t2 = cfg.t2.lo + cfg.t2.width() * uniform01(rng);
            try {
                set.noiseless[i] = physics::simulate_fingerprint(geoms[i], so2, t2, cfg.physics, cfg.sequence);
            } catch (...) {
                rethrow_with_prefix("test voxel " + std::to_string(i) + ": ");
            }
            set.truth[i] = VascularParams{geoms[i].bvf, geoms[i].mean_radius, so2, t2};
        }
    });
    return set;
}

BiasTable cross_model_bias(std::size_t n, std::uint64_t seed, const BiasExperiment& cfg,
                           std::span<const FamilyDictionary> prebuilt) {
    cfg.validate();
    if (n < 50) throw ValidationError("cross-model bias needs n >= 50");
    std::vector<FamilyDictionary> dicts;
    for (auto fam : cfg.dictionaries) {
        const auto it = std::find_if(prebuilt.begin(), prebuilt.end(),
                                     [&](const FamilyDictionary& f) { return f.family == fam; });
        if (it != prebuilt.end())
            dicts.push_back(*it);
        else
            dicts.push_back({fam, build_family_dictionary(cfg, fam, seed)});
    }
    std::vector<std::optional<reconstruction::DblPredictor>> models(dicts.size());
    if (cfg.method == reconstruction::Method::Dbl)
        for (std::size_t d = 0; d < dicts.size(); ++d) {
            const std::size_t k = cfg.k == 0 ? reconstruction::default_k(dicts[d].dict.size()) : cfg.k;
            reconstruction::TrainOptions topts;
            topts.threads = cfg.threads;
            models[d].emplace(reconstruction::train_dbl(dicts[d].dict, k, seed, topts));
        }
    const auto clips = reconstruction::ClipRules::standard();

    BiasTable table;
    table.n = n;
    for (std::size_t g = 0; g < cfg.generators.size(); ++g) {
        const auto gen = cfg.generators[g];
        const auto set = make_test_set(cfg, gen, n, derive_seed(seed, 100 + g));
        std::vector<physics::Fingerprint> noisy(n);
        const std::uint64_t noise_seed = derive_seed(derive_seed(seed, 200 + g), Stream::Noise);
        for (std::size_t i = 0; i < n; ++i)
            noisy[i] = add_noise(set.noiseless[i], NoiseSpec{cfg.snr, derive_seed(noise_seed, i)});
        for (std::size_t d = 0; d < dicts.size(); ++d) {
            std::vector<VascularParams> est(n);
            parallel_for(n, cfg.threads, [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i)
                    est[i] = cfg.method == reconstruction::Method::Dbm
                                 ? reconstruction::match_dbm(noisy[i].values, dicts[d].dict)
                                 : models[d]->predict(noisy[i].values, clips);
            });
            BiasCell cell{gen, dicts[d].family, {}, set.truth, {}};
            cell.report = recovery_metrics(set.truth, est,
                                           std::string(geometry::to_string(gen)) + "/" +
                                               std::string(geometry::to_string(dicts[d].family)));
            cell.estimates = std::move(est);
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Reports

std::string format_recovery(std::span<const RecoveryReport> reports) {
    std::ostringstream os;
    os << "label\tparameter\tn\tmae\trmse\tbias\n";
    for (const auto& r : reports)
        for (std::size_t p = 0; p < VascularParams::kCount; ++p)
            os << r.label << '\t' << dictionary::kParamNames[p] << '\t' << r.n << '\t' << format_double(r.mae[p])
               << '\t' << format_double(r.rmse[p]) << '\t' << format_double(r.bias[p]) << '\n';
    return os.str();
}

std::string format_bias(const BiasTable& table) {
    std::ostringstream os;
    os << "generator\tdictionary\tparameter\tn\tbias\tabs_bias\tmae\trmse\tdiagonal\n";
    for (const auto& c : table.cells)
        for (std::size_t p = 0; p < VascularParams::kCount; ++p)
            os << geometry::to_string(c.generator) << '\t' << geometry::to_string(c.dictionary) << '\t'
               << dictionary::kParamNames[p] << '\t' << c.report.n << '\t' << format_double(c.report.bias[p]) << '\t'
               << format_double(std::abs(c.report.bias[p])) << '\t' << format_double(c.report.mae[p]) << '\t'
               << format_double(c.report.rmse[p]) << '\t' << (c.generator == c.dictionary ? 1 : 0) << '\n';
    return os.str();
}

std::string format_ttest(std::span<const std::string> labels, std::span<const TTestResult> results) {
    if (labels.size() != results.size()) throw LengthMismatch("t-test labels and results differ in count");
    std::ostringstream os;
    os << "label\tt\tdf\tp\n";
    for (std::size_t i = 0; i < labels.size(); ++i)
        os << labels[i] << '\t' << format_double(results[i].t) << '\t' << format_double(results[i].df) << '\t'
           << format_double(results[i].p) << '\n';
    return os.str();
}

} // namespace mrvf::eval

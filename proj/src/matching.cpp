#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "mrvf/errors.hpp"
#include "mrvf/parallel.hpp"
#include "mrvf/reconstruction.hpp"

namespace mrvf::reconstruction {

ClipRules ClipRules::standard() {
    ClipRules c;
    c.clips[0] = {0.0, 1.0};
    c.clips[1] = {0.0, 250.0};
    c.clips[2] = {0.0, 1.0};
    c.clips[3] = {0.0, std::nullopt};
    return c;
}

void ClipRules::validate() const {
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (!std::isfinite(clips[i].lo) || (clips[i].hi && !std::isfinite(*clips[i].hi)))
            throw ValidationError(std::string("clip bounds for ") + dictionary::kParamNames[i] + " must be finite");
        if (clips[i].hi && !(clips[i].lo < *clips[i].hi))
            throw ValidationError(std::string("clip lower bound for ") + dictionary::kParamNames[i] +
                                  " must be below the upper bound");
    }
}

VascularParams ClipRules::apply(const VascularParams& v) const {
    std::array<double, VascularParams::kCount> out{};
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = std::max(v[i], clips[i].lo);
        if (clips[i].hi) x = std::min(x, *clips[i].hi);
        out[i] = x;
    }
    return {out[0], out[1], out[2], out[3]};
}

bool ClipRules::satisfied(const VascularParams& v) const {
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (!(v[i] >= clips[i].lo)) return false;
        if (clips[i].hi && !(v[i] <= *clips[i].hi)) return false;
    }
    return true;
}

std::size_t match_index(std::span<const double> fp, const Dictionary& dict) {
    if (fp.size() != dict.length)
        throw LengthMismatch("fingerprint has " + std::to_string(fp.size()) + " samples; dictionary has " +
                             std::to_string(dict.length));
    if (dict.size() == 0) throw ValidationError("dictionary is empty");
    double sq = 0.0;
    for (double v : fp) sq += v * v;
    const double nrm = std::sqrt(sq);
    if (!(nrm > 0.0)) throw ZeroSignal("fingerprint has zero norm");
    std::size_t best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < dict.size(); ++i) {
        const auto row = dict.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) acc += static_cast<double>(row[j]) * (fp[j] / nrm);
        if (acc > best_dot) {
            best_dot = acc;
            best = i;
        }
    }
    return best;
}

VascularParams match_dbm(std::span<const double> fp, const Dictionary& dict) {
    return dict.entries[match_index(fp, dict)];
}

const char* to_string(Method m) { return m == Method::Dbm ? "dbm" : "dbl"; }

Method method_from_string(const std::string& s) {
    if (s == "dbm") return Method::Dbm;
    if (s == "dbl") return Method::Dbl;
    throw ValidationError("unknown method '" + s + "' (expected dbm or dbl)");
}

VascularParams ParamMaps::at(std::size_t i) const { return {maps[0][i], maps[1][i], maps[2][i], maps[3][i]}; }

ParamMaps reconstruct_map(const io::FingerprintVolume& volume, Method method, const Dictionary* dict,
                          const RegressionModel* model, const ClipRules& clips, unsigned threads) {
    clips.validate();
    const std::size_t n = volume.dims.count();
    if (volume.values.size() != n * volume.length) throw DimensionError("fingerprint volume payload size mismatch");
    std::optional<DblPredictor> predictor;
    if (method == Method::Dbm) {
        if (!dict) throw ValidationError("DBM reconstruction needs a dictionary");
        if (dict->length != volume.length)
            throw LengthMismatch("volume fingerprints have " + std::to_string(volume.length) +
                                 " samples; dictionary has " + std::to_string(dict->length));
    } else {
        if (!model) throw ValidationError("DBL reconstruction needs a model");
        if (model->length != volume.length)
            throw LengthMismatch("volume fingerprints have " + std::to_string(volume.length) +
                                 " samples; model has " + std::to_string(model->length));
        predictor.emplace(*model);
    }

    ParamMaps out;
    out.dims = volume.dims;
    out.method = method;
    for (auto& m : out.maps) m.assign(n, 0.0);
    parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
        std::vector<double> fp(volume.length);
        for (std::size_t i = b; i < e; ++i) {
            try {
                const auto v = volume.voxel(i);
                std::copy(v.begin(), v.end(), fp.begin());
                const VascularParams est = method == Method::Dbm ? match_dbm(fp, *dict) : predictor->predict(fp, clips);
                for (std::size_t p = 0; p < VascularParams::kCount; ++p) out.maps[p][i] = est[p];
            } catch (...) {
                const std::size_t x = i % volume.dims.nx;
                const std::size_t y = (i / volume.dims.nx) % volume.dims.ny;
                const std::size_t z = i / (volume.dims.nx * volume.dims.ny);
                rethrow_with_prefix("voxel (" + std::to_string(x) + ", " + std::to_string(y) + ", " +
                                    std::to_string(z) + "): ");
            }
        }
    });
    return out;
}

} // namespace mrvf::reconstruction

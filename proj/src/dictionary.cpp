#include "mrvf/dictionary.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

#include "mrvf/binary_io.hpp"
#include "mrvf/errors.hpp"
#include "mrvf/parallel.hpp"
#include "mrvf/rng.hpp"

namespace mrvf::dictionary {

double VascularParams::operator[](std::size_t i) const {
    switch (i) {
    case 0: return bvf;
    case 1: return r;
    case 2: return so2;
    case 3: return t2;
    default: throw DimensionError("parameter index out of range");
    }
}

// ---------------------------------------------------------------------------
// Metadata

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::string& meta_string(const Meta& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("metadata key '" + key + "' missing");
    return it->second;
}

double meta_double(const Meta& m, const std::string& key) {
    const std::string& s = meta_string(m, key);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError("metadata key '" + key + "' is not a number: " + s);
    return v;
}

std::uint64_t meta_u64(const Meta& m, const std::string& key) {
    const std::string& s = meta_string(m, key);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError("metadata key '" + key + "' is not an unsigned integer: " + s);
    return v;
}

void write_physics(Meta& m, const physics::PhysicsParams& p) {
    m["physics.b0"] = format_double(p.b0);
    m["physics.gamma"] = format_double(p.gamma);
    m["physics.hct"] = format_double(p.hct);
    m["physics.dchi_deoxy"] = format_double(p.dchi_deoxy);
    m["physics.dchi_uspio"] = format_double(p.dchi_uspio);
    m["physics.diffusion"] = format_double(p.diffusion);
    m["physics.dt"] = format_double(p.dt);
}

void write_sequence(Meta& m, const physics::SequenceSpec& s) {
    m["sequence.tr"] = format_double(s.tr);
    m["sequence.n_echoes"] = std::to_string(s.n_echoes);
    m["sequence.delta_te"] = format_double(s.delta_te);
    m["sequence.se_time"] = format_double(s.se_time);
}

physics::PhysicsParams read_physics(const Meta& m) {
    physics::PhysicsParams p;
    p.b0 = meta_double(m, "physics.b0");
    p.gamma = meta_double(m, "physics.gamma");
    p.hct = meta_double(m, "physics.hct");
    p.dchi_deoxy = meta_double(m, "physics.dchi_deoxy");
    p.dchi_uspio = meta_double(m, "physics.dchi_uspio");
    p.diffusion = meta_double(m, "physics.diffusion");
    p.dt = meta_double(m, "physics.dt");
    return p;
}

physics::SequenceSpec read_sequence(const Meta& m) {
    physics::SequenceSpec s;
    s.tr = meta_double(m, "sequence.tr");
    s.n_echoes = static_cast<int>(meta_u64(m, "sequence.n_echoes"));
    s.delta_te = meta_double(m, "sequence.delta_te");
    s.se_time = meta_double(m, "sequence.se_time");
    return s;
}

// ---------------------------------------------------------------------------
// Voxel sampling

void VoxelSampling::validate() const {
    using geometry::Provenance;
    if (family != Provenance::Cylinders3D && family != Provenance::Disks2D)
        throw ValidationError("voxel sampling supports cylinders3d and disks2d only");
    if (dims.count() == 0) throw ValidationError("voxel dims must be positive");
    if (family == Provenance::Disks2D && dims.nz != 1) throw ValidationError("disks2d voxels need nz = 1");
    if (!(spacing > 0.0)) throw ValidationError("voxel spacing must be > 0");
    if (!(bvf.lo > 0.0 && bvf.hi < 1.0 && bvf.lo <= bvf.hi)) throw ValidationError("bvf range must lie in (0, 1)");
    if (!(r.lo > 0.0 && r.lo <= r.hi)) throw ValidationError("radius range must be positive and ordered");
}

std::vector<geometry::VoxelGeometry> generate_voxels(const VoxelSampling& spec, std::size_t n,
                                                     std::uint64_t seed, std::uint64_t first,
                                                     unsigned threads) {
    spec.validate();
    const std::array<Range, 2> ranges{spec.bvf, spec.r};
    const auto targets = sobol_scrambled(n, ranges, derive_seed(seed, Stream::GeometryTargets), first);
    const std::uint64_t voxel_seed = derive_seed(seed, Stream::GeometryVoxels);
    std::vector<geometry::VoxelGeometry> out(n);
    parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const double bvf = targets[2 * i], r = targets[2 * i + 1];
            const std::uint64_t s = derive_seed(voxel_seed, first + i);
            try {
                out[i] = spec.family == geometry::Provenance::Disks2D
                             ? geometry::generate_disks_2d(bvf, r, spec.dims.nx, spec.dims.ny, spec.spacing, s)
                             : geometry::generate_cylinders_3d(bvf, r, spec.dims, spec.spacing, s);
            } catch (...) {
                rethrow_with_prefix("voxel " + std::to_string(first + i) + ": ");
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Build

Dictionary build_dictionary(std::span<const geometry::VoxelGeometry> geoms, Range so2_range, Range t2_range,
                            const physics::PhysicsParams& p, const physics::SequenceSpec& seq,
                            std::uint64_t seed, const BuildOptions& opts) {
    if (geoms.empty()) throw ValidationError("dictionary needs at least one geometry");
    if (!(so2_range.lo >= 0.0 && so2_range.hi <= 1.0)) throw ValidationError("SO2 range must lie in [0, 1]");
    if (!(t2_range.lo > 0.0)) throw ValidationError("T2 range must be positive");
    p.validate();
    seq.validate();

    const std::array<Range, 2> ranges{so2_range, t2_range};
    const auto draws = sobol_scrambled(geoms.size(), ranges, seed, opts.first_index);

    Dictionary dict;
    const std::size_t n = geoms.size();
    dict.length = 2 * static_cast<std::size_t>(seq.n_echoes);
    dict.entries.resize(n);
    dict.signals.assign(n * dict.length, 0.0f);

    const unsigned threads = resolve_threads(opts.threads);
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    const physics::SimOptions sim{std::max(1u, threads / workers)};
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;

    // Each worker claims the next index, so the assignment of entries to threads varies
    // but every entry's result depends only on its own inputs.
    std::atomic<std::size_t> next{0};
    parallel_for(workers, workers, [&](std::size_t, std::size_t) {
        for (std::size_t i = next++; i < n; i = next++) {
            const double so2 = draws[2 * i], t2 = draws[2 * i + 1];
            physics::Fingerprint fp;
            try {
                fp = physics::simulate_fingerprint(geoms[i], so2, t2, p, seq, sim);
            } catch (...) {
                next = n;
                rethrow_with_prefix("entry " + std::to_string(opts.first_index + i) + ": ");
            }
            dict.entries[i] = VascularParams{geoms[i].bvf, geoms[i].mean_radius, so2, t2};
            std::transform(fp.values.begin(), fp.values.end(), dict.signals.begin() + i * dict.length,
                           [](double v) { return static_cast<float>(v); });
            const std::size_t count = ++done;
            if (opts.progress) {
                std::lock_guard lock(progress_mutex);
                opts.progress(count);
            }
        }
    });

    write_physics(dict.meta, p);
    write_sequence(dict.meta, seq);
    dict.meta["sampling.seed"] = std::to_string(seed);
    dict.meta["sampling.first_index"] = std::to_string(opts.first_index);
    dict.meta["sampling.so2_lo"] = format_double(so2_range.lo);
    dict.meta["sampling.so2_hi"] = format_double(so2_range.hi);
    dict.meta["sampling.t2_lo"] = format_double(t2_range.lo);
    dict.meta["sampling.t2_hi"] = format_double(t2_range.hi);
    std::string provenance(geometry::to_string(geoms.front().provenance));
    for (const auto& g : geoms)
        if (g.provenance != geoms.front().provenance) provenance = "Mixed";
    dict.meta["geometry.provenance"] = provenance;
    return dict;
}

Dictionary concatenate(const Dictionary& a, const Dictionary& b) {
    if (a.length != b.length) throw LengthMismatch("dictionaries differ in signal length");
    Dictionary out = a;
    out.entries.insert(out.entries.end(), b.entries.begin(), b.entries.end());
    out.signals.insert(out.signals.end(), b.signals.begin(), b.signals.end());
    return out;
}

// ---------------------------------------------------------------------------
// Coverage

namespace {

std::size_t bin_of(double v, Range r, std::size_t bins) {
    if (!(r.hi > r.lo)) return 0;
    const double f = (v - r.lo) / r.width();
    const auto b = static_cast<long long>(std::floor(f * static_cast<double>(bins)));
    return static_cast<std::size_t>(std::clamp<long long>(b, 0, static_cast<long long>(bins) - 1));
}

Range data_span(const Dictionary& d, std::size_t param) {
    Range r{d.entries.front()[param], d.entries.front()[param]};
    for (const auto& e : d.entries) {
        r.lo = std::min(r.lo, e[param]);
        r.hi = std::max(r.hi, e[param]);
    }
    return r;
}

} // namespace

CoverageReport coverage_report(const Dictionary& dict, std::size_t n_bins) {
    if (dict.size() == 0) throw ValidationError("coverage of an empty dictionary");
    if (n_bins == 0) throw ValidationError("coverage needs at least one bin");
    CoverageReport rep;
    rep.bins = n_bins;
    for (std::size_t p = 0; p < VascularParams::kCount; ++p) {
        Histogram h{kParamNames[p], data_span(dict, p), std::vector<std::size_t>(n_bins, 0)};
        const std::string key = std::string("sampling.") + kParamNames[p];
        if (dict.meta.contains(key + "_lo") && dict.meta.contains(key + "_hi"))
            h.range = Range{meta_double(dict.meta, key + "_lo"), meta_double(dict.meta, key + "_hi")};
        for (const auto& e : dict.entries) ++h.counts[bin_of(e[p], h.range, n_bins)];
        rep.marginals.push_back(std::move(h));
    }
    rep.bvf_range = rep.marginals[0].range;
    rep.r_range = rep.marginals[1].range;
    rep.bvf_r_occupancy.assign(n_bins * n_bins, 0);
    for (const auto& e : dict.entries)
        ++rep.bvf_r_occupancy[bin_of(e.bvf, rep.bvf_range, n_bins) * n_bins + bin_of(e.r, rep.r_range, n_bins)];
    return rep;
}

std::string format_coverage(const CoverageReport& rep) {
    std::ostringstream os;
    os << "# marginals\nparameter\tbin\tlo\thi\tcount\n";
    for (const auto& h : rep.marginals) {
        const double w = h.range.width() / static_cast<double>(rep.bins);
        for (std::size_t b = 0; b < rep.bins; ++b)
            os << h.name << '\t' << b << '\t' << format_double(h.range.lo + w * static_cast<double>(b)) << '\t'
               << format_double(h.range.lo + w * static_cast<double>(b + 1)) << '\t' << h.counts[b] << '\n';
    }
    os << "# bvf x r occupancy (rows bvf bins, columns r bins)\n";
    for (std::size_t i = 0; i < rep.bins; ++i) {
        for (std::size_t j = 0; j < rep.bins; ++j)
            os << (j ? "\t" : "") << rep.bvf_r_occupancy[i * rep.bins + j];
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// MRVD container

std::string encode_meta(const Meta& m) {
    std::string out;
    for (const auto& [k, v] : m) {
        if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw ValidationError("metadata key or value contains a separator: " + k);
        out += k + "=" + v + "\n";
    }
    return out;
}

Meta decode_meta(const std::string& text) {
    Meta m;
    std::istringstream ms(text);
    for (std::string line; std::getline(ms, line);) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("meta line without '=': " + line);
        m[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return m;
}

void save_dictionary(const Dictionary& dict, const std::filesystem::path& path) {
    if (dict.signals.size() != dict.size() * dict.length)
        throw DimensionError("signal matrix does not match entry count");
    const std::string meta = encode_meta(dict.meta);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os.write("MRVD", 4);
    io::put_u32(os, kDictionaryVersion);
    io::put_u64(os, dict.size());
    io::put_u32(os, static_cast<std::uint32_t>(dict.length));
    io::put_u32(os, static_cast<std::uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    for (const auto& e : dict.entries)
        for (std::size_t p = 0; p < VascularParams::kCount; ++p) io::put_f64(os, e[p]);
    for (float v : dict.signals) io::put_f32(os, v);
    if (!os) throw Error("write failed for " + path.string());
}

Dictionary load_dictionary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    io::expect_magic(is, "MRVD");
    const std::uint32_t version = io::get_u32(is, "MRVD version");
    if (version != kDictionaryVersion)
        throw VersionError("MRVD version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kDictionaryVersion) + ")");
    const std::uint64_t n = io::get_u64(is, "MRVD entry count");
    const std::uint32_t length = io::get_u32(is, "MRVD signal length");
    const std::uint32_t meta_len = io::get_u32(is, "MRVD meta length");

    // Reject sizes the file cannot hold before allocating.
    const auto file_size = std::filesystem::file_size(path);
    const std::uint64_t header = 4 + 4 + 8 + 4 + 4;
    const long double need = static_cast<long double>(header) + meta_len + static_cast<long double>(n) * 32.0L +
                             static_cast<long double>(n) * length * 4.0L;
    if (need > static_cast<long double>(file_size)) throw FormatError("MRVD file is truncated");

    Dictionary d;
    d.length = length;
    std::string meta(meta_len, '\0');
    io::read_exact(is, meta.data(), meta_len, "MRVD meta");
    d.meta = decode_meta(meta);
    d.entries.resize(n);
    for (auto& e : d.entries) {
        e.bvf = io::get_f64(is, "MRVD parameters");
        e.r = io::get_f64(is, "MRVD parameters");
        e.so2 = io::get_f64(is, "MRVD parameters");
        e.t2 = io::get_f64(is, "MRVD parameters");
    }
    d.signals.resize(n * length);
    for (auto& v : d.signals) v = io::get_f32(is, "MRVD signals");
    io::expect_eof(is);
    return d;
}

} // namespace mrvf::dictionary

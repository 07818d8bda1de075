#include "mrvf/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "mrvf/errors.hpp"
#include "mrvf/eval.hpp"
#include "mrvf/parallel.hpp"
#include "mrvf/rng.hpp"
#include "mrvf/volume_io.hpp"

namespace mrvf::pipeline {

namespace fs = std::filesystem;
using dictionary::format_double;
using dictionary::Range;
using geometry::Provenance;

std::string_view to_string(GeometryModel m) {
    switch (m) {
    case GeometryModel::Cylinders3D: return "cylinders3d";
    case GeometryModel::Disks2D: return "disks2d";
    case GeometryModel::Masks: return "masks";
    }
    return "masks";
}

geometry::Provenance family_from_string(std::string_view s) {
    if (s == "cylinders3d") return Provenance::Cylinders3D;
    if (s == "disks2d") return Provenance::Disks2D;
    throw ValidationError("unknown geometry family '" + std::string(s) + "' (expected cylinders3d or disks2d)");
}

std::string_view family_name(geometry::Provenance p) {
    if (p == Provenance::Cylinders3D) return "cylinders3d";
    if (p == Provenance::Disks2D) return "disks2d";
    throw ValidationError("no family name for provenance " + std::string(geometry::to_string(p)));
}

// ---------------------------------------------------------------------------
// Value syntax

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    for (;;) {
        const auto p = s.find(sep);
        out.push_back(trim(s.substr(0, p)));
        if (p == std::string_view::npos) return out;
        s.remove_prefix(p + 1);
    }
}

double parse_double(std::string_view s) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || end != s.data() + s.size() || !std::isfinite(v))
        throw ValidationError("expected a finite number, got '" + std::string(s) + "'");
    return v;
}

std::uint64_t parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || end != s.data() + s.size())
        throw ValidationError("expected a non-negative integer, got '" + std::string(s) + "'");
    return v;
}

std::size_t parse_size(std::string_view s) { return static_cast<std::size_t>(parse_u64(s)); }

int parse_int(std::string_view s) {
    const auto v = parse_u64(s);
    if (v > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
        throw ValidationError("integer out of range: '" + std::string(s) + "'");
    return static_cast<int>(v);
}

Range parse_range(std::string_view s) {
    const auto parts = split(s, ',');
    if (parts.size() != 2) throw ValidationError("expected 'lo,hi', got '" + std::string(s) + "'");
    return {parse_double(parts[0]), parse_double(parts[1])};
}

Dims parse_dims(std::string_view s) {
    const auto parts = split(s, ',');
    if (parts.size() != 3) throw ValidationError("expected 'nx,ny,nz', got '" + std::string(s) + "'");
    return {parse_size(parts[0]), parse_size(parts[1]), parse_size(parts[2])};
}

reconstruction::Clip parse_clip(std::string_view s) {
    const auto parts = split(s, ',');
    if (parts.size() != 2) throw ValidationError("expected 'lo,hi' or 'lo,', got '" + std::string(s) + "'");
    reconstruction::Clip c;
    c.lo = parse_double(parts[0]);
    if (!parts[1].empty()) c.hi = parse_double(parts[1]);
    return c;
}

std::vector<Provenance> parse_families(std::string_view s) {
    std::vector<Provenance> out;
    for (auto part : split(s, ',')) {
        const auto f = family_from_string(part);
        if (std::find(out.begin(), out.end(), f) != out.end())
            throw ValidationError("family '" + std::string(part) + "' listed twice");
        out.push_back(f);
    }
    return out;
}

GeometryModel parse_model(std::string_view s) {
    for (auto m : {GeometryModel::Cylinders3D, GeometryModel::Disks2D, GeometryModel::Masks})
        if (to_string(m) == s) return m;
    throw ValidationError("unknown geometry model '" + std::string(s) + "' (expected cylinders3d, disks2d or masks)");
}

std::string show(const Range& r) { return format_double(r.lo) + "," + format_double(r.hi); }
std::string show(const Dims& d) {
    return std::to_string(d.nx) + "," + std::to_string(d.ny) + "," + std::to_string(d.nz);
}
std::string show(const reconstruction::Clip& c) {
    return format_double(c.lo) + "," + (c.hi ? format_double(*c.hi) : std::string());
}
std::string show(const std::vector<Provenance>& fams) {
    std::string out;
    for (auto f : fams) out += (out.empty() ? "" : ",") + std::string(family_name(f));
    return out;
}

struct Field {
    std::function<void(PipelineConfig&, std::string_view)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

#define MRVF_DOUBLE(key, member) \
    {key, {[](PipelineConfig& c, std::string_view v) { c.member = parse_double(v); }, \
           [](const PipelineConfig& c) { return format_double(c.member); }}}
#define MRVF_SIZE(key, member) \
    {key, {[](PipelineConfig& c, std::string_view v) { c.member = parse_size(v); }, \
           [](const PipelineConfig& c) { return std::to_string(c.member); }}}
#define MRVF_RANGE(key, member) \
    {key, {[](PipelineConfig& c, std::string_view v) { c.member = parse_range(v); }, \
           [](const PipelineConfig& c) { return show(c.member); }}}
#define MRVF_DIMS(key, member) \
    {key, {[](PipelineConfig& c, std::string_view v) { c.member = parse_dims(v); }, \
           [](const PipelineConfig& c) { return show(c.member); }}}
#define MRVF_CLIP(key, index) \
    {key, {[](PipelineConfig& c, std::string_view v) { c.reconstruction.clips.clips[index] = parse_clip(v); }, \
           [](const PipelineConfig& c) { return show(c.reconstruction.clips.clips[index]); }}}
#define MRVF_FAMILIES(key, member) \
    {key, {[](PipelineConfig& c, std::string_view v) { c.member = parse_families(v); }, \
           [](const PipelineConfig& c) { return show(c.member); }}}

const std::map<std::string, Field, std::less<>>& fields() {
    static const std::map<std::string, Field, std::less<>> table{
        MRVF_DOUBLE("physics.b0", physics.b0),
        MRVF_DOUBLE("physics.gamma", physics.gamma),
        MRVF_DOUBLE("physics.hct", physics.hct),
        MRVF_DOUBLE("physics.dchi_deoxy", physics.dchi_deoxy),
        MRVF_DOUBLE("physics.dchi_uspio", physics.dchi_uspio),
        MRVF_DOUBLE("physics.diffusion", physics.diffusion),
        MRVF_DOUBLE("physics.dt", physics.dt),
        MRVF_DOUBLE("sequence.tr", sequence.tr),
        {"sequence.n_echoes",
         {[](PipelineConfig& c, std::string_view v) { c.sequence.n_echoes = parse_int(v); },
          [](const PipelineConfig& c) { return std::to_string(c.sequence.n_echoes); }}},
        MRVF_DOUBLE("sequence.delta_te", sequence.delta_te),
        MRVF_DOUBLE("sequence.se_time", sequence.se_time),
        {"geometry.model",
         {[](PipelineConfig& c, std::string_view v) { c.geometry.model = parse_model(v); },
          [](const PipelineConfig& c) { return std::string(to_string(c.geometry.model)); }}},
        {"geometry.dims",
         {[](PipelineConfig& c, std::string_view v) { c.geometry.dims = parse_dims(v); },
          [](const PipelineConfig& c) { return show(c.geometry.effective_dims()); }}},
        MRVF_DOUBLE("geometry.spacing", geometry.spacing),
        MRVF_RANGE("geometry.bvf", geometry.bvf),
        MRVF_RANGE("geometry.r", geometry.r),
        {"geometry.mask_dir",
         {[](PipelineConfig& c, std::string_view v) { c.geometry.mask_dir = std::string(v); },
          [](const PipelineConfig& c) { return c.geometry.mask_dir; }}},
        MRVF_RANGE("sampling.so2", sampling.so2),
        MRVF_RANGE("sampling.t2", sampling.t2),
        MRVF_SIZE("sampling.n", sampling.n),
        {"sampling.seed",
         {[](PipelineConfig& c, std::string_view v) { c.sampling.seed = parse_u64(v); },
          [](const PipelineConfig& c) { return std::to_string(c.sampling.seed); }}},
        {"reconstruction.method",
         {[](PipelineConfig& c, std::string_view v) {
              c.reconstruction.method = reconstruction::method_from_string(std::string(v));
          },
          [](const PipelineConfig& c) { return std::string(reconstruction::to_string(c.reconstruction.method)); }}},
        MRVF_SIZE("reconstruction.k", reconstruction.k),
        MRVF_CLIP("reconstruction.clip.bvf", 0),
        MRVF_CLIP("reconstruction.clip.r", 1),
        MRVF_CLIP("reconstruction.clip.so2", 2),
        MRVF_CLIP("reconstruction.clip.t2", 3),
        MRVF_SIZE("eval.n", eval.n),
        MRVF_DOUBLE("eval.snr", eval.snr),
        MRVF_DIMS("eval.dims_3d", eval.dims_3d),
        MRVF_DOUBLE("eval.spacing_3d", eval.spacing_3d),
        MRVF_DIMS("eval.dims_2d", eval.dims_2d),
        MRVF_DOUBLE("eval.spacing_2d", eval.spacing_2d),
        MRVF_SIZE("eval.dictionary_entries", eval.dictionary_entries),
        MRVF_RANGE("eval.bvf", eval.bvf),
        MRVF_RANGE("eval.r", eval.r),
        MRVF_FAMILIES("eval.generators", eval.generators),
        MRVF_FAMILIES("eval.dictionaries", eval.dictionaries),
    };
    return table;
}

#undef MRVF_DOUBLE
#undef MRVF_SIZE
#undef MRVF_RANGE
#undef MRVF_DIMS
#undef MRVF_CLIP
#undef MRVF_FAMILIES

void require(bool ok, const char* key, const std::string& what) {
    if (!ok) throw ValidationError(std::string(key) + ": " + what);
}

void check_range(const Range& r, const char* key) {
    require(r.lo <= r.hi, key, "range must be ordered (lo <= hi)");
}

std::vector<fs::path> mask_files(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".vxm") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw Error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string config_record(const PipelineConfig& cfg) {
    return canonical_config(cfg) + kHashKey + "=" + config_hash(cfg) + "\n";
}

const std::string* meta_hash(const dictionary::Meta& m) {
    const auto it = m.find(kHashKey);
    return it == m.end() ? nullptr : &it->second;
}

std::string voxel_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "voxel_%05zu.vxm", i);
    return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// Config

Dims PipelineConfig::Geometry::effective_dims() const {
    if (dims) return *dims;
    return model == GeometryModel::Disks2D ? Dims{128, 128, 1} : Dims{128, 128, 384};
}

fs::path PipelineConfig::mask_dir_path() const {
    const fs::path p(geometry.mask_dir);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

dictionary::VoxelSampling PipelineConfig::voxel_sampling() const {
    if (geometry.model == GeometryModel::Masks) throw ValidationError("geometry.model: masks are not sampled");
    dictionary::VoxelSampling s;
    s.family = geometry.model == GeometryModel::Disks2D ? Provenance::Disks2D : Provenance::Cylinders3D;
    s.dims = geometry.effective_dims();
    s.spacing = geometry.spacing;
    s.bvf = geometry.bvf;
    s.r = geometry.r;
    return s;
}

eval::BiasExperiment PipelineConfig::experiment(unsigned threads) const {
    eval::BiasExperiment e;
    e.physics = physics;
    e.sequence = sequence;
    e.bvf = eval.bvf;
    e.r = eval.r;
    e.so2 = sampling.so2;
    e.t2 = sampling.t2;
    e.dims_3d = eval.dims_3d;
    e.spacing_3d = eval.spacing_3d;
    e.dims_2d = eval.dims_2d;
    e.spacing_2d = eval.spacing_2d;
    e.dictionary_entries = eval.dictionary_entries;
    e.snr = eval.snr;
    e.method = reconstruction.method;
    e.k = reconstruction.k;
    e.generators = eval.generators;
    e.dictionaries = eval.dictionaries;
    e.threads = threads;
    return e;
}

void PipelineConfig::validate() const {
    physics.validate();
    sequence.validate();

    const Dims d = geometry.effective_dims();
    require(d.count() > 0, "geometry.dims", "all dimensions must be positive");
    require(geometry.spacing > 0.0, "geometry.spacing", "must be > 0");
    require(geometry.bvf.lo > 0.0 && geometry.bvf.hi < 1.0, "geometry.bvf", "must lie in (0, 1)");
    check_range(geometry.bvf, "geometry.bvf");
    require(geometry.r.lo > 0.0, "geometry.r", "must be > 0");
    check_range(geometry.r, "geometry.r");
    if (geometry.model == GeometryModel::Disks2D) require(d.nz == 1, "geometry.dims", "disks2d needs nz = 1");
    if (geometry.model == GeometryModel::Masks) {
        require(!geometry.mask_dir.empty(), "geometry.mask_dir", "required for geometry.model = masks");
        const fs::path dir = mask_dir_path();
        require(fs::is_directory(dir), "geometry.mask_dir", "'" + dir.string() + "' is not a directory");
        const auto files = mask_files(dir);
        require(files.size() >= sampling.n, "geometry.mask_dir",
                "holds " + std::to_string(files.size()) + " .vxm files; sampling.n = " + std::to_string(sampling.n));
    } else {
        require(geometry.mask_dir.empty(), "geometry.mask_dir", "only applies to geometry.model = masks");
    }

    require(sampling.so2.lo >= 0.0 && sampling.so2.hi <= 1.0, "sampling.so2", "must lie in [0, 1]");
    check_range(sampling.so2, "sampling.so2");
    require(sampling.t2.lo > 0.0, "sampling.t2", "must be > 0");
    check_range(sampling.t2, "sampling.t2");
    require(sampling.n >= 1, "sampling.n", "must be >= 1");

    try {
        reconstruction.clips.validate();
    } catch (...) {
        rethrow_with_prefix("reconstruction.clip: ");
    }

    require(eval.n >= 50, "eval.n", "must be >= 50");
    require(eval.snr > 0.0, "eval.snr", "must be > 0");
    require(eval.dims_3d.count() > 0, "eval.dims_3d", "all dimensions must be positive");
    require(eval.dims_2d.count() > 0, "eval.dims_2d", "all dimensions must be positive");
    require(eval.dims_2d.nz == 1, "eval.dims_2d", "needs nz = 1");
    require(eval.spacing_3d > 0.0, "eval.spacing_3d", "must be > 0");
    require(eval.spacing_2d > 0.0, "eval.spacing_2d", "must be > 0");
    require(eval.dictionary_entries >= 1, "eval.dictionary_entries", "must be >= 1");
    require(eval.bvf.lo > 0.0 && eval.bvf.hi < 1.0, "eval.bvf", "must lie in (0, 1)");
    check_range(eval.bvf, "eval.bvf");
    require(eval.r.lo > 0.0, "eval.r", "must be > 0");
    check_range(eval.r, "eval.r");
    require(!eval.generators.empty(), "eval.generators", "needs at least one family");
    require(!eval.dictionaries.empty(), "eval.dictionaries", "needs at least one family");
}

PipelineConfig parse_config(std::string_view text) {
    PipelineConfig cfg;
    const auto& table = fields();
    std::map<std::string, std::size_t, std::less<>> seen;
    std::size_t line_no = 0;
    for (auto line : split(text, '\n')) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = trim(line.substr(0, hash));
        if (line.empty()) continue;
        const auto at = "line " + std::to_string(line_no) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ValidationError(at + "expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto it = table.find(key);
        if (it == table.end()) throw ValidationError(at + "unknown key '" + std::string(key) + "'");
        if (const auto prev = seen.find(key); prev != seen.end())
            throw ValidationError(at + "duplicate key '" + std::string(key) + "' (first set on line " +
                                  std::to_string(prev->second) + ")");
        seen.emplace(std::string(key), line_no);
        try {
            it->second.set(cfg, value);
        } catch (const Error& e) {
            throw ValidationError(at + std::string(key) + ": " + e.what());
        }
    }
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw ValidationError("config file '" + path.string() + "' does not exist");
    try {
        auto cfg = parse_config(read_text(path));
        cfg.base_dir = path.parent_path();
        return cfg;
    } catch (...) {
        rethrow_with_prefix(path.string() + ": ");
    }
}

std::string canonical_config(const PipelineConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + "=" + field.get(cfg) + "\n";
    return out;
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string config_hash(const PipelineConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
    return buf;
}

// ---------------------------------------------------------------------------
// Manifest

std::string format_manifest(const Manifest& m) {
    std::ostringstream os;
    os << "# config_hash=" << m.config_hash << "\n# file\tbvf\tmean_radius\tprovenance\tseed\n";
    for (const auto& e : m.entries)
        os << e.file << '\t' << format_double(e.bvf) << '\t' << format_double(e.mean_radius) << '\t'
           << geometry::to_string(e.provenance) << '\t' << e.seed << '\n';
    return os.str();
}

Manifest parse_manifest(std::string_view text) {
    Manifest m;
    std::size_t line_no = 0;
    constexpr std::string_view kHashPrefix = "# config_hash=";
    for (auto line : split(text, '\n')) {
        ++line_no;
        if (line.empty()) continue;
        if (line.starts_with(kHashPrefix)) {
            m.config_hash = std::string(trim(line.substr(kHashPrefix.size())));
            continue;
        }
        if (line.front() == '#') continue;
        const auto cols = split(line, '\t');
        const auto at = "manifest line " + std::to_string(line_no) + ": ";
        if (cols.size() != 5) throw FormatError(at + "expected 5 tab-separated columns");
        try {
            ManifestEntry e;
            e.file = std::string(cols[0]);
            if (e.file.empty()) throw FormatError("empty file name");
            e.bvf = parse_double(cols[1]);
            e.mean_radius = parse_double(cols[2]);
            e.provenance = geometry::provenance_from_string(cols[3]);
            e.seed = parse_u64(cols[4]);
            m.entries.push_back(std::move(e));
        } catch (const Error& err) {
            throw FormatError(at + err.what());
        }
    }
    if (m.config_hash.empty()) throw FormatError("manifest has no config_hash header");
    return m;
}

Manifest read_manifest(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw ValidationError("manifest '" + path.string() + "' does not exist");
    return parse_manifest(read_text(path));
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_voxels(const PipelineConfig& cfg, const fs::path& out_dir, const RunOptions& opts) {
    cfg.validate();
    const std::size_t n = cfg.sampling.n;
    const std::uint64_t seed = cfg.sampling.seed;
    std::vector<geometry::VoxelGeometry> geoms;
    if (cfg.geometry.model == GeometryModel::Masks) {
        const auto files = mask_files(cfg.mask_dir_path());
        const std::uint64_t voxel_seed = derive_seed(seed, Stream::GeometryVoxels);
        geoms.resize(n);
        parallel_for(n, opts.threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                try {
                    geoms[i] = geometry::characterize(io::ingest_mask(files[i]), Provenance::RealisticMask,
                                                      derive_seed(voxel_seed, i));
                } catch (...) {
                    rethrow_with_prefix("voxel " + std::to_string(i) + " (" + files[i].filename().string() + "): ");
                }
            }
        });
    } else {
        geoms = dictionary::generate_voxels(cfg.voxel_sampling(), n, seed, 0, opts.threads);
    }

    Manifest manifest;
    manifest.config_hash = config_hash(cfg);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < n; ++i) {
        const auto name = voxel_file_name(i);
        io::write_mask(geoms[i].lattice, out_dir / name);
        manifest.entries.push_back({name, geoms[i].bvf, geoms[i].mean_radius, geoms[i].provenance, geoms[i].seed});
    }
    write_text(out_dir / kManifestName, format_manifest(manifest));
    write_text(out_dir / "config.txt", config_record(cfg));
    if (opts.log) *opts.log << "voxels " << n << "\nmanifest " << (out_dir / kManifestName).string() << "\n";
}

dictionary::Dictionary cmd_build_dict(const PipelineConfig& cfg, const fs::path& manifest_path,
                                      const fs::path& out_path, const RunOptions& opts) {
    cfg.validate();
    const std::string hash = config_hash(cfg);
    const Manifest manifest = read_manifest(manifest_path);
    if (manifest.config_hash != hash)
        throw ValidationError("manifest was produced under config hash " + manifest.config_hash +
                              "; the current config hashes to " + hash);
    if (manifest.entries.empty()) throw ValidationError("manifest lists no voxels");

    const fs::path dir = manifest_path.parent_path();
    std::vector<geometry::VoxelGeometry> geoms(manifest.entries.size());
    parallel_for(geoms.size(), opts.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto& m = manifest.entries[i];
            try {
                auto lattice = io::ingest_mask(dir / m.file);
                const double bvf = geometry::compute_bvf(lattice);
                if (!(std::abs(bvf - m.bvf) <= 1e-12))
                    throw ValidationError("manifest bvf " + format_double(m.bvf) + " but the mask has " +
                                          format_double(bvf));
                geoms[i] = {std::move(lattice), m.bvf, m.mean_radius, m.provenance, m.seed};
            } catch (...) {
                rethrow_with_prefix("voxel " + std::to_string(i) + " (" + m.file + "): ");
            }
        }
    });

    const auto start = std::chrono::steady_clock::now();
    dictionary::BuildOptions bopts;
    bopts.threads = opts.threads;
    auto dict = dictionary::build_dictionary(geoms, cfg.sampling.so2, cfg.sampling.t2, cfg.physics, cfg.sequence,
                                             cfg.sampling.seed, bopts);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::istringstream canon(canonical_config(cfg));
    for (std::string line; std::getline(canon, line);) {
        const auto eq = line.find('=');
        dict.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    dict.meta[kHashKey] = hash;

    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    dictionary::save_dictionary(dict, out_path);
    if (opts.log)
        *opts.log << "entries " << dict.size() << "\nwall_time_s " << seconds << "\nper_entry_s "
                  << seconds / static_cast<double>(dict.size()) << "\n";
    return dict;
}

reconstruction::RegressionModel cmd_train(const fs::path& dict_path, std::size_t k, std::uint64_t seed,
                                          const fs::path& out_path, const RunOptions& opts,
                                          const PipelineConfig* cfg) {
    if (cfg) cfg->validate();
    if (!fs::is_regular_file(dict_path)) throw ValidationError("dictionary '" + dict_path.string() + "' does not exist");
    const auto dict = dictionary::load_dictionary(dict_path);
    if (cfg) {
        const auto* h = meta_hash(dict.meta);
        if (!h) throw ValidationError("dictionary carries no config hash");
        if (*h != config_hash(*cfg))
            throw ValidationError("dictionary config hash " + *h + " differs from the config's " + config_hash(*cfg));
    }
    if (k == 0) k = reconstruction::default_k(dict.size());
    reconstruction::TrainOptions topts;
    topts.threads = opts.threads;
    auto model = reconstruction::train_dbl(dict, k, seed, topts);
    model.meta["train.seed"] = std::to_string(seed);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    reconstruction::save_model(model, out_path);
    if (opts.log)
        *opts.log << "log_likelihood " << format_double(model.log_likelihood) << "\nk " << model.k()
                  << " (requested " << model.requested_k << ")\niterations " << model.iterations << "\n";
    return model;
}

reconstruction::ParamMaps cmd_reconstruct(const ReconstructRequest& req, const RunOptions& opts) {
    using reconstruction::Method;
    if (req.config) req.config->validate();
    if (req.method == Method::Dbm && !req.dict) throw ValidationError("dbm reconstruction needs --dict");
    if (req.method == Method::Dbl && !req.model) throw ValidationError("dbl reconstruction needs --model");
    for (const auto* p : {&req.input, req.dict ? &*req.dict : nullptr, req.model ? &*req.model : nullptr})
        if (p && !fs::is_regular_file(*p)) throw ValidationError("'" + p->string() + "' does not exist");

    std::vector<std::pair<std::string, std::string>> hashes;
    if (req.config) hashes.emplace_back("config", config_hash(*req.config));

    io::FingerprintVolume volume;
    {
        std::ifstream is(req.input, std::ios::binary);
        char magic[4] = {};
        is.read(magic, 4);
        const std::string m(magic, static_cast<std::size_t>(is.gcount()));
        if (m == "FPV1") {
            volume = io::read_fingerprint_volume(req.input);
        } else if (m == "MRVD") {
            auto src = dictionary::load_dictionary(req.input);
            if (const auto* h = meta_hash(src.meta)) hashes.emplace_back("input", *h);
            volume.dims = Dims{src.size(), 1, 1};
            volume.length = src.length;
            volume.values = std::move(src.signals);
        } else {
            throw FormatError(req.input.string() + ": not an FPV1 volume or MRVD dictionary");
        }
    }
    std::optional<dictionary::Dictionary> dict;
    std::optional<reconstruction::RegressionModel> model;
    if (req.method == Method::Dbm) {
        dict = dictionary::load_dictionary(*req.dict);
        if (const auto* h = meta_hash(dict->meta)) hashes.emplace_back("dictionary", *h);
    } else {
        model = reconstruction::load_model(*req.model);
        if (const auto* h = meta_hash(model->meta)) hashes.emplace_back("model", *h);
    }
    for (const auto& [name, h] : hashes)
        if (h != hashes.front().second)
            throw ValidationError(name + " config hash " + h + " differs from " + hashes.front().first + " hash " +
                                  hashes.front().second);

    const auto clips = req.config ? req.config->reconstruction.clips : reconstruction::ClipRules::standard();
    auto maps = reconstruction::reconstruct_map(volume, req.method, dict ? &*dict : nullptr,
                                                model ? &*model : nullptr, clips, opts.threads);

    Lattice3D all(maps.dims, Vec3{1.0, 1.0, 1.0}, std::vector<std::uint8_t>(maps.dims.count(), 1));
    const auto stats = eval::roi_stats(maps, all, "all");
    fs::create_directories(req.out_dir);
    for (std::size_t p = 0; p < dictionary::VascularParams::kCount; ++p) {
        io::FloatVolume vol;
        vol.dims = maps.dims;
        vol.values.assign(maps.maps[p].begin(), maps.maps[p].end());
        io::write_float_volume(vol, req.out_dir / (std::string(dictionary::kParamNames[p]) + ".vxf"));
    }
    std::ostringstream os;
    os << "parameter\tn\tmean\tmethod\tconfig_hash\n";
    const std::string hash = hashes.empty() ? "-" : hashes.front().second;
    for (std::size_t p = 0; p < dictionary::VascularParams::kCount; ++p)
        os << dictionary::kParamNames[p] << '\t' << stats.n << '\t' << format_double(stats.mean[p]) << '\t'
           << reconstruction::to_string(req.method) << '\t' << hash << '\n';
    write_text(req.out_dir / "summary.tsv", os.str());
    if (opts.log) *opts.log << "voxels " << stats.n << "\nmaps " << req.out_dir.string() << "\n";
    return maps;
}

void cmd_eval(const PipelineConfig& cfg, const fs::path& out_dir, const RunOptions& opts) {
    cfg.validate();
    const auto exp = cfg.experiment(opts.threads);
    exp.validate();
    const std::uint64_t seed = cfg.sampling.seed;
    auto stage = [&](const std::string& name, const auto& fn) {
        if (opts.log) *opts.log << "stage " << name << "\n" << std::flush;
        try {
            return fn();
        } catch (...) {
            rethrow_with_prefix("eval stage '" + name + "' failed: ");
        }
    };

    std::vector<eval::FamilyDictionary> dicts;
    std::vector<eval::RecoveryReport> reports;
    for (auto fam : cfg.eval.dictionaries) {
        const std::string name(family_name(fam));
        dicts.push_back(stage("dictionary " + name, [&] {
            return eval::FamilyDictionary{fam, eval::build_family_dictionary(exp, fam, seed)};
        }));
        reports.push_back(stage("self-recovery " + name, [&] {
            const auto& d = dicts.back().dict;
            std::vector<dictionary::VascularParams> est(d.size());
            parallel_for(d.size(), opts.threads, [&](std::size_t b, std::size_t e) {
                std::vector<double> fp(d.length);
                for (std::size_t i = b; i < e; ++i) {
                    const auto row = d.row(i);
                    std::copy(row.begin(), row.end(), fp.begin());
                    est[i] = reconstruction::match_dbm(fp, d);
                }
            });
            return eval::recovery_metrics(d.entries, est, "self/" + name + "/dbm/noiseless");
        }));
    }

    const auto table = stage("bias", [&] { return eval::cross_model_bias(cfg.eval.n, seed, exp, dicts); });
    for (const auto& c : table.cells) {
        auto r = c.report;
        r.label = "test/" + std::string(family_name(c.generator)) + "/" + std::string(family_name(c.dictionary)) +
                  "/" + reconstruction::to_string(cfg.reconstruction.method) + "/snr" + format_double(cfg.eval.snr);
        reports.push_back(std::move(r));
    }

    std::vector<std::string> labels;
    std::vector<eval::TTestResult> tests;
    stage("ttest", [&] {
        for (const auto& diag : table.cells) {
            if (diag.generator != diag.dictionary) continue;
            for (const auto& off : table.cells) {
                if (off.generator != diag.generator || off.dictionary == diag.dictionary) continue;
                for (std::size_t p = 0; p < dictionary::VascularParams::kCount; ++p) {
                    std::vector<double> a, b;
                    for (const auto& v : diag.estimates) a.push_back(v[p]);
                    for (const auto& v : off.estimates) b.push_back(v[p]);
                    eval::TTestResult r;
                    try {
                        r = eval::welch_ttest(a, b);
                    } catch (const DegenerateSample&) {
                        const double nan = std::numeric_limits<double>::quiet_NaN();
                        r = {nan, nan, nan};
                    }
                    labels.push_back(std::string(family_name(diag.generator)) + ":" +
                                     std::string(family_name(diag.dictionary)) + "_vs_" +
                                     std::string(family_name(off.dictionary)) + ":" + dictionary::kParamNames[p]);
                    tests.push_back(r);
                }
            }
        }
        return 0;
    });

    fs::create_directories(out_dir);
    write_text(out_dir / "recovery.tsv", eval::format_recovery(reports));
    write_text(out_dir / "bias.tsv", eval::format_bias(table));
    write_text(out_dir / "ttest.tsv", eval::format_ttest(labels, tests));
    write_text(out_dir / "config.txt", config_record(cfg));
    if (opts.log) *opts.log << "reports " << out_dir.string() << "\n";
}

} // namespace mrvf::pipeline

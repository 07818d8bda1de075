#include <algorithm>
#include <mutex>
#include <memory>
#include <cmath>
#include <complex>
#include <cstring>
#include <map>
#include <numbers>
#include <string>
#include <utility>

#include "fftw_support.hpp"
#include "mrvf/errors.hpp"
#include "mrvf/parallel.hpp"
#include "mrvf/physics.hpp"

namespace mrvf::physics {

void PhysicsParams::validate() const {
    if (!(b0 > 0.0)) throw ValidationError("physics.b0 must be > 0");
    if (!(gamma > 0.0)) throw ValidationError("physics.gamma must be > 0");
    if (!(hct >= 0.0 && hct <= 1.0)) throw ValidationError("physics.hct must lie in [0, 1]");
    if (!std::isfinite(dchi_deoxy) || !std::isfinite(dchi_uspio))
        throw ValidationError("susceptibilities must be finite");
    if (!(diffusion >= 0.0) || !std::isfinite(diffusion))
        throw ValidationError("physics.diffusion must be >= 0");
    if (!(dt > 0.0 && dt <= 1.0)) throw ValidationError("physics.dt must lie in (0, 1] ms");
}

std::vector<double> SequenceSpec::echo_times() const {
    std::vector<double> t(static_cast<std::size_t>(std::max(n_echoes, 0)));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i + 1) * delta_te;
    return t;
}

void SequenceSpec::validate() const {
    if (n_echoes < 1) throw ValidationError("sequence.n_echoes must be >= 1");
    if (!(delta_te > 0.0)) throw ValidationError("sequence.delta_te must be > 0");
    if (!(se_time > 0.0)) throw ValidationError("sequence.se_time must be > 0");
    if (!(tr > 0.0)) throw ValidationError("sequence.tr must be > 0");
    for (double t : echo_times())
        if (std::abs(t - refocus_time()) < 1e-9)
            throw ValidationError("an echo coincides with the refocusing pulse");
    if (static_cast<double>(n_echoes) * delta_te > tr)
        throw ValidationError("echo train is longer than TR");
}

namespace {

// Spectral multiplier exp(-D|k|²h)/N, factored as a per-plane (kx, ky) table and a kz
// table. The 1/N normalises the unnormalised FFTW round trip.
struct Multiplier {
    std::vector<float> xy;
    std::vector<float> z;
};

std::vector<double> axis_decay(std::size_t n, double spacing, double d_um2_ms, double h_ms) {
    std::vector<double> out(n);
    for (std::size_t m = 0; m < n; ++m) {
        const double sm = m <= n / 2 ? static_cast<double>(m) : static_cast<double>(m) - static_cast<double>(n);
        const double km = 2.0 * std::numbers::pi * sm / (static_cast<double>(n) * spacing);
        out[m] = std::exp(-d_um2_ms * km * km * h_ms);
    }
    return out;
}

Multiplier make_multiplier(Dims d, Vec3 h, double d_um2_ms, double h_ms) {
    const auto ex = axis_decay(d.nx, h.x, d_um2_ms, h_ms);
    const auto ey = axis_decay(d.ny, h.y, d_um2_ms, h_ms);
    const auto ez = axis_decay(d.nz, h.z, d_um2_ms, h_ms);
    const double inv_n = 1.0 / static_cast<double>(d.count());
    Multiplier m;
    m.xy.resize(d.nx * d.ny);
    for (std::size_t y = 0; y < d.ny; ++y)
        for (std::size_t x = 0; x < d.nx; ++x)
            m.xy[y * d.nx + x] = static_cast<float>(ex[x] * ey[y] * inv_n);
    m.z.assign(ez.begin(), ez.end());
    return m;
}

// Complex single-precision lattice advanced by "multiply by phase, then diffuse" steps.
// Diffusion is a forward FFT, the spectral multiplier and an inverse FFT, done as 1D
// passes: x and y per z-plane, z on gathered blocks of kColumns columns. Every plane and
// block is transformed by the same ESTIMATE plan regardless of the thread partition, so
// results do not depend on the thread count. After a step the lattice may be left with
// the x/y inverse pending; it is folded into the next step's plane pass.
class SpectralStepper {
public:
    static constexpr std::size_t kColumns = 16;

    SpectralStepper(Dims d, unsigned threads)
        : d_(d), plane_(d.nx * d.ny), threads_(threads), data_(detail::fftw_buffer<fftwf_complex>(d.count())) {
        unsigned flags = FFTW_ESTIMATE;
        const int base = fftwf_alignment_of(reinterpret_cast<float*>(data_.get()));
        for (std::size_t z = 1; z < d.nz; ++z)
            if (fftwf_alignment_of(reinterpret_cast<float*>(data_.get() + z * plane_)) != base)
                flags |= FFTW_UNALIGNED;
        const int nx = static_cast<int>(d.nx), ny = static_cast<int>(d.ny), nz = static_cast<int>(d.nz);
        auto* p = data_.get();
        std::lock_guard lock(detail::fftw_planner_mutex());
        x_fwd_ = plan(1, &nx, ny, p, 1, nx, FFTW_FORWARD, flags);
        x_inv_ = plan(1, &nx, ny, p, 1, nx, FFTW_BACKWARD, flags);
        y_fwd_ = plan(1, &ny, nx, p, nx, 1, FFTW_FORWARD, flags);
        y_inv_ = plan(1, &ny, nx, p, nx, 1, FFTW_BACKWARD, flags);
        if (d.nz > 1) {
            auto scratch = detail::fftw_buffer<fftwf_complex>(d.nz * kColumns);
            const int full = static_cast<int>(std::min(kColumns, plane_));
            const int tail = static_cast<int>(plane_ % kColumns);
            z_fwd_ = plan(1, &nz, full, scratch.get(), full, 1, FFTW_FORWARD, FFTW_ESTIMATE);
            z_inv_ = plan(1, &nz, full, scratch.get(), full, 1, FFTW_BACKWARD, FFTW_ESTIMATE);
            if (tail > 0 && plane_ > kColumns) {
                z_tail_fwd_ = plan(1, &nz, tail, scratch.get(), tail, 1, FFTW_FORWARD, FFTW_ESTIMATE);
                z_tail_inv_ = plan(1, &nz, tail, scratch.get(), tail, 1, FFTW_BACKWARD, FFTW_ESTIMATE);
            }
        }
    }

    fftwf_complex* data() { return data_.get(); }

    /// m ← diffuse(phase · m). `phase` is interleaved per cell and may be null.
    void step(const float* phase, const Multiplier& mult) {
        const bool single_plane = d_.nz == 1;
        parallel_for(d_.nz, threads_, [&](std::size_t zb, std::size_t ze) {
            for (std::size_t z = zb; z < ze; ++z) {
                fftwf_complex* p = data_.get() + z * plane_;
                if (pending_) inverse_xy(p);
                if (phase) {
                    const float* ph = phase + 2 * z * plane_;
                    for (std::size_t i = 0; i < plane_; ++i) {
                        const float a = p[i][0], b = p[i][1], c = ph[2 * i], s = ph[2 * i + 1];
                        p[i][0] = a * c - b * s;
                        p[i][1] = a * s + b * c;
                    }
                }
                x_fwd_->execute(p);
                y_fwd_->execute(p);
                if (single_plane) {
                    scale(p, mult.xy.data(), plane_);
                    inverse_xy(p);
                }
            }
        });
        if (single_plane) {
            pending_ = false;
            return;
        }
        const std::size_t blocks = (plane_ + kColumns - 1) / kColumns;
        parallel_for(blocks, threads_, [&](std::size_t bb, std::size_t be) {
            auto buf = detail::fftw_buffer<fftwf_complex>(d_.nz * kColumns);
            for (std::size_t blk = bb; blk < be; ++blk) z_block(blk, buf.get(), mult);
        });
        pending_ = true;
    }

    /// Completes a pending inverse so data() holds the spatial lattice.
    void finish() {
        if (!pending_) return;
        parallel_for(d_.nz, threads_, [&](std::size_t zb, std::size_t ze) {
            for (std::size_t z = zb; z < ze; ++z) inverse_xy(data_.get() + z * plane_);
        });
        pending_ = false;
    }

    void conjugate() {
        finish();
        auto* p = data_.get();
        for (std::size_t i = 0, n = d_.count(); i < n; ++i) p[i][1] = -p[i][1];
    }

    // Reduced per plane, then in plane order.
    std::complex<double> mean() {
        finish();
        std::vector<std::complex<double>> partial(d_.nz);
        parallel_for(d_.nz, threads_, [&](std::size_t zb, std::size_t ze) {
            for (std::size_t z = zb; z < ze; ++z) {
                double re = 0.0, im = 0.0;
                const fftwf_complex* p = data_.get() + z * plane_;
                for (std::size_t i = 0; i < plane_; ++i) {
                    re += static_cast<double>(p[i][0]);
                    im += static_cast<double>(p[i][1]);
                }
                partial[z] = {re, im};
            }
        });
        std::complex<double> total{0.0, 0.0};
        for (const auto& c : partial) total += c;
        return total / static_cast<double>(d_.count());
    }

private:
    static std::unique_ptr<detail::PlanF> plan(int rank, const int* n, int howmany, fftwf_complex* p,
                                               int stride, int dist, int sign, unsigned flags) {
        return std::make_unique<detail::PlanF>(
            fftwf_plan_many_dft(rank, n, howmany, p, nullptr, stride, dist, p, nullptr, stride, dist, sign, flags));
    }

    static void scale(fftwf_complex* p, const float* w, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            p[i][0] *= w[i];
            p[i][1] *= w[i];
        }
    }

    void inverse_xy(fftwf_complex* p) const {
        y_inv_->execute(p);
        x_inv_->execute(p);
    }

    void z_block(std::size_t blk, fftwf_complex* buf, const Multiplier& mult) {
        const std::size_t c0 = blk * kColumns;
        const std::size_t w = std::min(kColumns, plane_ - c0);
        const bool tail = w != std::min(kColumns, plane_);
        fftwf_complex* lat = data_.get();
        for (std::size_t z = 0; z < d_.nz; ++z)
            std::memcpy(buf + z * w, lat + z * plane_ + c0, w * sizeof(fftwf_complex));
        (tail ? z_tail_fwd_ : z_fwd_)->execute(buf);
        for (std::size_t z = 0; z < d_.nz; ++z) {
            const float mz = mult.z[z];
            fftwf_complex* row = buf + z * w;
            const float* mxy = mult.xy.data() + c0;
            for (std::size_t j = 0; j < w; ++j) {
                const float f = mz * mxy[j];
                row[j][0] *= f;
                row[j][1] *= f;
            }
        }
        (tail ? z_tail_inv_ : z_inv_)->execute(buf);
        for (std::size_t z = 0; z < d_.nz; ++z)
            std::memcpy(lat + z * plane_ + c0, buf + z * w, w * sizeof(fftwf_complex));
    }

    Dims d_;
    std::size_t plane_;
    unsigned threads_;
    detail::FftwBuffer<fftwf_complex> data_;
    std::unique_ptr<detail::PlanF> x_fwd_, x_inv_, y_fwd_, y_inv_, z_fwd_, z_inv_, z_tail_fwd_, z_tail_inv_;
    bool pending_ = false;
};

// Times are handled on an integer grid (1e-6 ms) so interval lengths and cache keys are exact.
constexpr double kTicksPerMs = 1e6;

long long to_ticks(double t_ms) { return std::llround(t_ms * kTicksPerMs); }

void check_inputs(const FieldMap& field, double t2, const PhysicsParams& p,
                  std::span<const double> sample_times) {
    p.validate();
    if (!(t2 > 0.0)) throw ValidationError("T2 must be > 0");
    if (field.values.size() != field.dims.count()) throw DimensionError("field map size mismatch");
    if (sample_times.empty()) throw ValidationError("no sample times");
    for (std::size_t i = 0; i < sample_times.size(); ++i) {
        if (!(sample_times[i] > 0.0)) throw ValidationError("sample times must be > 0");
        if (i > 0 && to_ticks(sample_times[i]) <= to_ticks(sample_times[i - 1]))
            throw ValidationError("sample times must be strictly increasing");
    }
    double max_abs = 0.0;
    for (double v : field.values) max_abs = std::max(max_abs, std::abs(v));
    const double worst_phase = p.gamma * max_abs * p.dt * 1e-3;
    if (worst_phase > 0.5)
        throw StepTooCoarse("phase per step " + std::to_string(worst_phase) +
                            " rad exceeds 0.5; reduce physics.dt");
}

// Static dephasing without diffusion has a closed form per cell: after refocusing at
// tr the accumulated phase is -gamma*ΔB*(t - 2 tr).
SignalTrace static_dephasing(const FieldMap& field, double t2, const PhysicsParams& p,
                             double refocus_time, std::span<const double> sample_times,
                             unsigned threads) {
    SignalTrace trace;
    const Dims d = field.dims;
    const std::size_t plane = d.nx * d.ny;
    const bool refocus = refocus_time > 0.0 && to_ticks(refocus_time) < to_ticks(sample_times.back());
    for (double t : sample_times) {
        const double tau = (refocus && to_ticks(t) > to_ticks(refocus_time)) ? t - 2.0 * refocus_time : t;
        const double rate = -p.gamma * tau * 1e-3;
        std::vector<std::complex<double>> partial(d.nz);
        parallel_for(d.nz, threads, [&](std::size_t zb, std::size_t ze) {
            for (std::size_t z = zb; z < ze; ++z) {
                double re = 0.0, im = 0.0;
                for (std::size_t i = z * plane; i < (z + 1) * plane; ++i) {
                    const double ph = rate * field.values[i];
                    re += std::cos(ph);
                    im += std::sin(ph);
                }
                partial[z] = {re, im};
            }
        });
        std::complex<double> total{0.0, 0.0};
        for (const auto& c : partial) total += c;
        trace.times.push_back(t);
        trace.magnitudes.push_back(std::abs(total) / static_cast<double>(d.count()) * std::exp(-t / t2));
    }
    return trace;
}

// Precomputed per-step operators for one step length.
struct StepOperator {
    std::vector<float> phase;  // interleaved exp(-i gamma ΔB h)
    Multiplier multiplier;
};

} // namespace

SignalTrace simulate_signal(const FieldMap& field, double t2, const PhysicsParams& p,
                            double refocus_time, std::span<const double> sample_times,
                            const SimOptions& opts) {
    check_inputs(field, t2, p, sample_times);
    if (p.diffusion == 0.0)
        return static_dephasing(field, t2, p, refocus_time, sample_times, opts.threads);

    const Dims d = field.dims;
    const std::size_t n = d.count();
    const double d_um2_ms = p.diffusion * 1e-3;
    const long long dt_ticks = std::max<long long>(1, to_ticks(p.dt));

    // Event list: (tick, is_sample index or -1 for refocus).
    std::vector<std::pair<long long, long long>> events;
    for (std::size_t i = 0; i < sample_times.size(); ++i)
        events.emplace_back(to_ticks(sample_times[i]), static_cast<long long>(i));
    const long long tr_ticks = to_ticks(refocus_time);
    if (refocus_time > 0.0 && tr_ticks < events.back().first) events.emplace_back(tr_ticks, -1);
    // Samples at the refocus instant are read before the pulse.
    std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : a.second > b.second;
    });

    std::map<std::pair<long long, long long>, StepOperator> operators;
    auto op_for = [&](long long interval, long long substeps) -> const StepOperator& {
        auto key = std::make_pair(interval, substeps);
        auto it = operators.find(key);
        if (it != operators.end()) return it->second;
        const double h_ms = static_cast<double>(interval) / kTicksPerMs / static_cast<double>(substeps);
        StepOperator op;
        op.multiplier = make_multiplier(d, field.spacing, d_um2_ms, h_ms);
        op.phase.resize(2 * n);
        const double rate = -p.gamma * h_ms * 1e-3;
        parallel_for(n, opts.threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                const double ph = rate * field.values[i];
                op.phase[2 * i] = static_cast<float>(std::cos(ph));
                op.phase[2 * i + 1] = static_cast<float>(std::sin(ph));
            }
        });
        return operators.emplace(key, std::move(op)).first->second;
    };

    SpectralStepper m(d, opts.threads);
    for (std::size_t i = 0; i < n; ++i) {
        m.data()[i][0] = 1.0f;
        m.data()[i][1] = 0.0f;
    }

    SignalTrace trace;
    trace.times.assign(sample_times.begin(), sample_times.end());
    trace.magnitudes.assign(sample_times.size(), 0.0);
    long long now = 0;
    for (const auto& [tick, what] : events) {
        const long long interval = tick - now;
        if (interval > 0) {
            const long long substeps = (interval + dt_ticks - 1) / dt_ticks;
            const StepOperator& op = op_for(interval, substeps);
            for (long long s = 0; s < substeps; ++s)
                m.step(op.phase.data(), op.multiplier);
            now = tick;
        }
        if (what < 0) {
            m.conjugate();
        } else {
            const auto idx = static_cast<std::size_t>(what);
            const double t = sample_times[idx];
            trace.magnitudes[idx] = std::abs(m.mean()) * std::exp(-t / t2);
        }
    }
    return trace;
}

SignalTrace simulate_gesfidse(const geometry::VoxelGeometry& geom, const FieldMap& field, double t2,
                              const PhysicsParams& p, const SequenceSpec& seq,
                              const SimOptions& opts) {
    seq.validate();
    if (field.dims != geom.lattice.dims()) throw DimensionError("field and geometry dims differ");
    const auto echoes = seq.echo_times();
    return simulate_signal(field, t2, p, seq.refocus_time(), echoes, opts);
}

Fingerprint make_fingerprint(const SignalTrace& pre, const SignalTrace& post) {
    if (pre.magnitudes.size() != post.magnitudes.size())
        throw LengthMismatch("pre and post traces differ in length");
    for (std::size_t i = 0; i < pre.times.size() && i < post.times.size(); ++i)
        if (to_ticks(pre.times[i]) != to_ticks(post.times[i]))
            throw LengthMismatch("pre and post traces use different echo grids");
    Fingerprint fp;
    fp.values.reserve(2 * pre.magnitudes.size());
    fp.values.insert(fp.values.end(), pre.magnitudes.begin(), pre.magnitudes.end());
    fp.values.insert(fp.values.end(), post.magnitudes.begin(), post.magnitudes.end());
    double sq = 0.0;
    for (double v : fp.values) sq += v * v;
    const double nrm = std::sqrt(sq);
    if (!(nrm > 0.0)) throw ZeroSignal("fingerprint has zero norm");
    for (double& v : fp.values) v /= nrm;
    return fp;
}

Fingerprint simulate_fingerprint(const geometry::VoxelGeometry& geom, double so2, double t2,
                                 const PhysicsParams& p, const SequenceSpec& seq,
                                 const SimOptions& opts) {
    const FieldAxis axis = default_field_axis(geom.lattice);
    const auto pre_field = solve_field(susceptibility_from_geometry(geom, so2, false, p), p.b0, axis);
    const auto pre = simulate_gesfidse(geom, pre_field, t2, p, seq, opts);
    const auto post_field = solve_field(susceptibility_from_geometry(geom, so2, true, p), p.b0, axis);
    const auto post = simulate_gesfidse(geom, post_field, t2, p, seq, opts);
    Fingerprint fp = make_fingerprint(pre, post);
    fp.meta = FingerprintMeta{so2, t2, std::string(geometry::to_string(geom.provenance)) + ":" +
                                           std::to_string(geom.seed)};
    return fp;
}

void spectral_diffusion_separable(std::vector<double>& interleaved, Dims dims, Vec3 spacing,
                                  double diffusion_um2_per_ms, double h_ms) {
    if (interleaved.size() != 2 * dims.count()) throw DimensionError("complex lattice size mismatch");
    SpectralStepper m(dims, 1);
    for (std::size_t i = 0; i < dims.count(); ++i) {
        m.data()[i][0] = static_cast<float>(interleaved[2 * i]);
        m.data()[i][1] = static_cast<float>(interleaved[2 * i + 1]);
    }
    m.step(nullptr, make_multiplier(dims, spacing, diffusion_um2_per_ms, h_ms));
    m.finish();
    for (std::size_t i = 0; i < dims.count(); ++i) {
        interleaved[2 * i] = m.data()[i][0];
        interleaved[2 * i + 1] = m.data()[i][1];
    }
}

} // namespace mrvf::physics

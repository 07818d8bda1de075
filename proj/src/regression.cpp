#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>

#include "mrvf/binary_io.hpp"
#include "mrvf/errors.hpp"
#include "mrvf/parallel.hpp"
#include "mrvf/reconstruction.hpp"
#include "mrvf/rng.hpp"

namespace mrvf::reconstruction {

namespace {

constexpr int L = static_cast<int>(VascularParams::kCount);
using VecL = Eigen::Matrix<double, L, 1>;
using MatL = Eigen::Matrix<double, L, L>;
using MatDL = Eigen::Matrix<double, Eigen::Dynamic, L>;

constexpr double kVarianceFloor = 1e-8;
// Entries per reduction block. Partial sums are formed per block and added in block
// order, so the fitted model does not depend on the thread count.
constexpr std::size_t kBlock = 256;
// Responsibilities below this contribute nothing measurable to the sufficient statistics.
constexpr double kNegligible = 1e-15;
constexpr double kLog2Pi = 1.8378770664093454836;

struct Data {
    std::size_t n = 0, d = 0;
    std::vector<VecL> x;
    Eigen::MatrixXd y;  // d × n, standardized signals as columns
};

struct State {
    double weight = 0.0;
    VecL c;
    MatL gamma;
    MatDL a;
    Eigen::VectorXd b, s2;
    // Derived for the E-step.
    Eigen::LLT<MatL> gamma_llt;
    Eigen::VectorXd inv_s2;
    double log_const = 0.0;

    void refresh(std::size_t d) {
        gamma_llt.compute(gamma);
        const MatL lmat = gamma_llt.matrixL();
        double logdet = 0.0;
        for (int i = 0; i < L; ++i) logdet += 2.0 * std::log(lmat(i, i));
        inv_s2 = s2.cwiseInverse();
        log_const = std::log(weight) - 0.5 * logdet - 0.5 * s2.array().log().sum() -
                    0.5 * static_cast<double>(static_cast<std::size_t>(L) + d) * kLog2Pi;
    }
};

struct Stats {
    double s0 = 0.0;
    VecL sx = VecL::Zero();
    MatL sxx = MatL::Zero();
    Eigen::VectorXd sy, syy;
    MatDL syx;

    explicit Stats(std::size_t d = 0) : sy(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))),
                                        syy(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))),
                                        syx(MatDL::Zero(static_cast<Eigen::Index>(d), L)) {}

    void add(double r, const VecL& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
        s0 += r;
        sx += r * x;
        sxx.noalias() += r * x * x.transpose();
        sy += r * y;
        syy += r * y.cwiseAbs2();
        syx.noalias() += (r * y) * x.transpose();
    }

    Stats& operator+=(const Stats& o) {
        s0 += o.s0;
        sx += o.sx;
        sxx += o.sxx;
        sy += o.sy;
        syy += o.syy;
        syx += o.syx;
        return *this;
    }
};

MatL floor_eigenvalues(const MatL& m) {
    const MatL sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<MatL> es(sym);
    if (es.eigenvalues().minCoeff() >= kVarianceFloor) return sym;
    const VecL ev = es.eigenvalues().cwiseMax(kVarianceFloor);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Closed-form maximizer of the expected complete log-likelihood for one component.
State m_step(const Stats& st, std::size_t n, std::size_t d) {
    State s;
    s.weight = st.s0 / static_cast<double>(n);
    s.c = st.sx / st.s0;
    const MatL sxx_c = st.sxx - st.s0 * s.c * s.c.transpose();
    s.gamma = floor_eigenvalues(sxx_c / st.s0);
    const MatDL syx_c = st.syx - st.sy * s.c.transpose();
    // Minimum-norm solution when the component's parameters span fewer than L dims.
    const Eigen::CompleteOrthogonalDecomposition<MatL> cod(0.5 * (sxx_c + sxx_c.transpose()));
    s.a = cod.solve(syx_c.transpose()).transpose();
    s.b = st.sy / st.s0 - s.a * s.c;
    s.s2.resize(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
        const auto aj = s.a.row(j).transpose();
        const double bj = s.b(j);
        const double resid = st.syy(j) - 2.0 * aj.dot(st.syx.row(j).transpose()) - 2.0 * bj * st.sy(j) +
                             aj.dot(st.sxx * aj) + 2.0 * bj * aj.dot(st.sx) + bj * bj * st.s0;
        s.s2(j) = std::max(resid / st.s0, kVarianceFloor);
    }
    return s;
}

double log_density(const State& s, const VecL& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
    const VecL z = s.gamma_llt.matrixL().solve(x - s.c);
    const Eigen::VectorXd r = y - s.a * x - s.b;
    return s.log_const - 0.5 * z.squaredNorm() - 0.5 * r.cwiseAbs2().dot(s.inv_s2);
}

// One E-step: returns the log-likelihood and fills per-component statistics weighted
// by the responsibilities.
double e_step(const Data& data, const std::vector<State>& comps, std::vector<Stats>& out, unsigned threads) {
    const std::size_t k = comps.size();
    const std::size_t blocks = (data.n + kBlock - 1) / kBlock;
    std::vector<std::vector<Stats>> partial(blocks);
    std::vector<double> ll(blocks, 0.0);
    parallel_for(blocks, threads, [&](std::size_t bb, std::size_t be) {
        std::vector<double> lp(k);
        for (std::size_t blk = bb; blk < be; ++blk) {
            auto& st = partial[blk];
            st.assign(k, Stats(data.d));
            double acc = 0.0;
            for (std::size_t i = blk * kBlock; i < std::min(data.n, (blk + 1) * kBlock); ++i) {
                const auto y = data.y.col(static_cast<Eigen::Index>(i));
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < k; ++c) {
                    lp[c] = log_density(comps[c], data.x[i], y);
                    mx = std::max(mx, lp[c]);
                }
                double sum = 0.0;
                for (std::size_t c = 0; c < k; ++c) sum += std::exp(lp[c] - mx);
                const double lse = mx + std::log(sum);
                acc += lse;
                for (std::size_t c = 0; c < k; ++c) {
                    const double r = std::exp(lp[c] - lse);
                    if (r > kNegligible) st[c].add(r, data.x[i], y);
                }
            }
            ll[blk] = acc;
        }
    });
    out.assign(k, Stats(data.d));
    double total = 0.0;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        total += ll[blk];
        for (std::size_t c = 0; c < k; ++c) out[c] += partial[blk][c];
    }
    return total;
}

// k-means++ seeding and Lloyd iterations on standardized parameters. Returns one label
// per entry.
std::vector<std::size_t> kmeans(const std::vector<VecL>& pts, std::size_t k, std::uint64_t seed) {
    const std::size_t n = pts.size();
    Rng rng(derive_seed(seed, Stream::KMeans));
    std::vector<VecL> centres;
    centres.push_back(pts[std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)))]);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (centres.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (pts[i] - centres.back()).squaredNorm());
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double u = uniform01(rng) * total;
            double cum = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (cum > u && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
        }
        centres.push_back(pts[pick]);
    }
    std::vector<std::size_t> label(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = iter == 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = (pts[i] - centres[0]).squaredNorm();
            for (std::size_t c = 1; c < k; ++c) {
                const double dd = (pts[i] - centres[c]).squaredNorm();
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (label[i] != best) changed = true;
            label[i] = best;
        }
        if (!changed) break;
        std::vector<VecL> sum(k, VecL::Zero());
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[label[i]] += pts[i];
            ++cnt[label[i]];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (cnt[c] > 0) centres[c] = sum[c] / static_cast<double>(cnt[c]);
    }
    return label;
}

// Drops components whose responsibility mass is below 1/(10 n) of the data and
// renormalizes the priors. Returns true if any were dropped.
bool m_step_all(const std::vector<Stats>& stats, std::size_t n, std::size_t d, std::vector<State>& comps) {
    const double min_mass = 0.1;  // n · 1/(10 n)
    comps.clear();
    bool pruned = false;
    for (const auto& st : stats) {
        if (!(st.s0 >= min_mass)) {
            pruned = true;
            continue;
        }
        comps.push_back(m_step(st, n, d));
    }
    if (comps.empty()) throw Error("every mixture component collapsed");
    if (pruned) {
        double total = 0.0;
        for (const auto& c : comps) total += c.weight;
        for (auto& c : comps) c.weight /= total;
    }
    for (auto& c : comps) c.refresh(d);
    return pruned;
}

} // namespace

std::size_t default_k(std::size_t n) { return std::min<std::size_t>(50, std::max<std::size_t>(1, n / 500)); }

RegressionModel train_dbl(const Dictionary& dict, std::size_t k, std::uint64_t seed, const TrainOptions& opts) {
    const std::size_t n = dict.size();
    const std::size_t d = dict.length;
    if (k == 0) throw ValidationError("component count must be >= 1");
    if (n < 10 * k)
        throw ValidationError("dictionary has " + std::to_string(n) + " entries; k = " + std::to_string(k) +
                              " needs at least " + std::to_string(10 * k));
    if (d == 0 || dict.signals.size() != n * d) throw DimensionError("dictionary signal matrix is malformed");
    if (opts.max_iterations < 1) throw ValidationError("max_iterations must be >= 1");

    RegressionModel model;
    model.length = d;
    model.requested_k = static_cast<std::uint32_t>(k);
    model.meta = dict.meta;
    model.signal_mean.assign(d, 0.0);
    model.signal_scale.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) model.signal_mean[j] += dict.signals[i * d + j];
    for (double& m : model.signal_mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double v = dict.signals[i * d + j] - model.signal_mean[j];
            model.signal_scale[j] += v * v;
        }
    for (double& s : model.signal_scale) {
        s = std::sqrt(s / static_cast<double>(n));
        if (!(s > 1e-12)) s = 1.0;
    }

    Data data;
    data.n = n;
    data.d = d;
    data.x.resize(n);
    data.y.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < VascularParams::kCount; ++p) data.x[i](static_cast<Eigen::Index>(p)) = dict.entries[i][p];
        for (std::size_t j = 0; j < d; ++j)
            data.y(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
                (dict.signals[i * d + j] - model.signal_mean[j]) / model.signal_scale[j];
    }

    // Initial responsibilities: hard k-means labels on standardized parameters.
    VecL pm = VecL::Zero(), ps = VecL::Zero();
    for (const auto& x : data.x) pm += x;
    pm /= static_cast<double>(n);
    for (const auto& x : data.x) ps += (x - pm).cwiseAbs2();
    ps = (ps / static_cast<double>(n)).cwiseSqrt();
    for (int p = 0; p < L; ++p)
        if (!(ps(p) > 0.0)) ps(p) = 1.0;
    std::vector<VecL> zx(n);
    for (std::size_t i = 0; i < n; ++i) zx[i] = (data.x[i] - pm).cwiseQuotient(ps);
    const auto label = kmeans(zx, k, seed);
    std::vector<Stats> stats(k, Stats(d));
    for (std::size_t i = 0; i < n; ++i) stats[label[i]].add(1.0, data.x[i], data.y.col(static_cast<Eigen::Index>(i)));

    std::vector<State> comps;
    m_step_all(stats, n, d, comps);
    const unsigned threads = opts.threads;
    double prev = -std::numeric_limits<double>::infinity();
    double ll = prev;
    bool baseline_valid = false;
    int iterations = 0;
    for (;;) {
        ll = e_step(data, comps, stats, threads);
        if (!std::isfinite(ll)) throw Error("EM log-likelihood is not finite");
        if (baseline_valid) {
            if (ll < prev - 1e-9 * std::abs(prev))
                throw Error("EM log-likelihood decreased from " + dictionary::format_double(prev) + " to " +
                            dictionary::format_double(ll) + " at iteration " + std::to_string(iterations));
            if (ll - prev < opts.tolerance * std::abs(prev)) break;
        }
        if (iterations >= opts.max_iterations) break;
        prev = ll;
        baseline_valid = !m_step_all(stats, n, d, comps);
        ++iterations;
    }

    model.iterations = static_cast<std::uint32_t>(iterations);
    model.log_likelihood = ll;
    for (const auto& s : comps) {
        Component c;
        c.weight = s.weight;
        for (int i = 0; i < L; ++i) {
            c.mean[static_cast<std::size_t>(i)] = s.c(i);
            for (int j = 0; j < L; ++j) c.covariance[static_cast<std::size_t>(i * L + j)] = s.gamma(i, j);
        }
        c.a.resize(d * VascularParams::kCount);
        for (std::size_t j = 0; j < d; ++j)
            for (int p = 0; p < L; ++p)
                c.a[j * VascularParams::kCount + static_cast<std::size_t>(p)] = s.a(static_cast<Eigen::Index>(j), p);
        c.offset.assign(s.b.data(), s.b.data() + d);
        c.noise.assign(s.s2.data(), s.s2.data() + d);
        model.components.push_back(std::move(c));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Prediction

struct DblPredictor::Impl {
    struct Part {
        double log_weight = 0.0;
        VecL c;
        MatDL a;
        Eigen::VectorXd centre;  // A c + b
        Eigen::VectorXd inv_s2;
        MatL post_cov;           // (Γ⁻¹ + Aᵀ Σ⁻¹ A)⁻¹
        double log_det_v = 0.0;  // log det(Σ + A Γ Aᵀ)
    };
    std::size_t length = 0;
    Eigen::VectorXd mean, scale;
    std::vector<Part> parts;
};

DblPredictor::DblPredictor(const RegressionModel& model) : impl_(std::make_unique<Impl>()) {
    const std::size_t d = model.length;
    if (model.components.empty()) throw ValidationError("model has no components");
    if (model.signal_mean.size() != d || model.signal_scale.size() != d)
        throw DimensionError("model normalization does not match its signal length");
    impl_->length = d;
    impl_->mean = Eigen::Map<const Eigen::VectorXd>(model.signal_mean.data(), static_cast<Eigen::Index>(d));
    impl_->scale = Eigen::Map<const Eigen::VectorXd>(model.signal_scale.data(), static_cast<Eigen::Index>(d));
    for (const auto& c : model.components) {
        if (c.a.size() != d * VascularParams::kCount || c.offset.size() != d || c.noise.size() != d)
            throw DimensionError("model component does not match its signal length");
        Impl::Part part;
        part.log_weight = std::log(c.weight);
        MatL gamma;
        for (int i = 0; i < L; ++i) {
            part.c(i) = c.mean[static_cast<std::size_t>(i)];
            for (int j = 0; j < L; ++j) gamma(i, j) = c.covariance[static_cast<std::size_t>(i * L + j)];
        }
        part.a.resize(static_cast<Eigen::Index>(d), L);
        for (std::size_t j = 0; j < d; ++j)
            for (int p = 0; p < L; ++p)
                part.a(static_cast<Eigen::Index>(j), p) = c.a[j * VascularParams::kCount + static_cast<std::size_t>(p)];
        const Eigen::Map<const Eigen::VectorXd> b(c.offset.data(), static_cast<Eigen::Index>(d));
        const Eigen::Map<const Eigen::VectorXd> s2(c.noise.data(), static_cast<Eigen::Index>(d));
        part.centre = part.a * part.c + b;
        part.inv_s2 = s2.cwiseInverse();
        const Eigen::LLT<MatL> gl(gamma);
        if (gl.info() != Eigen::Success) throw ValidationError("model covariance is not positive definite");
        const MatL precision = gl.solve(MatL::Identity()) + part.a.transpose() * part.inv_s2.asDiagonal() * part.a;
        const Eigen::LLT<MatL> pl(precision);
        part.post_cov = pl.solve(MatL::Identity());
        double logdet = s2.array().log().sum();
        const MatL lg = gl.matrixL(), lp = pl.matrixL();
        for (int i = 0; i < L; ++i) logdet += 2.0 * std::log(lg(i, i)) + 2.0 * std::log(lp(i, i));
        part.log_det_v = logdet;
        impl_->parts.push_back(std::move(part));
    }
}

DblPredictor::~DblPredictor() = default;
DblPredictor::DblPredictor(DblPredictor&&) noexcept = default;
DblPredictor& DblPredictor::operator=(DblPredictor&&) noexcept = default;

std::size_t DblPredictor::length() const { return impl_->length; }

VascularParams DblPredictor::predict_raw(std::span<const double> fp) const {
    const auto& m = *impl_;
    if (fp.size() != m.length)
        throw LengthMismatch("fingerprint has " + std::to_string(fp.size()) + " samples; model expects " +
                             std::to_string(m.length));
    const Eigen::VectorXd y =
        (Eigen::Map<const Eigen::VectorXd>(fp.data(), static_cast<Eigen::Index>(fp.size())) - m.mean)
            .cwiseQuotient(m.scale);
    std::vector<double> log_ev(m.parts.size());
    std::vector<VecL> means(m.parts.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m.parts.size(); ++c) {
        const auto& p = m.parts[c];
        const Eigen::VectorXd e = y - p.centre;
        const Eigen::VectorXd we = e.cwiseProduct(p.inv_s2);
        const VecL u = p.a.transpose() * we;
        const VecL su = p.post_cov * u;
        const double quad = e.dot(we) - u.dot(su);
        log_ev[c] = p.log_weight - 0.5 * (p.log_det_v + quad);
        means[c] = p.c + su;
        mx = std::max(mx, log_ev[c]);
    }
    double total = 0.0;
    VecL acc = VecL::Zero();
    for (std::size_t c = 0; c < m.parts.size(); ++c) {
        const double w = std::exp(log_ev[c] - mx);
        total += w;
        acc += w * means[c];
    }
    acc /= total;
    return VascularParams{acc(0), acc(1), acc(2), acc(3)};
}

VascularParams DblPredictor::predict(std::span<const double> fp, const ClipRules& clips) const {
    return clips.apply(predict_raw(fp));
}

VascularParams predict_dbl(const RegressionModel& model, std::span<const double> fp, const ClipRules& clips) {
    return DblPredictor(model).predict(fp, clips);
}

// ---------------------------------------------------------------------------
// MRVM container

void save_model(const RegressionModel& model, const std::filesystem::path& path) {
    const std::size_t d = model.length;
    if (model.signal_mean.size() != d || model.signal_scale.size() != d)
        throw DimensionError("model normalization does not match its signal length");
    for (const auto& c : model.components)
        if (c.a.size() != d * VascularParams::kCount || c.offset.size() != d || c.noise.size() != d)
            throw DimensionError("model component does not match its signal length");
    const std::string meta = dictionary::encode_meta(model.meta);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os.write("MRVM", 4);
    io::put_u32(os, kModelVersion);
    io::put_u32(os, static_cast<std::uint32_t>(model.k()));
    io::put_u32(os, static_cast<std::uint32_t>(d));
    io::put_u32(os, model.requested_k);
    io::put_u32(os, model.iterations);
    io::put_f64(os, model.log_likelihood);
    io::put_u32(os, static_cast<std::uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    for (double v : model.signal_mean) io::put_f64(os, v);
    for (double v : model.signal_scale) io::put_f64(os, v);
    for (const auto& c : model.components) {
        io::put_f64(os, c.weight);
        for (double v : c.mean) io::put_f64(os, v);
        for (double v : c.covariance) io::put_f64(os, v);
        for (double v : c.a) io::put_f64(os, v);
        for (double v : c.offset) io::put_f64(os, v);
        for (double v : c.noise) io::put_f64(os, v);
    }
    if (!os) throw Error("write failed for " + path.string());
}

RegressionModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    io::expect_magic(is, "MRVM");
    const std::uint32_t version = io::get_u32(is, "MRVM version");
    if (version != kModelVersion)
        throw VersionError("MRVM version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kModelVersion) + ")");
    const std::uint32_t k = io::get_u32(is, "MRVM component count");
    const std::uint32_t d = io::get_u32(is, "MRVM signal length");
    RegressionModel m;
    m.length = d;
    m.requested_k = io::get_u32(is, "MRVM requested k");
    m.iterations = io::get_u32(is, "MRVM iterations");
    m.log_likelihood = io::get_f64(is, "MRVM log-likelihood");
    const std::uint32_t meta_len = io::get_u32(is, "MRVM meta length");

    const std::uint64_t header = 4 + 4 * 6 + 8;
    const std::uint64_t per_comp = 8ull * (1 + L + L * L + static_cast<std::uint64_t>(d) * (L + 2));
    const long double need = static_cast<long double>(header) + meta_len + 16.0L * d +
                             static_cast<long double>(k) * static_cast<long double>(per_comp);
    if (need > static_cast<long double>(std::filesystem::file_size(path))) throw FormatError("MRVM file is truncated");
    if (m.requested_k < k) throw FormatError("MRVM requested k is smaller than its component count");

    std::string meta(meta_len, '\0');
    io::read_exact(is, meta.data(), meta_len, "MRVM meta");
    m.meta = dictionary::decode_meta(meta);
    m.signal_mean.resize(d);
    m.signal_scale.resize(d);
    for (double& v : m.signal_mean) v = io::get_f64(is, "MRVM signal mean");
    for (double& v : m.signal_scale) v = io::get_f64(is, "MRVM signal scale");
    m.components.resize(k);
    for (auto& c : m.components) {
        c.weight = io::get_f64(is, "MRVM weight");
        for (double& v : c.mean) v = io::get_f64(is, "MRVM mean");
        for (double& v : c.covariance) v = io::get_f64(is, "MRVM covariance");
        c.a.resize(static_cast<std::size_t>(d) * VascularParams::kCount);
        c.offset.resize(d);
        c.noise.resize(d);
        for (double& v : c.a) v = io::get_f64(is, "MRVM map");
        for (double& v : c.offset) v = io::get_f64(is, "MRVM offset");
        for (double& v : c.noise) v = io::get_f64(is, "MRVM noise");
    }
    io::expect_eof(is);
    return m;
}

} // namespace mrvf::reconstruction

#pragma once

// Affine signal models and a least-squares oracle shared by the unit tests and the
// acceptance binary.

#include <array>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "mrvf/dictionary.hpp"

namespace mrvf::testing {

using dictionary::Dictionary;
using dictionary::VascularParams;

struct Affine {
    std::vector<std::array<double, 4>> a;  // len rows
    std::vector<double> b;
};

inline Affine random_affine(std::size_t len, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Affine m;
    m.a.resize(len);
    m.b.resize(len);
    // Columns scaled to the parameter spans so each parameter moves the signal comparably.
    const std::array<double, 4> span{0.1, 9.0, 0.5, 80.0};
    for (std::size_t j = 0; j < len; ++j) {
        for (std::size_t p = 0; p < 4; ++p) m.a[j][p] = g(rng) / span[p];
        m.b[j] = g(rng);
    }
    return m;
}

inline std::vector<double> apply(const Affine& m, const VascularParams& x) {
    std::vector<double> y(m.b.size());
    for (std::size_t j = 0; j < y.size(); ++j) {
        y[j] = m.b[j];
        for (std::size_t p = 0; p < 4; ++p) y[j] += m.a[j][p] * x[p];
    }
    return y;
}

inline Dictionary affine_dictionary(const Affine& m, std::size_t n, double noise, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u;
    std::normal_distribution<double> g;
    Dictionary d;
    d.length = m.b.size();
    for (std::size_t i = 0; i < n; ++i) {
        const VascularParams x{0.01 + 0.1 * u(rng), 1.0 + 9.0 * u(rng), 0.4 + 0.5 * u(rng), 40.0 + 80.0 * u(rng)};
        d.entries.push_back(x);
        for (double v : apply(m, x)) d.signals.push_back(static_cast<float>(v + noise * g(rng)));
    }
    return d;
}

// Solves the 5×5 system M w = r by Gaussian elimination with partial pivoting.
inline std::array<double, 5> solve5(std::array<std::array<double, 5>, 5> m, std::array<double, 5> r) {
    for (int c = 0; c < 5; ++c) {
        int piv = c;
        for (int i = c + 1; i < 5; ++i)
            if (std::abs(m[i][c]) > std::abs(m[piv][c])) piv = i;
        std::swap(m[c], m[piv]);
        std::swap(r[c], r[piv]);
        for (int i = c + 1; i < 5; ++i) {
            const double f = m[i][c] / m[c][c];
            for (int k = c; k < 5; ++k) m[i][k] -= f * m[c][k];
            r[i] -= f * r[c];
        }
    }
    std::array<double, 5> w{};
    for (int i = 4; i >= 0; --i) {
        double acc = r[i];
        for (int k = i + 1; k < 5; ++k) acc -= m[i][k] * w[k];
        w[i] = acc / m[i][i];
    }
    return w;
}

// Ordinary least squares for one signal sample: returns (a_0..a_3, b).
inline std::array<double, 5> ols_row(const Dictionary& d, std::size_t j) {
    std::array<std::array<double, 5>, 5> m{};
    std::array<double, 5> r{};
    for (std::size_t i = 0; i < d.size(); ++i) {
        const std::array<double, 5> z{d.entries[i].bvf, d.entries[i].r, d.entries[i].so2, d.entries[i].t2, 1.0};
        const double y = d.signals[i * d.length + j];
        for (int p = 0; p < 5; ++p) {
            r[p] += z[p] * y;
            for (int q = 0; q < 5; ++q) m[p][q] += z[p] * z[q];
        }
    }
    return solve5(m, r);
}

} // namespace mrvf::testing

#include <array>
#include <cmath>
#include <string>

#include "mrvf/dictionary.hpp"
#include "mrvf/errors.hpp"
#include "mrvf/rng.hpp"

namespace mrvf::dictionary {

namespace {

struct Primitive {
    unsigned s;
    unsigned a;
    std::array<std::uint32_t, 5> m;
};

// Joe & Kuo (2008) "new-joe-kuo-6.21201", dimensions 2..8. Dimension 1 is van der Corput.
constexpr std::array<Primitive, SobolSequence::kMaxDims - 1> kPrimitives{{
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
}};

} // namespace

SobolSequence::SobolSequence(std::size_t dims, std::uint64_t seed) : dims_(dims) {
    if (dims == 0 || dims > kMaxDims)
        throw ValidationError("Sobol dimension must lie in [1, " + std::to_string(kMaxDims) + "]");
    directions_.resize(dims);
    for (unsigned k = 0; k < 32; ++k) directions_[0][k] = 1u << (31 - k);
    for (std::size_t d = 1; d < dims; ++d) {
        const Primitive& pr = kPrimitives[d - 1];
        auto& v = directions_[d];
        for (unsigned k = 0; k < pr.s; ++k) v[k] = pr.m[k] << (31 - k);
        for (unsigned k = pr.s; k < 32; ++k) {
            v[k] = v[k - pr.s] ^ (v[k - pr.s] >> pr.s);
            for (unsigned j = 1; j < pr.s; ++j)
                if ((pr.a >> (pr.s - 1 - j)) & 1u) v[k] ^= v[k - j];
        }
    }
    Rng rng(seed);
    shifts_.resize(dims);
    for (auto& s : shifts_) s = static_cast<std::uint32_t>(rng() >> 32);
}

void SobolSequence::point(std::uint64_t index, std::span<double> out) const {
    if (out.size() != dims_) throw DimensionError("Sobol output size mismatch");
    if (index >= (1ull << 32)) throw ValidationError("Sobol index exceeds 2^32");
    const std::uint64_t gray = index ^ (index >> 1);
    for (std::size_t d = 0; d < dims_; ++d) {
        std::uint32_t x = shifts_[d];
        for (unsigned k = 0; k < 32; ++k)
            if ((gray >> k) & 1u) x ^= directions_[d][k];
        out[d] = static_cast<double>(x) * 0x1.0p-32;
    }
}

std::vector<double> sobol_scrambled(std::size_t n, std::span<const Range> ranges, std::uint64_t seed,
                                    std::uint64_t first) {
    if (n == 0) throw ValidationError("Sobol draw count must be >= 1");
    for (const auto& r : ranges)
        if (!(r.lo < r.hi)) throw ValidationError("Sobol range must satisfy lo < hi");
    const SobolSequence seq(ranges.size(), seed);
    std::vector<double> out(n * ranges.size());
    for (std::size_t i = 0; i < n; ++i) {
        std::span<double> row(out.data() + i * ranges.size(), ranges.size());
        seq.point(first + i, row);
        for (std::size_t d = 0; d < ranges.size(); ++d) row[d] = ranges[d].lo + ranges[d].width() * row[d];
    }
    return out;
}

} // namespace mrvf::dictionary

#include "qlab/outliers.hpp"

#include "qlab/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace qlab {

uint16_t float_to_half(float value) {
    const uint32_t x = std::bit_cast<uint32_t>(value);
    const auto sign = static_cast<uint16_t>((x >> 16) & 0x8000u);
    const uint32_t exp = (x >> 23) & 0xffu;
    uint32_t mant = x & 0x7fffffu;
    if (exp == 0xffu) return static_cast<uint16_t>(sign | 0x7c00u | (mant != 0 ? 0x200u : 0u));
    const int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 31) return static_cast<uint16_t>(sign | 0x7bffu);
    if (e <= 0) {
        if (e < -10) return sign;
        mant |= 0x800000u;
        const int shift = 14 - e;
        uint32_t h = mant >> shift;
        const uint32_t rem = mant & ((1u << shift) - 1u);
        const uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (h & 1u))) ++h;
        return static_cast<uint16_t>(sign | h);
    }
    uint32_t h = (static_cast<uint32_t>(e) << 10) | (mant >> 13);
    const uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
    if (h >= 0x7c00u) h = 0x7bffu;
    return static_cast<uint16_t>(sign | h);
}

float half_to_float(uint16_t bits) {
    const uint32_t sign = (static_cast<uint32_t>(bits) & 0x8000u) << 16;
    const uint32_t exp = (bits >> 10) & 0x1fu;
    const uint32_t mant = bits & 0x3ffu;
    if (exp == 0) {
        const float v = std::ldexp(static_cast<float>(mant), -24);
        return sign ? -v : v;
    }
    if (exp == 31) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
    return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

void OutlierSet::check(std::size_t element_count) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        require(entries[i].position < element_count, ErrorKind::Corruption, "outlier position out of range");
        if (i > 0) {
            require(entries[i - 1].position < entries[i].position, ErrorKind::Corruption,
                    "outlier positions must be strictly increasing");
        }
    }
}

OutlierSplit split_outliers(std::span<const float> theta, double fraction) {
    require(fraction >= 0.0 && fraction <= 1.0, ErrorKind::InvalidArgument, "outlier fraction must lie in [0, 1]");
    require(theta.size() <= UINT32_MAX, ErrorKind::InvalidArgument, "outlier positions are 32-bit");
    OutlierSplit out{{theta.begin(), theta.end()}, {{}, fraction}};
    const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(theta.size())));
    if (count == 0) return out;

    std::vector<uint32_t> order(theta.size());
    std::iota(order.begin(), order.end(), 0u);
    const auto larger = [&](uint32_t a, uint32_t b) {
        const float fa = std::fabs(theta[a]);
        const float fb = std::fabs(theta[b]);
        return fa != fb ? fa > fb : a < b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count - 1), order.end(), larger);
    order.resize(count);
    std::sort(order.begin(), order.end());
    out.outliers.entries.reserve(count);
    for (uint32_t pos : order) {
        out.outliers.entries.push_back({pos, float_to_half(theta[pos])});
        out.dense[pos] = 0.0f;
    }
    return out;
}

void restore_outliers_in_place(std::span<float> dense, const OutlierSet & outliers) {
    outliers.check(dense.size());
    for (const auto & e : outliers.entries) dense[e.position] = half_to_float(e.value);
}

std::vector<float> restore_outliers(std::span<const float> dense, const OutlierSet & outliers) {
    std::vector<float> out(dense.begin(), dense.end());
    restore_outliers_in_place(out, outliers);
    return out;
}

std::vector<uint8_t> serialise(const OutlierSet & outliers) {
    std::vector<uint8_t> out;
    out.reserve(8 + outliers.size() * 6);
    const uint64_t n = outliers.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(n >> (8 * i)));
    for (const auto & e : outliers.entries) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(e.position >> (8 * i)));
        out.push_back(static_cast<uint8_t>(e.value));
        out.push_back(static_cast<uint8_t>(e.value >> 8));
    }
    return out;
}

OutlierSet deserialise_outliers(std::span<const uint8_t> bytes, std::size_t element_count) {
    require(bytes.size() >= 8, ErrorKind::Corruption, "outlier section truncated");
    uint64_t n = 0;
    for (int i = 0; i < 8; ++i) n |= static_cast<uint64_t>(bytes[i]) << (8 * i);
    require(n <= (bytes.size() - 8) / 6 && bytes.size() == 8 + n * 6, ErrorKind::Corruption,
            "outlier section length does not match its count");
    OutlierSet set;
    set.entries.resize(n);
    for (uint64_t k = 0; k < n; ++k) {
        const uint8_t * p = bytes.data() + 8 + k * 6;
        set.entries[k].position = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                                  (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
        set.entries[k].value = static_cast<uint16_t>(p[4] | (p[5] << 8));
    }
    set.check(element_count);
    if (element_count > 0) set.fraction = static_cast<double>(n) / static_cast<double>(element_count);
    return set;
}

} // namespace qlab

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qlab {

// IEEE binary16 conversion, round-to-nearest-even. Finite values beyond the
// half range saturate to +-65504.
uint16_t float_to_half(float value);
float half_to_float(uint16_t bits);

inline constexpr double max_outlier_fraction = 0.05;

struct Outlier {
    uint32_t position;
    uint16_t value; // binary16 bits

    bool operator==(const Outlier &) const = default;
};

// Sparse high-precision entries stored beside a dense quantised tensor.
struct OutlierSet {
    std::vector<Outlier> entries; // strictly increasing positions
    double fraction = 0.0;

    static constexpr int bits_per_entry = 32 + 16;

    std::size_t size() const { return entries.size(); }
    std::size_t storage_bits() const { return entries.size() * bits_per_entry; }
    // Validates ordering and range against a tensor of `element_count` values.
    void check(std::size_t element_count) const;

    bool operator==(const OutlierSet &) const = default;
};

struct OutlierSplit {
    std::vector<float> dense;
    OutlierSet outliers;
};

// Moves the round(fraction * n) largest-magnitude values (ties: lower
// position first) into an OutlierSet and zeroes them in the dense copy.
// Formats cap the fraction at max_outlier_fraction; this primitive accepts [0, 1].
OutlierSplit split_outliers(std::span<const float> theta, double fraction);

// Overwrites outlier positions with their stored values.
std::vector<float> restore_outliers(std::span<const float> dense, const OutlierSet & outliers);
void restore_outliers_in_place(std::span<float> dense, const OutlierSet & outliers);

// Little-endian layout: u64 count, then (u32 position, u16 value) pairs.
std::vector<uint8_t> serialise(const OutlierSet & outliers);
OutlierSet deserialise_outliers(std::span<const uint8_t> bytes, std::size_t element_count);

} // namespace qlab

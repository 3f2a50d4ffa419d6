#pragma once

// Self-describing quantised archive.
//
// Layout: 8-byte magic "QLABQA01", u64 header length, JSON header, u32 CRC-32
// of the header, then per tensor three sections (codes, scales, outliers)
// whose offsets, lengths and CRC-32 digests the header records.
//
// codes:    K-point indices packed at ceil(log2 K) bits, MSB first; or, when
//           entropy coded, u32 K, K float32 probabilities, u64 bit length and
//           the canonical Huffman bit stream
// scales:   sign/exponent/mantissa bitfields of the scale format, MSB first
// outliers: u64 count, then (u32 position, u16 binary16 value) pairs
//
// All integers and floats are little-endian.

#include "qlab/scaling.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qlab {

struct ArchiveEntry {
    std::string name;
    QuantisedTensor tensor;
    bool huffman = false;
};

struct QuantisedArchive {
    std::vector<ArchiveEntry> entries;
};

inline constexpr char archive_magic[9] = "QLABQA01";

// Bit pattern of a representable scale value; throws for values the format cannot hold.
uint32_t encode_scale_bits(double value, const ScaleFormat & format);
double decode_scale_bits(uint32_t bits, const ScaleFormat & format);

struct SectionSizes {
    uint64_t codes_bits = 0;
    uint64_t scales_bits = 0;
    uint64_t outliers_bits = 0;

    uint64_t total() const { return codes_bits + scales_bits + outliers_bits; }
};

// Storage actually used by an entry's sections.
SectionSizes storage_bits(const ArchiveEntry & e);
double storage_bits_per_param(const ArchiveEntry & e);

std::vector<uint8_t> serialise_archive(const QuantisedArchive & a);
QuantisedArchive deserialise_archive(std::span<const uint8_t> bytes);

void write_archive(const std::string & path, const QuantisedArchive & a);
QuantisedArchive read_archive(const std::string & path);

} // namespace qlab

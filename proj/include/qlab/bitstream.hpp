#pragma once

// MSB-first bit packing.

#include "qlab/error.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace qlab {

class BitWriter {
public:
    // Appends the low `nbits` bits of value, most significant first. nbits <= 64.
    void put(uint64_t value, int nbits) {
        for (int i = nbits - 1; i >= 0; --i) put_bit((value >> i) & 1u);
    }

    void put_bit(uint64_t bit) {
        if ((bits_ & 7u) == 0) bytes_.push_back(0);
        if (bit) bytes_.back() |= static_cast<uint8_t>(0x80u >> (bits_ & 7u));
        ++bits_;
    }

    uint64_t bit_count() const { return bits_; }
    const std::vector<uint8_t> & bytes() const { return bytes_; }
    std::vector<uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<uint8_t> bytes_;
    uint64_t bits_ = 0;
};

class BitReader {
public:
    BitReader(std::span<const uint8_t> bytes, uint64_t bit_count) : bytes_(bytes), limit_(bit_count) {
        require(bit_count <= bytes.size() * 8ull, ErrorKind::Corruption, "bit stream shorter than its declared length");
    }

    uint64_t get_bit() {
        require(pos_ < limit_, ErrorKind::Corruption, "bit stream exhausted");
        const uint64_t b = (bytes_[pos_ >> 3] >> (7 - (pos_ & 7u))) & 1u;
        ++pos_;
        return b;
    }

    uint64_t get(int nbits) {
        uint64_t v = 0;
        for (int i = 0; i < nbits; ++i) v = (v << 1) | get_bit();
        return v;
    }

    uint64_t position() const { return pos_; }
    uint64_t remaining() const { return limit_ - pos_; }

private:
    std::span<const uint8_t> bytes_;
    uint64_t limit_;
    uint64_t pos_ = 0;
};

} // namespace qlab

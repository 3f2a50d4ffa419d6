#pragma once

// Two-file tensor container: a JSON manifest plus a raw little-endian float32
// blob. The manifest records names, shapes, byte ranges and CRC-32 digests.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qlab {

struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;

    std::size_t element_count() const;
};

struct TensorContainer {
    std::vector<Tensor> tensors;

    const Tensor * find(const std::string & name) const;
    // Unique non-empty names, data length equal to the shape product.
    void validate() const;
};

uint32_t crc32_of(std::span<const uint8_t> bytes);

// Blob path used for a manifest path: "x.json" -> "x.bin", otherwise path + ".bin".
std::string blob_path_for(const std::string & manifest_path);

void write_container(const std::string & manifest_path, const TensorContainer & c);
TensorContainer read_container(const std::string & manifest_path);

} // namespace qlab

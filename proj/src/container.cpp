#include "qlab/container.hpp"

#include "qlab/error.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

namespace qlab {

static_assert(std::endian::native == std::endian::little, "payloads are written in host order");

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

const Tensor * TensorContainer::find(const std::string & name) const {
    for (const auto & t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void TensorContainer::validate() const {
    std::set<std::string> seen;
    for (const auto & t : tensors) {
        require(!t.name.empty(), ErrorKind::InvalidArgument, "tensor name must not be empty");
        require(seen.insert(t.name).second, ErrorKind::InvalidArgument, "duplicate tensor name '" + t.name + "'");
        require(!t.shape.empty(), ErrorKind::InvalidArgument, "tensor '" + t.name + "' has no shape");
        require(t.data.size() == t.element_count(), ErrorKind::InvalidArgument,
                "tensor '" + t.name + "' data length does not match its shape");
    }
}

uint32_t crc32_of(std::span<const uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        crc = crc32(crc, bytes.data() + done, chunk);
        done += chunk;
    }
    return static_cast<uint32_t>(crc);
}

std::string blob_path_for(const std::string & manifest_path) {
    fs::path p(manifest_path);
    if (p.extension() == ".json") return p.replace_extension(".bin").string();
    return manifest_path + ".bin";
}

namespace {

uint32_t manifest_digest(json manifest) {
    manifest.erase("digest");
    const std::string text = manifest.dump();
    return crc32_of({reinterpret_cast<const uint8_t *>(text.data()), text.size()});
}

std::vector<uint8_t> read_file(const fs::path & p) {
    std::ifstream in(p, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Input, "cannot open '" + p.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path & p, std::span<const uint8_t> bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Input, "cannot write '" + p.string() + "'");
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Input, "write to '" + p.string() + "' failed");
}

} // namespace

void write_container(const std::string & manifest_path, const TensorContainer & c) {
    c.validate();
    const fs::path blob_path = blob_path_for(manifest_path);
    std::vector<uint8_t> blob;
    json tensors = json::array();
    for (const auto & t : c.tensors) {
        const std::size_t offset = blob.size();
        const std::size_t bytes = t.data.size() * sizeof(float);
        blob.resize(offset + bytes);
        if (bytes) std::memcpy(blob.data() + offset, t.data.data(), bytes);
        tensors.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"dtype", "float32"},
                           {"offset", offset},
                           {"bytes", bytes},
                           {"crc32", crc32_of(std::span(blob).subspan(offset, bytes))}});
    }
    json manifest{{"format", "qlab-tensors"},
                  {"version", 1},
                  {"blob", blob_path.filename().string()},
                  {"blob_bytes", blob.size()},
                  {"blob_crc32", crc32_of(blob)},
                  {"tensors", tensors}};
    manifest["digest"] = manifest_digest(manifest);
    write_file(blob_path, blob);
    const std::string text = manifest.dump(1) + "\n";
    write_file(manifest_path, {reinterpret_cast<const uint8_t *>(text.data()), text.size()});
}

TensorContainer read_container(const std::string & manifest_path) {
    const auto text = read_file(manifest_path);
    json m;
    try {
        m = json::parse(text.begin(), text.end());
    } catch (const json::exception & e) {
        fail(ErrorKind::Parse, "container manifest '" + manifest_path + "': " + e.what());
    }
    TensorContainer c;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    fs::path blob_path;
    std::size_t blob_bytes = 0;
    uint32_t blob_crc = 0;
    std::string context = "container '" + manifest_path + "'";
    try {
        require(m.is_object(), ErrorKind::Parse, "manifest must be an object");
        require(m.at("version").get<int>() == 1, ErrorKind::Parse, "unsupported container version");
        require(m.contains("digest"), ErrorKind::Corruption, "manifest digest missing");
        require(m.at("digest").get<uint32_t>() == manifest_digest(m), ErrorKind::Corruption,
                "manifest digest mismatch");
        blob_path = fs::path(manifest_path).parent_path() / m.at("blob").get<std::string>();
        blob_bytes = m.at("blob_bytes").get<std::size_t>();
        blob_crc = m.at("blob_crc32").get<uint32_t>();
        std::size_t index = 0;
        for (const auto & jt : m.at("tensors")) {
            context = "container '" + manifest_path + "', tensor #" + std::to_string(index++);
            Tensor t;
            t.name = jt.at("name").get<std::string>();
            context += " '" + t.name + "'";
            t.shape = jt.at("shape").get<std::vector<std::size_t>>();
            require(jt.at("dtype").get<std::string>() == "float32", ErrorKind::Parse, "dtype must be float32");
            const auto offset = jt.at("offset").get<std::size_t>();
            const auto bytes = jt.at("bytes").get<std::size_t>();
            require(bytes == t.element_count() * sizeof(float), ErrorKind::Corruption,
                    "payload length does not match the shape");
            require(offset <= blob_bytes && bytes <= blob_bytes - offset, ErrorKind::Corruption,
                    "payload lies outside the blob");
            ranges.emplace_back(offset, bytes);
            c.tensors.push_back(std::move(t));
        }
    } catch (const Error & e) {
        fail(e.kind(), context + ": " + e.what());
    } catch (const json::exception & e) {
        fail(ErrorKind::Parse, context + ": " + e.what());
    }

    std::vector<std::pair<std::size_t, std::size_t>> sorted = ranges;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        require(sorted[i - 1].first + sorted[i - 1].second <= sorted[i].first, ErrorKind::Corruption,
                "container '" + manifest_path + "': tensor payloads overlap");
    }

    const auto blob = read_file(blob_path);
    require(blob.size() == blob_bytes, ErrorKind::Corruption, "container blob has the wrong length");
    const auto & jts = m.at("tensors");
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
        auto & t = c.tensors[i];
        const auto [offset, bytes] = ranges[i];
        const auto payload = std::span(blob).subspan(offset, bytes);
        require(crc32_of(payload) == jts[i].at("crc32").get<uint32_t>(), ErrorKind::Corruption,
                "tensor '" + t.name + "' digest mismatch");
        t.data.resize(bytes / sizeof(float));
        if (bytes) std::memcpy(t.data.data(), payload.data(), bytes);
    }
    require(crc32_of(blob) == blob_crc, ErrorKind::Corruption, "container blob digest mismatch");
    c.validate();
    return c;
}

} // namespace qlab

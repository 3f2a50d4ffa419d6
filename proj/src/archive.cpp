#include "qlab/archive.hpp"

#include "qlab/bitstream.hpp"
#include "qlab/container.hpp"
#include "qlab/entropy.hpp"
#include "qlab/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace qlab {

static_assert(std::endian::native == std::endian::little, "payloads are written in host order");

using nlohmann::json;

namespace {

int bias_of(const ScaleFormat & f) { return (1 << (f.exp_bits - 1)) - 1; }

template <class T>
void put_le(std::vector<uint8_t> & out, T v) {
    uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
}

template <class T>
T get_le(std::span<const uint8_t> in, std::size_t & pos) {
    require(pos <= in.size() && in.size() - pos >= sizeof(T), ErrorKind::Corruption, "section truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

uint64_t packed_bytes(uint64_t bits) { return (bits + 7) / 8; }

// Huffman model as the reader reconstructs it from stored float32 probabilities.
ProbabilityModel model_from_floats(const std::vector<float> & f) {
    ProbabilityModel m;
    m.probs.assign(f.begin(), f.end());
    double total = 0.0;
    for (double p : m.probs) {
        require(std::isfinite(p) && p >= 0.0, ErrorKind::Corruption, "invalid stored probability");
        total += p;
    }
    require(total > 0.0, ErrorKind::Corruption, "stored probabilities sum to zero");
    return m.rounded_to_float();
}

std::vector<float> huffman_table(const QuantisedTensor & q) {
    const auto model = estimate_probability_model(q.codes, q.spec.codebook.size(), Smoothing::None);
    return {model.probs.begin(), model.probs.end()};
}

std::vector<uint8_t> codes_section(const ArchiveEntry & e) {
    const auto & q = e.tensor;
    std::vector<uint8_t> out;
    if (!e.huffman) {
        BitWriter w;
        const int width = q.spec.codebook.storage_bits();
        for (Code c : q.codes) w.put(c, width);
        return w.take();
    }
    const auto table = huffman_table(q);
    const auto code = build_huffman(model_from_floats(table));
    const auto enc = huffman_encode(code, to_symbols(q.codes));
    put_le<uint32_t>(out, static_cast<uint32_t>(table.size()));
    for (float p : table) put_le<float>(out, p);
    put_le<uint64_t>(out, enc.bit_count);
    out.insert(out.end(), enc.bytes.begin(), enc.bytes.end());
    return out;
}

std::vector<uint8_t> scales_section(const QuantisedTensor & q) {
    BitWriter w;
    const int width = q.spec.scale_format.bits();
    for (float s : q.scales) w.put(encode_scale_bits(s, q.spec.scale_format), width);
    return w.take();
}

std::vector<Code> read_codes(std::span<const uint8_t> sec, const ArchiveEntry & e, std::size_t n) {
    const std::size_t k = e.tensor.spec.codebook.size();
    std::vector<Code> codes(n);
    if (!e.huffman) {
        const int width = e.tensor.spec.codebook.storage_bits();
        require(sec.size() == packed_bytes(static_cast<uint64_t>(n) * width), ErrorKind::Corruption,
                "code section length does not match the header");
        BitReader r(sec, static_cast<uint64_t>(n) * width);
        for (auto & c : codes) c = static_cast<Code>(r.get(width));
        return codes;
    }
    std::size_t pos = 0;
    const auto kk = get_le<uint32_t>(sec, pos);
    require(kk == k, ErrorKind::Corruption, "Huffman table size does not match the codebook");
    std::vector<float> table(k);
    for (auto & p : table) p = get_le<float>(sec, pos);
    const auto bit_count = get_le<uint64_t>(sec, pos);
    EncodedBits bits;
    bits.bytes.assign(sec.begin() + static_cast<std::ptrdiff_t>(pos), sec.end());
    bits.bit_count = bit_count;
    require(bits.bytes.size() == packed_bytes(bit_count), ErrorKind::Corruption,
            "Huffman stream length does not match its bit count");
    const auto code = build_huffman(model_from_floats(table));
    const auto symbols = huffman_decode(code, bits, n);
    for (std::size_t i = 0; i < n; ++i) {
        require(symbols[i] >= 0 && static_cast<std::size_t>(symbols[i]) < k, ErrorKind::Corruption,
                "decoded symbol out of range");
        codes[i] = static_cast<Code>(symbols[i]);
    }
    return codes;
}

json format_json(const FormatSpec & s) {
    const auto & cb = s.codebook;
    const auto pts = cb.points();
    json design = std::isfinite(cb.design_rms()) ? json(cb.design_rms()) : json(nullptr);
    return {{"scaling", to_string(s.scaling)},
            {"block_size", s.block_size},
            {"scale_format",
             {{"exp_bits", s.scale_format.exp_bits},
              {"mant_bits", s.scale_format.mant_bits},
              {"rounding", s.scale_format.rounding == ScaleRounding::Nearest ? "nearest" : "round-away"}}},
            {"element_scale", s.element_scale},
            {"codebook",
             {{"kind", to_string(cb.source().kind)},
              {"variant", to_string(cb.variant())},
              {"design_rms", design},
              {"points", std::vector<float>(pts.begin(), pts.end())}}}};
}

CodebookKind parse_kind(const std::string & name) {
    for (auto k : {CodebookKind::PowerAlpha, CodebookKind::Absmax, CodebookKind::Int, CodebookKind::Float,
                   CodebookKind::LloydMax, CodebookKind::Custom}) {
        if (to_string(k) == name) return k;
    }
    fail(ErrorKind::Corruption, "unknown codebook kind '" + name + "'");
}

FormatSpec format_from_json(const json & j) {
    FormatSpec s;
    s.scaling = parse_scaling(j.at("scaling").get<std::string>());
    s.block_size = j.at("block_size").get<std::size_t>();
    const auto & sf = j.at("scale_format");
    s.scale_format.exp_bits = sf.at("exp_bits").get<int>();
    s.scale_format.mant_bits = sf.at("mant_bits").get<int>();
    const auto rounding = sf.at("rounding").get<std::string>();
    require(rounding == "nearest" || rounding == "round-away", ErrorKind::Corruption, "unknown scale rounding");
    s.scale_format.rounding = rounding == "nearest" ? ScaleRounding::Nearest : ScaleRounding::RoundAway;
    s.element_scale = j.at("element_scale").get<double>();
    const auto & cb = j.at("codebook");
    CodebookSource src;
    src.kind = parse_kind(cb.at("kind").get<std::string>());
    const double design =
        cb.at("design_rms").is_null() ? std::numeric_limits<double>::quiet_NaN() : cb.at("design_rms").get<double>();
    s.codebook = Codebook(cb.at("points").get<std::vector<float>>(), parse_variant(cb.at("variant").get<std::string>()),
                          src, design);
    s.validate();
    return s;
}

} // namespace

uint32_t encode_scale_bits(double value, const ScaleFormat & f) {
    f.validate();
    require(std::isfinite(value), ErrorKind::InvalidArgument, "scale must be finite");
    const uint32_t sign = std::signbit(value) ? 1u : 0u;
    const double a = std::fabs(value);
    const int bias = bias_of(f);
    const uint32_t mant_one = 1u << f.mant_bits;
    uint32_t biased = 0;
    double mant = 0.0;
    if (a != 0.0) {
        int e = 0;
        std::frexp(a, &e);
        const int u = e - 1;
        if (u >= 1 - bias) {
            biased = static_cast<uint32_t>(u + bias);
            mant = (std::ldexp(a, -u) - 1.0) * mant_one;
        } else {
            mant = std::ldexp(a, f.mant_bits - (1 - bias));
        }
    }
    require(biased < (1u << f.exp_bits) - 1 && mant == std::floor(mant) && mant < mant_one, ErrorKind::InvalidArgument,
            "scale value is not representable in " + f.name());
    return (sign << (f.exp_bits + f.mant_bits)) | (biased << f.mant_bits) | static_cast<uint32_t>(mant);
}

double decode_scale_bits(uint32_t bits, const ScaleFormat & f) {
    const uint32_t mant_mask = (1u << f.mant_bits) - 1;
    const uint32_t exp_mask = (1u << f.exp_bits) - 1;
    const uint32_t mant = bits & mant_mask;
    const uint32_t biased = (bits >> f.mant_bits) & exp_mask;
    const bool negative = (bits >> (f.exp_bits + f.mant_bits)) & 1u;
    require(biased != exp_mask, ErrorKind::Corruption, "reserved scale exponent");
    const int bias = bias_of(f);
    const double a = biased == 0 ? std::ldexp(static_cast<double>(mant), 1 - bias - f.mant_bits)
                                 : std::ldexp(1.0 + std::ldexp(static_cast<double>(mant), -f.mant_bits),
                                              static_cast<int>(biased) - bias);
    return negative ? -a : a;
}

SectionSizes storage_bits(const ArchiveEntry & e) {
    const auto & q = e.tensor;
    SectionSizes s;
    if (e.huffman) {
        const auto table = huffman_table(q);
        const auto code = build_huffman(model_from_floats(table));
        s.codes_bits = 32 + 32 * table.size() + 64 + code.encoded_bits(to_symbols(q.codes));
    } else {
        s.codes_bits = static_cast<uint64_t>(q.codes.size()) * q.spec.codebook.storage_bits();
    }
    s.scales_bits = static_cast<uint64_t>(q.scales.size()) * q.spec.scale_format.bits();
    s.outliers_bits = 64 + q.outliers.storage_bits();
    return s;
}

double storage_bits_per_param(const ArchiveEntry & e) {
    return static_cast<double>(storage_bits(e).total()) / static_cast<double>(e.tensor.element_count());
}

std::vector<uint8_t> serialise_archive(const QuantisedArchive & a) {
    std::vector<uint8_t> data;
    json tensors = json::array();
    auto add_section = [&data](std::vector<uint8_t> bytes) {
        json j{{"offset", data.size()}, {"bytes", bytes.size()}, {"crc32", crc32_of(bytes)}};
        data.insert(data.end(), bytes.begin(), bytes.end());
        return j;
    };
    for (const auto & e : a.entries) {
        const auto & q = e.tensor;
        q.check();
        require(!e.name.empty(), ErrorKind::InvalidArgument, "archive entries need a name");
        json t{{"name", e.name},
               {"shape", q.shape},
               {"format", format_json(q.spec)},
               {"huffman", e.huffman},
               {"groups", q.scales.size()},
               {"outliers", q.outliers.size()},
               {"outlier_fraction", q.outliers.fraction},
               {"clamped_scales", q.clamped_scales},
               {"bits_per_param", bits_per_param(q)},
               {"storage_bits_per_param", storage_bits_per_param(e)}};
        json sections;
        sections["codes"] = add_section(codes_section(e));
        sections["scales"] = add_section(scales_section(q));
        sections["outliers"] = add_section(serialise(q.outliers));
        t["sections"] = sections;
        tensors.push_back(std::move(t));
    }
    const std::string header = json{{"format", "qlab-archive"}, {"version", 1}, {"tensors", tensors}}.dump();
    std::vector<uint8_t> out(archive_magic, archive_magic + 8);
    put_le<uint64_t>(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    put_le<uint32_t>(out, crc32_of({reinterpret_cast<const uint8_t *>(header.data()), header.size()}));
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

QuantisedArchive deserialise_archive(std::span<const uint8_t> bytes) {
    require(bytes.size() >= 8 && std::memcmp(bytes.data(), archive_magic, 8) == 0, ErrorKind::Corruption,
            "not a quantised archive (bad magic)");
    std::size_t pos = 8;
    const auto header_len = get_le<uint64_t>(bytes, pos);
    require(header_len <= bytes.size() - pos, ErrorKind::Corruption, "archive header truncated");
    const auto header_bytes = bytes.subspan(pos, header_len);
    pos += header_len;
    const auto header_crc = get_le<uint32_t>(bytes, pos);
    require(crc32_of(header_bytes) == header_crc, ErrorKind::Corruption, "archive header digest mismatch");
    const auto data = bytes.subspan(pos);

    json h;
    try {
        h = json::parse(header_bytes.begin(), header_bytes.end());
    } catch (const json::exception & e) {
        fail(ErrorKind::Corruption, std::string("archive header: ") + e.what());
    }
    QuantisedArchive a;
    std::string context = "archive header";
    try {
        require(h.at("version").get<int>() == 1, ErrorKind::Corruption, "unsupported archive version");
        uint64_t expected_offset = 0;
        for (const auto & t : h.at("tensors")) {
            ArchiveEntry e;
            e.name = t.at("name").get<std::string>();
            context = "archive tensor '" + e.name + "'";
            auto & q = e.tensor;
            q.shape = t.at("shape").get<std::vector<std::size_t>>();
            q.spec = format_from_json(t.at("format"));
            e.huffman = t.at("huffman").get<bool>();
            q.clamped_scales = t.at("clamped_scales").get<std::size_t>();
            const std::size_t n = element_count(q.shape);
            require(n > 0, ErrorKind::Corruption, "empty tensor shape");
            const std::size_t groups = t.at("groups").get<std::size_t>();
            const std::size_t group = group_size(q.spec, q.shape);
            require(groups == (n + group - 1) / group, ErrorKind::Corruption, "group count does not match the format");

            auto section = [&](const char * name) {
                const auto & s = t.at("sections").at(name);
                const auto off = s.at("offset").get<uint64_t>();
                const auto len = s.at("bytes").get<uint64_t>();
                require(off == expected_offset && off <= data.size() && len <= data.size() - off, ErrorKind::Corruption,
                        std::string(name) + " section lies outside the archive");
                expected_offset = off + len;
                const auto sec = data.subspan(off, len);
                require(crc32_of(sec) == s.at("crc32").get<uint32_t>(), ErrorKind::Corruption,
                        std::string(name) + " section digest mismatch");
                return sec;
            };
            const auto codes = section("codes");
            const auto scales = section("scales");
            const auto outliers = section("outliers");

            q.codes = read_codes(codes, e, n);
            const int width = q.spec.scale_format.bits();
            require(scales.size() == packed_bytes(static_cast<uint64_t>(groups) * width), ErrorKind::Corruption,
                    "scale section length does not match the header");
            BitReader r(scales, static_cast<uint64_t>(groups) * width);
            q.scales.resize(groups);
            for (auto & s : q.scales) s = static_cast<float>(decode_scale_bits(static_cast<uint32_t>(r.get(width)), q.spec.scale_format));
            q.outliers = deserialise_outliers(outliers, n);
            q.outliers.fraction = t.at("outlier_fraction").get<double>();
            require(q.outliers.size() == t.at("outliers").get<std::size_t>(), ErrorKind::Corruption,
                    "outlier count does not match the header");
            q.check();
            a.entries.push_back(std::move(e));
        }
        require(expected_offset == data.size(), ErrorKind::Corruption, "trailing bytes after the last section");
    } catch (const json::exception & ex) {
        fail(ErrorKind::Corruption, context + ": " + ex.what());
    } catch (const Error & ex) {
        fail(ErrorKind::Corruption, context + ": " + ex.what());
    }
    return a;
}

void write_archive(const std::string & path, const QuantisedArchive & a) {
    const auto bytes = serialise_archive(a);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Input, "cannot write '" + path + "'");
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Input, "write to '" + path + "' failed");
}

QuantisedArchive read_archive(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Input, "cannot open '" + path + "'");
    const std::vector<uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialise_archive(bytes);
}

} // namespace qlab

#include "doctest.h"

#include "qlab/archive.hpp"
#include "qlab/cli.hpp"
#include "qlab/container.hpp"
#include "qlab/error.hpp"
#include "qlab/harness.hpp"
#include "qlab/rng.hpp"

#include <json.hpp>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

using namespace qlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("qlab_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string & name) const { return (path / name).string(); }
};

std::vector<uint8_t> slurp(const std::string & p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string & p, const std::vector<uint8_t> & bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void spit_text(const std::string & p, const std::string & text) {
    std::ofstream out(p, std::ios::trunc);
    out << text;
}

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

uint32_t digest_of(nlohmann::json m) {
    m.erase("digest");
    const auto text = m.dump();
    return crc32_of({reinterpret_cast<const uint8_t *>(text.data()), text.size()});
}

TensorContainer sample_container() {
    TensorContainer c;
    c.tensors.push_back({"w", {32, 64}, sample(Distribution::student_t(5.0, 0.3), 32 * 64, 1)});
    c.tensors.push_back({"bias", {100}, sample(Distribution::normal(1.0), 100, 2)});
    return c;
}

std::vector<std::string> split(const std::string & line, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, sep)) out.push_back(f);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

std::vector<std::vector<std::string>> csv_rows(const std::string & text) {
    std::vector<std::vector<std::string>> rows;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) rows.push_back(split(line));
    return rows;
}

} // namespace

TEST_CASE("crc32 matches the standard check value") {
    const std::string s = "123456789";
    CHECK(crc32_of({reinterpret_cast<const uint8_t *>(s.data()), s.size()}) == 0xCBF43926u);
}

TEST_CASE("container roundtrip and validation") {
    TempDir dir;
    const auto c = sample_container();
    const auto path = dir / "model.json";
    write_container(path, c);
    CHECK(fs::exists(dir / "model.bin"));
    const auto back = read_container(path);
    REQUIRE(back.tensors.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.tensors[i].name == c.tensors[i].name);
        CHECK(back.tensors[i].shape == c.tensors[i].shape);
        CHECK(back.tensors[i].data == c.tensors[i].data);
    }
    CHECK(fs::file_size(dir / "model.bin") == (32 * 64 + 100) * 4);

    SUBCASE("empty container") {
        write_container(dir / "empty.json", TensorContainer{});
        CHECK(read_container(dir / "empty.json").tensors.empty());
    }
    SUBCASE("damaged blob") {
        auto blob = slurp(dir / "model.bin");
        blob[4100] ^= 0x10;
        spit(dir / "model.bin", blob);
        try {
            read_container(path);
            FAIL("expected corruption");
        } catch (const Error & e) {
            CHECK(e.kind() == ErrorKind::Corruption);
            CHECK(std::string(e.what()).find("bias") == std::string::npos);
            CHECK(std::string(e.what()).find("'w'") != std::string::npos);
        }
    }
    SUBCASE("edited manifest fails its digest") {
        auto m = nlohmann::json::parse(slurp(path));
        m["tensors"][1]["name"] = "other";
        spit_text(path, m.dump());
        CHECK_THROWS_AS(read_container(path), Error);
    }
    SUBCASE("inconsistent manifests name the tensor") {
        auto m = nlohmann::json::parse(slurp(path));
        m["tensors"][1]["shape"] = {99};
        m["digest"] = digest_of(m);
        spit_text(path, m.dump());
        try {
            read_container(path);
            FAIL("expected an error");
        } catch (const Error & e) {
            CHECK(e.kind() == ErrorKind::Corruption);
            CHECK(std::string(e.what()).find("'bias'") != std::string::npos);
        }
        m = nlohmann::json::parse(slurp(path));
        m["tensors"][1]["shape"] = {100};
        m["tensors"][1]["offset"] = 4;
        m["digest"] = digest_of(m);
        spit_text(path, m.dump());
        CHECK_THROWS_AS(read_container(path), Error);
        m["tensors"][1]["shape"] = "x";
        m["digest"] = digest_of(m);
        spit_text(path, m.dump());
        try {
            read_container(path);
            FAIL("expected a parse error");
        } catch (const Error & e) {
            CHECK(e.kind() == ErrorKind::Parse);
            CHECK(std::string(e.what()).find("'bias'") != std::string::npos);
        }
    }
    SUBCASE("duplicate names are rejected") {
        auto d = c;
        d.tensors[1].name = "w";
        CHECK_THROWS_AS(write_container(dir / "dup.json", d), Error);
    }
    SUBCASE("bad json") {
        spit_text(path, "{not json");
        try {
            read_container(path);
            FAIL("expected a parse error");
        } catch (const Error & e) {
            CHECK(e.kind() == ErrorKind::Parse);
        }
    }
}

TEST_CASE("scale bitfields") {
    for (auto f : {ScaleFormat{4, 3}, ScaleFormat{5, 2}, ScaleFormat{8, 0}, ScaleFormat{2, 1}}) {
        const uint32_t fields = 1u << f.bits();
        const uint32_t reserved = ((1u << f.exp_bits) - 1) << f.mant_bits;
        for (uint32_t b = 0; b < fields; ++b) {
            if ((b & reserved) == reserved) {
                CHECK_THROWS_AS(decode_scale_bits(b, f), Error);
                continue;
            }
            const double v = decode_scale_bits(b, f);
            CHECK(encode_scale_bits(v, f) == b);
            CHECK(quantise_scale(v, f).value == v);
        }
    }
    CHECK(decode_scale_bits(encode_scale_bits(240.0, {4, 3}), {4, 3}) == 240.0);
    CHECK_THROWS_AS(encode_scale_bits(1.1, {4, 3}), Error);
    // every quantised scale is encodable
    const CounterRng rng(3);
    for (const auto & f : {ScaleFormat{8, 7}, ScaleFormat{8, 0}, ScaleFormat{5, 10}, ScaleFormat{8, 23}}) {
        for (uint64_t i = 0; i < 2000; ++i) {
            const double x = std::ldexp(rng.uniform(i), static_cast<int>(rng.bits(i + 9999) % 300) - 150);
            const double q = quantise_scale(x, f).value;
            CHECK(decode_scale_bits(encode_scale_bits(q, f), f) == q);
        }
    }
}

TEST_CASE("archive roundtrip is bit-exact") {
    const auto x = sample(Distribution::student_t(4.0, 0.05), 3000, 11);
    const std::vector<std::size_t> shape{30, 100};
    const Distribution lap = Distribution::laplace(1.0);
    std::vector<FormatSpec> specs;
    {
        FormatSpec s;
        s.scaling = Scaling::TensorRMS;
        s.codebook = build_power_alpha_codebook(Distribution::unit_rms(Family::Normal), 23, 1.0 / 3.0, Variant::Asymmetric);
        s.element_scale = 0.93;
        specs.push_back(s);
        s.scaling = Scaling::ChannelRMS;
        s.scale_format = {5, 2, ScaleRounding::Nearest};
        specs.push_back(s);
        s.scaling = Scaling::BlockAbsmax;
        s.block_size = 64;
        s.scale_format = {8, 0};
        s.codebook = build_absmax_codebook(lap, 16, 64, Variant::Symmetric);
        specs.push_back(s);
        s.scaling = Scaling::BlockSignmax;
        s.scale_format = {8, 7};
        s.codebook = build_absmax_codebook(lap, 15, 64, Variant::Signmax);
        specs.push_back(s);
        s.scaling = Scaling::ChannelAbsmax;
        s.codebook = build_float_codebook(2, 1);
        specs.push_back(s);
    }
    for (const auto & spec : specs) {
        for (bool huffman : {false, true}) {
            for (double outliers : {0.0, 0.01}) {
                QuantisedArchive a;
                a.entries.push_back({"t", quantise_tensor(x, shape, spec, outliers), huffman});
                a.entries.push_back({"u", quantise_tensor(std::span(x).first(257), std::vector<std::size_t>{257}, spec),
                                     !huffman});
                const auto bytes = serialise_archive(a);
                const auto back = deserialise_archive(bytes);
                REQUIRE(back.entries.size() == 2);
                for (std::size_t i = 0; i < 2; ++i) {
                    const auto & p = a.entries[i].tensor;
                    const auto & q = back.entries[i].tensor;
                    CHECK(back.entries[i].name == a.entries[i].name);
                    CHECK(back.entries[i].huffman == a.entries[i].huffman);
                    CHECK(q.codes == p.codes);
                    CHECK(q.scales == p.scales);
                    CHECK(q.outliers.entries == p.outliers.entries);
                    CHECK(q.spec.element_scale == p.spec.element_scale);
                    CHECK(dequantise_tensor(q) == dequantise_tensor(p));
                    CHECK(bits_per_param(q) == bits_per_param(p));
                }
            }
        }
    }
}

TEST_CASE("archive size accounting") {
    const std::size_t n = 1u << 16;
    const auto x = sample(Distribution::normal(1.0), n, 5);
    const std::vector<std::size_t> shape{256, 256};
    FormatSpec s;
    s.scaling = Scaling::BlockAbsmax;
    s.block_size = 64;
    s.codebook = build_absmax_codebook(Distribution::normal(1.0), 16, 64, Variant::Symmetric);
    QuantisedArchive a;
    a.entries.push_back({"t", quantise_tensor(x, shape, s, 0.001), false});
    const auto bytes = serialise_archive(a);
    const auto & q = a.entries[0].tensor;
    const double b = bits_per_param(q);
    // header and tables: magic, header length, JSON header, its digest and the outlier count
    const nlohmann::json h = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 +
                                                                           static_cast<std::ptrdiff_t>(bytes[8] | bytes[9] << 8 | bytes[10] << 16));
    const std::size_t header = 8 + 8 + h.dump().size() + 4 + 8;
    CHECK(bytes.size() <= static_cast<std::size_t>(std::ceil(n * b / 8.0)) + header + 3);
    const double payload_bits = 8.0 * static_cast<double>(bytes.size() - header);
    CHECK(std::fabs(payload_bits / (n * b) - 1.0) < 1e-3);
    CHECK(storage_bits_per_param(a.entries[0]) == doctest::Approx(b + 64.0 / n));
    CHECK(h["tensors"][0]["bits_per_param"].get<double>() == b);
}

TEST_CASE("damaged archives are detected") {
    const auto x = sample(Distribution::normal(1.0), 4096, 8);
    FormatSpec s;
    s.scaling = Scaling::BlockAbsmax;
    s.block_size = 32;
    s.codebook = build_absmax_codebook(Distribution::normal(1.0), 16, 32, Variant::Symmetric);
    QuantisedArchive a;
    a.entries.push_back({"t", quantise_tensor(x, std::vector<std::size_t>{4096}, s, 0.01), true});
    const auto bytes = serialise_archive(a);
    for (std::size_t pos = 0; pos < bytes.size(); pos += 97) {
        auto bad = bytes;
        bad[pos] ^= 0x01;
        try {
            deserialise_archive(bad);
            FAIL("damage at byte " << pos << " went unnoticed");
        } catch (const Error & e) {
            CHECK(e.kind() == ErrorKind::Corruption);
        }
    }
    for (std::size_t len : {std::size_t{0}, std::size_t{7}, std::size_t{20}, bytes.size() - 1}) {
        CHECK_THROWS_AS(deserialise_archive(std::span(bytes).first(len)), Error);
    }
    auto longer = bytes;
    longer.push_back(0);
    CHECK_THROWS_AS(deserialise_archive(longer), Error);

    const auto empty = serialise_archive(QuantisedArchive{});
    CHECK(deserialise_archive(empty).entries.empty());
}

TEST_CASE("constant tensors entropy-code to an empty stream") {
    std::vector<float> x(500, 0.25f);
    FormatSpec s;
    s.scaling = Scaling::BlockAbsmax;
    s.block_size = 50;
    s.codebook = build_int_codebook(4, Variant::Asymmetric);
    QuantisedArchive a;
    a.entries.push_back({"c", quantise_tensor(x, std::vector<std::size_t>{500}, s), true});
    const auto back = deserialise_archive(serialise_archive(a));
    CHECK(dequantise_tensor(back.entries[0].tensor) == dequantise_tensor(a.entries[0].tensor));
}

TEST_CASE("cli: usage errors") {
    CHECK(cli({}).code == exit_code::usage);
    CHECK(cli({"frobnicate"}).code == exit_code::usage);
    const auto r = cli({"simulate", "alpha-sweep", "--samples", "65536"});
    CHECK(r.code == exit_code::usage);
    CHECK(r.err.find("--dist") != std::string::npos);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(cli({"simulate", "alpha-sweep", "--dist", "normal", "--bogus"}).code == exit_code::usage);
    CHECK(cli({"simulate", "nonsense", "--dist", "normal"}).code == exit_code::usage);
    CHECK(cli({"simulate", "alpha-sweep", "--dist", "cauchy", "--samples", "65536"}).code == exit_code::usage);
    CHECK(cli({"simulate", "alpha-sweep", "--dist", "normal", "--samples", "100"}).code == exit_code::usage);
    CHECK(cli({"--help"}).code == exit_code::ok);
}

TEST_CASE("cli: simulate writes the versioned CSV deterministically") {
    TempDir dir;
    const std::vector<std::string> args{"simulate", "error-vs-bits", "--dist", "student-t", "--nu", "5",
                                        "--samples", "65536", "--bits", "3,4", "--no-timing", "--huffman",
                                        "--out", dir / "a.csv", "--json", dir / "a.json"};
    REQUIRE(cli(args).code == exit_code::ok);
    auto again = args;
    again[again.size() - 3] = dir / "b.csv";
    again.back() = dir / "b.json";
    REQUIRE(cli(again).code == exit_code::ok);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
    const auto text = slurp(dir / "a.csv");
    const auto rows = csv_rows(std::string(text.begin(), text.end()));
    REQUIRE(rows.size() == 2 + 8);
    CHECK(rows[0][0] == "#qlab-sweep-csv");
    CHECK(rows[1].back() == "wall_ms");

    const auto timed = cli({"simulate", "allocation", "--tensors", "3", "--bits", "4"});
    CHECK(timed.code == exit_code::ok);
    CHECK(timed.out.find("oracle-quarter") != std::string::npos);
}

TEST_CASE("cli: partial sweeps exit 2") {
    const auto r = cli({"simulate", "block-size", "--dist", "normal", "--samples", "65536", "--block-sizes", "1,64",
                        "--no-timing"});
    CHECK(r.code == exit_code::partial);
    CHECK(r.out.find(",1,") != std::string::npos);
}

TEST_CASE("cli: quantise, dequantise and evaluate") {
    TempDir dir;
    // values on the INT4 grid with -1 in every block: scale 1, exact codes
    TensorContainer c;
    std::vector<float> v(512);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(static_cast<int>(i * 7 % 16) - 8) / 8.0f;
    for (std::size_t b = 0; b < v.size(); b += 32) v[b] = -1.0f;
    c.tensors.push_back({"grid", {16, 32}, v});
    c.tensors.push_back({"noise", {4096}, sample(Distribution::normal(0.02), 4096, 4)});
    write_container(dir / "m.json", c);

    auto r = cli({"quantise", dir / "m.json", "-o", dir / "m.qa", "--codebook", "int", "--bits", "4", "--block-size",
                  "32", "--fit", "none"});
    REQUIRE(r.code == exit_code::ok);
    const auto table = csv_rows(r.out);
    REQUIRE(table.size() == 3);
    CHECK(table[0][4] == "bits_per_param");
    CHECK(table[1][6] == "0");
    REQUIRE(cli({"dequantise", dir / "m.qa", "-o", dir / "r.json"}).code == exit_code::ok);
    const auto back = read_container(dir / "r.json");
    CHECK(back.tensors[0].data == v);

    // archive equals the in-memory path, and the reported bits match the sections
    const auto archive = read_archive(dir / "m.qa");
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.tensors[i].data == dequantise_tensor(archive.entries[i].tensor));
        const double reported = std::stod(table[i + 1][4]);
        CHECK(std::fabs(reported - bits_per_param(archive.entries[i].tensor)) <=
              1.0 / static_cast<double>(c.tensors[i].data.size()));
    }

    r = cli({"evaluate", dir / "m.json", dir / "m.json"});
    REQUIRE(r.code == exit_code::ok);
    auto rows = csv_rows(r.out);
    CHECK(rows[0].size() == 4);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][3] == "0");

    FisherSummary fs({{"grid", 2.0, 512, 0.5}, {"noise", 8.0, 4096, 0.02}});
    spit_text(dir / "f.json", to_json(fs));
    r = cli({"evaluate", dir / "m.json", dir / "m.json", "--fisher", dir / "f.json"});
    REQUIRE(r.code == exit_code::ok);
    rows = csv_rows(r.out);
    CHECK(rows[0].back() == "predicted_kl");
    CHECK(rows.back()[0] == "total");
    CHECK(rows.back().back() == "0");

    SUBCASE("known noise gives the closed-form predicted KL") {
        auto noisy = c;
        const double sigma = 0.01;
        const auto eps = sample(Distribution::normal(sigma), 4096, 77);
        for (std::size_t i = 0; i < 4096; ++i) noisy.tensors[1].data[i] += eps[i];
        write_container(dir / "n.json", noisy);
        r = cli({"evaluate", dir / "m.json", dir / "n.json", "--fisher", dir / "f.json"});
        REQUIRE(r.code == exit_code::ok);
        rows = csv_rows(r.out);
        const double kl = std::stod(rows[2][5]);
        const double expected = 0.5 * 8.0 * 4096 * sigma * sigma;
        CHECK(std::fabs(kl / expected - 1.0) < 0.1);
        CHECK(std::stod(rows[1][5]) == 0.0);
    }
    SUBCASE("name mismatch") {
        auto other = c;
        other.tensors[1].name = "renamed";
        write_container(dir / "o.json", other);
        r = cli({"evaluate", dir / "m.json", dir / "o.json"});
        CHECK(r.code == exit_code::mismatch);
        CHECK(r.err.find("renamed") != std::string::npos);
        CHECK(r.err.find("noise") != std::string::npos);
    }
    SUBCASE("corrupted archive exits 4") {
        auto bytes = slurp(dir / "m.qa");
        bytes[bytes.size() - 10] ^= 0x40;
        spit(dir / "bad.qa", bytes);
        r = cli({"dequantise", dir / "bad.qa", "-o", dir / "x.json"});
        CHECK(r.code == exit_code::corruption);
    }
    SUBCASE("empty archive gives an empty container") {
        write_container(dir / "e.json", TensorContainer{});
        REQUIRE(cli({"quantise", dir / "e.json", "-o", dir / "e.qa"}).code == exit_code::ok);
        REQUIRE(cli({"dequantise", dir / "e.qa", "-o", dir / "e2.json"}).code == exit_code::ok);
        CHECK(read_container(dir / "e2.json").tensors.empty());
    }
}

TEST_CASE("cli: Fisher allocation") {
    TempDir dir;
    TensorContainer c;
    c.tensors.push_back({"a", {64, 64}, sample(Distribution::normal(1.0), 4096, 1)});
    c.tensors.push_back({"b", {64, 64}, sample(Distribution::normal(1.0), 4096, 2)});
    write_container(dir / "m.json", c);
    spit_text(dir / "f.json", to_json(FisherSummary({{"a", 4.0, 4096, 1.0}, {"b", 1.0, 4096, 1.0}})));
    const std::vector<std::string> base{"quantise", dir / "m.json", "-o", dir / "m.qa", "--scaling", "tensor-rms",
                                        "--fisher", dir / "f.json"};

    auto args = base;
    args.insert(args.end(), {"--allocate", "4"});
    auto r = cli(args);
    REQUIRE(r.code == exit_code::ok);
    auto rows = csv_rows(r.out);
    CHECK(rows[1][2] == "4.5");
    CHECK(rows[2][2] == "3.5");
    CHECK(rows[1][3] == "23");
    CHECK(rows[2][3] == "11");

    args = base;
    args.insert(args.end(), {"--allocate", "4", "--rounding", "int"});
    r = cli(args);
    REQUIRE(r.code == exit_code::ok);
    rows = csv_rows(r.out);
    CHECK(std::stod(rows[1][2]) == std::round(std::stod(rows[1][2])));
    CHECK(std::stod(rows[2][2]) == std::round(std::stod(rows[2][2])));

    args = base;
    args.insert(args.end(), {"--allocate", "20"});
    r = cli(args);
    CHECK(r.code == exit_code::infeasible);
    CHECK(r.err.find("infeasible") != std::string::npos);

    spit_text(dir / "g.json", to_json(FisherSummary({{"a", 4.0, 4096, 1.0}, {"zzz", 1.0, 4096, 1.0}})));
    args = base;
    args[7] = dir / "g.json";
    args.insert(args.end(), {"--allocate", "4"});
    r = cli(args);
    CHECK(r.code == exit_code::mismatch);
    CHECK(r.err.find("zzz") != std::string::npos);

    args = base;
    CHECK(cli(args).code == exit_code::usage); // --fisher without --allocate
}

TEST_CASE("cli: generate") {
    TempDir dir;
    auto r = cli({"generate", "--tensor", "a:8x16", "--tensor", "b:5", "--dist", "laplace", "-o", dir / "g.json",
                  "--fisher-out", dir / "f.json"});
    REQUIRE(r.code == exit_code::ok);
    const auto c = read_container(dir / "g.json");
    REQUIRE(c.tensors.size() == 2);
    CHECK(c.tensors[0].shape == std::vector<std::size_t>{8, 16});
    const auto fs = load_fisher_summary(dir / "f.json");
    CHECK(fs.find("b")->count == 5);
    CHECK(cli({"generate", "--tensor", "a:0x3", "-o", dir / "h.json"}).code == exit_code::usage);
    CHECK(cli({"generate", "--tensor", "nocolon", "-o", dir / "h.json"}).code == exit_code::usage);
}

#include "qlab/cli.hpp"

#include "qlab/archive.hpp"
#include "qlab/container.hpp"
#include "qlab/error.hpp"
#include "qlab/harness.hpp"
#include "qlab/kernels.hpp"
#include "qlab/rng.hpp"
#include "qlab/sensitivity.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

namespace qlab {

namespace {

int exit_for(ErrorKind k) {
    switch (k) {
        case ErrorKind::Corruption: return exit_code::corruption;
        case ErrorKind::Mismatch: return exit_code::mismatch;
        case ErrorKind::Infeasible: return exit_code::infeasible;
        case ErrorKind::InvalidArgument:
        case ErrorKind::Domain: return exit_code::usage;
        default: return exit_code::failure;
    }
}

std::string fmt(double x) {
    if (std::isnan(x)) return "";
    std::ostringstream os;
    os.precision(10);
    os << x;
    return os.str();
}

Distribution make_distribution(const std::string & name, double nu, double scale) {
    switch (parse_family(name)) {
        case Family::Normal: return Distribution::normal(scale);
        case Family::Laplace: return Distribution::laplace(scale);
        case Family::StudentT: return Distribution::student_t(nu, scale);
    }
    fail(ErrorKind::InvalidArgument, "unknown distribution");
}

void emit(const std::string & text, const std::string & path, std::ostream & out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), ErrorKind::Input, "cannot write '" + path + "'");
    f << text;
}

// ---- simulate ----

struct SimulateOptions {
    std::string experiment;
    std::string dist;
    double nu = 5.0;
    double scale = 1.0;
    std::size_t samples = 0;
    uint64_t seed = 0;
    std::vector<double> bits;
    std::vector<std::size_t> block_sizes;
    std::vector<double> alphas;
    std::vector<std::string> quantisers;
    std::string scale_format = "e8m7";
    std::size_t block_size = 128;
    std::string fit = "moment-match";
    bool huffman = false;
    bool no_compression = false;
    bool no_timing = false;
    std::string fisher;
    std::size_t tensors = 4;
    std::string out;
    std::string json;
};

int simulate(const SimulateOptions & o, std::ostream & out) {
    SweepResult r;
    if (o.experiment == "allocation") {
        const FisherSummary fs = o.fisher.empty() ? synthetic_fisher_summary(o.tensors, o.seed) : load_fisher_summary(o.fisher);
        const std::vector<double> targets = o.bits.empty() ? std::vector<double>{3.0, 4.0, 5.0} : o.bits;
        r = run_allocation_experiment(fs, targets);
    } else {
        require(!o.dist.empty(), ErrorKind::InvalidArgument, "--dist is required");
        ExperimentConfig cfg;
        cfg.dist = make_distribution(o.dist, o.nu, o.scale);
        cfg.seed = o.seed;
        cfg.samples = o.samples ? o.samples
                                : (o.experiment == "compression" ? std::size_t{1} << 20 : default_sample_count);
        if (!o.bits.empty()) {
            cfg.bits = o.bits;
        } else if (o.experiment != "error-vs-bits") {
            cfg.bits = {4.0};
        }
        if (!o.block_sizes.empty()) cfg.block_sizes = o.block_sizes;
        if (!o.alphas.empty()) cfg.alphas = o.alphas;
        for (const auto & q : o.quantisers) cfg.quantisers.push_back(make_distribution(q, o.nu, 1.0));
        cfg.scale_format = parse_scale_format(o.scale_format);
        cfg.block_size = o.block_size;
        cfg.fit = parse_fit_method(o.fit);
        cfg.huffman = o.huffman;
        cfg.compression = !o.no_compression;
        if (o.experiment == "error-vs-bits") r = run_error_vs_bits(cfg);
        if (o.experiment == "alpha-sweep") r = run_alpha_sweep(cfg);
        if (o.experiment == "block-size") r = run_block_size_sweep(cfg);
        if (o.experiment == "compression") r = run_compression_comparison(cfg);
    }
    emit(to_csv(r, !o.no_timing), o.out, out);
    if (!o.json.empty()) emit(to_json(r, !o.no_timing), o.json, out);
    return r.failures() ? exit_code::partial : exit_code::ok;
}

// ---- quantise ----

struct QuantiseOptions {
    std::string input;
    std::string output;
    std::string scaling = "block-absmax";
    std::string codebook; // empty: crd for RMS scaling, absmax otherwise
    std::string variant;
    double bits = 4.0;
    std::size_t block_size = 64;
    std::string scale_format = "e8m7";
    std::string family = "normal";
    double nu = 5.0;
    double alpha = 1.0 / 3.0;
    int exp_bits = 2;
    int mant_bits = 1;
    std::string fit = "moment-match";
    double outliers = 0.0;
    bool huffman = false;
    std::string fisher;
    std::optional<double> allocate;
    std::string rounding = "none";
};

// Per-element scale overhead of a format on a shape.
double scale_overhead(const QuantiseOptions & o, const std::vector<std::size_t> & shape) {
    FormatSpec s;
    s.scaling = parse_scaling(o.scaling);
    s.block_size = o.block_size;
    s.scale_format = parse_scale_format(o.scale_format);
    return bits_per_param(s, shape) - 1.0;
}

FormatSpec make_spec(const QuantiseOptions & o, const Tensor & t, double element_bits) {
    FormatSpec spec;
    spec.scaling = parse_scaling(o.scaling);
    spec.block_size = o.block_size;
    spec.scale_format = parse_scale_format(o.scale_format);
    const NormKind norm = norm_kind(spec.scaling);
    std::string kind = o.codebook;
    if (kind.empty()) kind = norm == NormKind::RMS ? "crd" : "absmax";
    const Distribution d = Distribution::unit_rms(parse_family(o.family), parse_family(o.family) == Family::StudentT ? o.nu : 0.0);

    auto variant_of = [&](std::size_t k) {
        if (!o.variant.empty()) return parse_variant(o.variant);
        if (norm == NormKind::Signmax) return Variant::Signmax;
        return variant_for(k);
    };
    if (kind == "crd") {
        const std::size_t k = codepoints_for_bits(element_bits);
        spec.codebook = build_power_alpha_codebook(d, k, o.alpha, variant_of(k));
    } else if (kind == "absmax") {
        const std::size_t k = codepoints_for_bits(element_bits);
        spec.codebook = build_absmax_codebook(d, k, group_size(spec, t.shape), variant_of(k), o.alpha);
    } else if (kind == "int") {
        require(element_bits == std::floor(element_bits), ErrorKind::InvalidArgument,
                "integer codebooks need a whole bit width (use --rounding int)");
        const auto b = static_cast<int>(element_bits);
        const Variant v = !o.variant.empty()         ? parse_variant(o.variant)
                          : norm == NormKind::Signmax ? Variant::Signmax
                                                      : Variant::Asymmetric;
        spec.codebook = build_int_codebook(b, v);
    } else if (kind == "float") {
        spec.codebook = build_float_codebook(o.exp_bits, o.mant_bits);
    } else if (kind == "lloyd") {
        const double r = std::sqrt(kernels::sum_squares(t.data) / static_cast<double>(t.data.size()));
        require(r > 0.0, ErrorKind::Input, "cannot train a codebook on all-zero data");
        std::vector<float> unit(t.data.size());
        for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = static_cast<float>(t.data[i] / r);
        spec.codebook = lloyd_max(unit, codepoints_for_bits(element_bits));
    } else {
        fail(ErrorKind::InvalidArgument, "unknown codebook '" + kind + "' (crd, absmax, int, float, lloyd)");
    }
    spec.validate();
    if (o.fit == "none") return spec;
    const FitMethod method = parse_fit_method(o.fit);
    require(method != FitMethod::FisherWeightedSearch, ErrorKind::InvalidArgument,
            "fisher-search needs a per-element Fisher diagonal, which the CLI does not take");
    const auto dense = split_outliers(t.data, o.outliers).dense;
    return fit_quantiser_params(dense, t.shape, spec, method).spec;
}

int quantise(const QuantiseOptions & o, std::ostream & out, std::ostream & err) {
    require(o.outliers >= 0.0 && o.outliers <= max_outlier_fraction, ErrorKind::InvalidArgument,
            "--outliers must lie in [0, 0.05]");
    require(o.allocate.has_value() == !o.fisher.empty(), ErrorKind::InvalidArgument,
            "--allocate and --fisher go together");
    const auto c = read_container(o.input);

    std::vector<double> widths(c.tensors.size(), o.bits);
    bool allocated = false;
    if (o.allocate) {
        const auto fs = load_fisher_summary(o.fisher);
        std::vector<FisherRecord> ordered;
        std::ostringstream problems;
        for (const auto & t : c.tensors) {
            const auto * rec = fs.find(t.name);
            if (!rec) {
                problems << "  no Fisher record for tensor '" << t.name << "'\n";
                continue;
            }
            if (rec->count != t.element_count()) {
                problems << "  tensor '" << t.name << "' has " << t.element_count() << " elements, Fisher record "
                         << rec->count << "\n";
            }
            ordered.push_back(*rec);
        }
        for (const auto & rec : fs.records()) {
            if (!c.find(rec.name)) problems << "  Fisher record '" << rec.name << "' matches no tensor\n";
        }
        if (!problems.str().empty()) {
            err << "qlab: Fisher summary does not match the container:\n" << problems.str();
            return exit_code::mismatch;
        }
        const auto a = allocate_bits(FisherSummary(ordered), *o.allocate, parse_bit_rounding(o.rounding));
        if (a.violation) {
            err << "qlab: allocation infeasible: target " << *o.allocate << " bits cannot be met inside ["
                << Allocation::min_bits << ", " << Allocation::max_bits << "]\n";
            for (std::size_t i = 0; i < ordered.size(); ++i) {
                err << "  " << ordered[i].name << ": " << a.bits[i] << " bits\n";
            }
            err << "  residual " << a.residual << "\n";
            return exit_code::infeasible;
        }
        widths = a.bits;
        allocated = true;
    }

    QuantisedArchive archive;
    std::ostringstream table;
    table << "name,elements,target_bits,k,bits_per_param,storage_bits_per_param,R\n";
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
        const auto & t = c.tensors[i];
        try {
            const double element_bits = allocated ? widths[i] - scale_overhead(o, t.shape) : widths[i];
            const FormatSpec spec = make_spec(o, t, element_bits);
            ArchiveEntry e;
            e.name = t.name;
            e.tensor = quantise_tensor(t.data, t.shape, spec, o.outliers);
            e.huffman = o.huffman;
            const auto recon = dequantise_tensor(e.tensor);
            const double den = kernels::sum_squares(t.data);
            const double se = kernels::squared_error(t.data, recon);
            const double R = den > 0.0 ? std::sqrt(se / den) : (se == 0.0 ? 0.0 : INFINITY);
            table << t.name << ',' << t.element_count() << ',' << fmt(widths[i]) << ',' << spec.codebook.size() << ','
                  << fmt(bits_per_param(e.tensor)) << ',' << fmt(storage_bits_per_param(e)) << ',' << fmt(R) << "\n";
            archive.entries.push_back(std::move(e));
        } catch (const Error & ex) {
            fail(ex.kind(), "tensor '" + t.name + "': " + ex.what());
        }
    }
    write_archive(o.output, archive);
    out << table.str();
    return exit_code::ok;
}

// ---- dequantise ----

int dequantise(const std::string & input, const std::string & output) {
    const auto archive = read_archive(input);
    TensorContainer c;
    for (const auto & e : archive.entries) c.tensors.push_back({e.name, e.tensor.shape, dequantise_tensor(e.tensor)});
    write_container(output, c);
    return exit_code::ok;
}

// ---- evaluate ----

int evaluate(const std::string & ref_path, const std::string & cand_path, const std::string & fisher_path,
             const std::string & out_path, std::ostream & out, std::ostream & err) {
    const auto ref = read_container(ref_path);
    const auto cand = read_container(cand_path);
    std::ostringstream problems;
    for (const auto & t : ref.tensors) {
        const auto * c = cand.find(t.name);
        if (!c) {
            problems << "  missing from candidate: " << t.name << "\n";
        } else if (c->shape != t.shape) {
            problems << "  shape differs: " << t.name << "\n";
        }
    }
    for (const auto & t : cand.tensors) {
        if (!ref.find(t.name)) problems << "  not in reference: " << t.name << "\n";
    }
    std::optional<FisherSummary> fs;
    if (!fisher_path.empty()) {
        fs = load_fisher_summary(fisher_path);
        for (const auto & t : ref.tensors) {
            if (!fs->find(t.name)) problems << "  no Fisher record: " << t.name << "\n";
        }
    }
    if (!problems.str().empty()) {
        err << "qlab: tensor sets do not match:\n" << problems.str();
        return exit_code::mismatch;
    }

    std::ostringstream table;
    table << "name,elements,sq_error,R";
    if (fs) table << ",mean_fisher,predicted_kl";
    table << "\n";
    double total_se = 0.0, total_den = 0.0, total_kl = 0.0;
    std::size_t total_n = 0;
    for (const auto & t : ref.tensors) {
        const auto & c = *cand.find(t.name);
        const double se = kernels::squared_error(t.data, c.data);
        const double den = kernels::sum_squares(t.data);
        const double R = den > 0.0 ? std::sqrt(se / den) : (se == 0.0 ? 0.0 : INFINITY);
        total_se += se;
        total_den += den;
        total_n += t.element_count();
        table << t.name << ',' << t.element_count() << ',' << fmt(se) << ',' << fmt(R);
        if (fs) {
            const double f = fs->find(t.name)->mean_fisher;
            const double kl = 0.5 * f * se;
            total_kl += kl;
            table << ',' << fmt(f) << ',' << fmt(kl);
        }
        table << "\n";
    }
    const double R = total_den > 0.0 ? std::sqrt(total_se / total_den) : (total_se == 0.0 ? 0.0 : INFINITY);
    table << "total," << total_n << ',' << fmt(total_se) << ',' << fmt(R);
    if (fs) table << ",," << fmt(total_kl);
    table << "\n";
    emit(table.str(), out_path, out);
    return exit_code::ok;
}

// ---- generate ----

struct GenerateOptions {
    std::string dist = "normal";
    double nu = 5.0;
    double scale = 1.0;
    std::vector<std::string> tensors;
    uint64_t seed = 0;
    std::string output;
    std::string fisher_out;
};

std::pair<std::string, std::vector<std::size_t>> parse_tensor_spec(const std::string & s) {
    const auto colon = s.find(':');
    require(colon != std::string::npos && colon > 0, ErrorKind::InvalidArgument,
            "tensor spec '" + s + "' must look like name:ROWSxCOLS");
    std::vector<std::size_t> shape;
    std::stringstream dims(s.substr(colon + 1));
    std::string d;
    while (std::getline(dims, d, 'x')) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(d, &used);
            require(used == d.size() && v > 0, ErrorKind::InvalidArgument, "bad dimension");
            shape.push_back(v);
        } catch (const std::logic_error &) {
            fail(ErrorKind::InvalidArgument, "tensor spec '" + s + "' has a bad dimension");
        }
    }
    require(!shape.empty(), ErrorKind::InvalidArgument, "tensor spec '" + s + "' has no dimensions");
    return {s.substr(0, colon), shape};
}

int generate(const GenerateOptions & o) {
    require(!o.tensors.empty(), ErrorKind::InvalidArgument, "give at least one --tensor name:ROWSxCOLS");
    const Distribution d = make_distribution(o.dist, o.nu, o.scale);
    const CounterRng rng(o.seed);
    TensorContainer c;
    std::vector<FisherRecord> recs;
    for (std::size_t i = 0; i < o.tensors.size(); ++i) {
        auto [name, shape] = parse_tensor_spec(o.tensors[i]);
        Tensor t{name, shape, {}};
        t.data = sample(d, t.element_count(), rng.bits(2 * i));
        const double r = std::sqrt(kernels::sum_squares(t.data) / static_cast<double>(t.data.size()));
        recs.push_back({name, std::exp2(8.0 * rng.uniform(2 * i + 1) - 4.0), t.element_count(), r});
        c.tensors.push_back(std::move(t));
    }
    write_container(o.output, c);
    if (!o.fisher_out.empty()) {
        std::ofstream f(o.fisher_out, std::ios::trunc);
        require(static_cast<bool>(f), ErrorKind::Input, "cannot write '" + o.fisher_out + "'");
        f << to_json(FisherSummary(recs));
    }
    return exit_code::ok;
}

} // namespace

int run_cli(const std::vector<std::string> & args, std::ostream & out, std::ostream & err) {
    kernels::configure_threads_from_env();
    CLI::App app{"qlab: element-format quantisation experiments and tools", "qlab"};
    app.require_subcommand(1);

    SimulateOptions so;
    auto * sim = app.add_subcommand("simulate", "run a simulated-data sweep and write CSV");
    sim->add_option("experiment", so.experiment, "error-vs-bits | alpha-sweep | block-size | compression | allocation")
        ->required()
        ->check(CLI::IsMember({"error-vs-bits", "alpha-sweep", "block-size", "compression", "allocation"}));
    sim->add_option("--dist", so.dist, "data distribution: normal | laplace | student-t");
    sim->add_option("--nu", so.nu, "Student-t degrees of freedom")->check(CLI::PositiveNumber);
    sim->add_option("--scale", so.scale, "distribution scale")->check(CLI::PositiveNumber);
    sim->add_option("--samples", so.samples, "sample count (default 2^24, 2^20 for compression)");
    sim->add_option("--seed", so.seed, "data seed");
    sim->add_option("--bits", so.bits, "target bits per element (comma list)")->delimiter(',');
    sim->add_option("--block-sizes", so.block_sizes, "block sizes for the block-size sweep")->delimiter(',');
    sim->add_option("--alphas", so.alphas, "alpha grid for the alpha sweep")->delimiter(',');
    sim->add_option("--quantisers", so.quantisers, "quantiser families for the alpha sweep")->delimiter(',');
    sim->add_option("--scale-format", so.scale_format, "block scale format for error-vs-bits");
    sim->add_option("--block-size", so.block_size, "block size for error-vs-bits");
    sim->add_option("--fit", so.fit, "moment-match | scale-search | nu-search");
    sim->add_flag("--huffman", so.huffman, "add Huffman bits columns");
    sim->add_flag("--no-compression", so.no_compression, "skip entropy-coded rows");
    sim->add_flag("--no-timing", so.no_timing, "leave wall_ms empty for byte-identical output");
    sim->add_option("--fisher", so.fisher, "Fisher summary for the allocation experiment");
    sim->add_option("--tensors", so.tensors, "synthetic tensor count for the allocation experiment");
    sim->add_option("--out", so.out, "CSV output path (default stdout)");
    sim->add_option("--json", so.json, "structured JSON mirror path");

    QuantiseOptions qo;
    auto * quant = app.add_subcommand("quantise", "quantise a tensor container into an archive");
    quant->add_option("container", qo.input, "input manifest")->required();
    quant->add_option("-o,--out", qo.output, "output archive")->required();
    quant->add_option("--scaling", qo.scaling, "tensor-rms | block-absmax | block-signmax | channel-absmax | channel-rms");
    quant->add_option("--codebook", qo.codebook, "crd | absmax | int | float | lloyd");
    quant->add_option("--variant", qo.variant, "symmetric | asymmetric | signmax");
    quant->add_option("--bits", qo.bits, "element bits (codebook size round(2^bits))");
    quant->add_option("--block-size", qo.block_size, "block size for block scaling");
    quant->add_option("--scale-format", qo.scale_format, "scale format, e.g. e8m7, e8m0, bf16, e5m2-nearest");
    quant->add_option("--family", qo.family, "codebook design family");
    quant->add_option("--nu", qo.nu, "Student-t degrees of freedom for the design family")->check(CLI::PositiveNumber);
    quant->add_option("--alpha", qo.alpha, "density power for crd/absmax codebooks");
    quant->add_option("--exp-bits", qo.exp_bits, "float codebook exponent bits");
    quant->add_option("--mant-bits", qo.mant_bits, "float codebook mantissa bits");
    quant->add_option("--fit", qo.fit, "none | moment-match | scale-search | nu-search");
    quant->add_option("--outliers", qo.outliers, "fraction of values kept as sparse outliers");
    quant->add_flag("--huffman", qo.huffman, "entropy-code the element codes");
    quant->add_option("--fisher", qo.fisher, "Fisher summary JSON for --allocate");
    quant->add_option("--allocate", qo.allocate, "average bits per parameter to allocate across tensors");
    quant->add_option("--rounding", qo.rounding, "allocation rounding: none | int | quarter");

    std::string dq_in, dq_out;
    auto * deq = app.add_subcommand("dequantise", "reconstruct a tensor container from an archive");
    deq->add_option("archive", dq_in, "input archive")->required();
    deq->add_option("-o,--out", dq_out, "output manifest")->required();

    std::string ev_ref, ev_cand, ev_fisher, ev_out;
    auto * ev = app.add_subcommand("evaluate", "compare two containers");
    ev->add_option("reference", ev_ref, "reference manifest")->required();
    ev->add_option("candidate", ev_cand, "candidate manifest")->required();
    ev->add_option("--fisher", ev_fisher, "Fisher summary for predicted KL columns");
    ev->add_option("--out", ev_out, "CSV output path (default stdout)");

    GenerateOptions go;
    auto * gen = app.add_subcommand("generate", "write a synthetic tensor container");
    gen->add_option("--dist", go.dist, "normal | laplace | student-t");
    gen->add_option("--nu", go.nu, "Student-t degrees of freedom")->check(CLI::PositiveNumber);
    gen->add_option("--scale", go.scale, "distribution scale")->check(CLI::PositiveNumber);
    gen->add_option("--tensor", go.tensors, "name:ROWSxCOLS (repeatable)");
    gen->add_option("--seed", go.seed, "seed");
    gen->add_option("-o,--out", go.output, "output manifest")->required();
    gen->add_option("--fisher-out", go.fisher_out, "also write a synthetic Fisher summary");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return exit_code::ok;
    } catch (const CLI::ParseError & e) {
        err << "qlab: " << e.what() << "\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return exit_code::usage;
    }

    try {
        if (sim->parsed()) {
            if (so.experiment != "allocation" && so.dist.empty()) {
                err << "qlab: --dist is required for " << so.experiment << "\n" << sim->help();
                return exit_code::usage;
            }
            return simulate(so, out);
        }
        if (quant->parsed()) return quantise(qo, out, err);
        if (deq->parsed()) return dequantise(dq_in, dq_out);
        if (ev->parsed()) return evaluate(ev_ref, ev_cand, ev_fisher, ev_out, out, err);
        if (gen->parsed()) return generate(go);
    } catch (const Error & e) {
        err << "qlab: error: " << e.what() << "\n";
        return exit_for(e.kind());
    } catch (const std::exception & e) {
        err << "qlab: error: " << e.what() << "\n";
        return exit_code::failure;
    }
    return exit_code::usage;
}

} // namespace qlab

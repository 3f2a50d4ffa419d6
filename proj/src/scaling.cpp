#include "qlab/scaling.hpp"

#include "qlab/error.hpp"
#include "qlab/kernels.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <limits>
#include <sstream>

namespace qlab {

std::string to_string(Scaling s) {
    switch (s) {
        case Scaling::TensorRMS: return "tensor-rms";
        case Scaling::BlockAbsmax: return "block-absmax";
        case Scaling::BlockSignmax: return "block-signmax";
        case Scaling::ChannelAbsmax: return "channel-absmax";
        case Scaling::ChannelRMS: return "channel-rms";
    }
    return "?";
}

Scaling parse_scaling(const std::string & name) {
    for (Scaling s : {Scaling::TensorRMS, Scaling::BlockAbsmax, Scaling::BlockSignmax, Scaling::ChannelAbsmax,
                      Scaling::ChannelRMS}) {
        if (to_string(s) == name) return s;
    }
    fail(ErrorKind::InvalidArgument, "unknown scaling mode '" + name + "'");
}

NormKind norm_kind(Scaling s) {
    switch (s) {
        case Scaling::TensorRMS:
        case Scaling::ChannelRMS: return NormKind::RMS;
        case Scaling::BlockAbsmax:
        case Scaling::ChannelAbsmax: return NormKind::Absmax;
        case Scaling::BlockSignmax: return NormKind::Signmax;
    }
    return NormKind::RMS;
}

namespace {

int bias_of(const ScaleFormat & f) { return (1 << (f.exp_bits - 1)) - 1; }

} // namespace

double ScaleFormat::max_value() const {
    const int emax = (1 << exp_bits) - 2 - bias_of(*this);
    return std::ldexp(2.0 - std::ldexp(1.0, -mant_bits), emax);
}

double ScaleFormat::min_value() const { return std::ldexp(1.0, 1 - bias_of(*this) - mant_bits); }

void ScaleFormat::validate() const {
    require(exp_bits >= 1 && exp_bits <= 8, ErrorKind::InvalidArgument, "scale exponent bits must lie in 1..8");
    require(mant_bits >= 0 && mant_bits <= 23, ErrorKind::InvalidArgument, "scale mantissa bits must lie in 0..23");
    // E8M0 would have a subnormal range beyond float: keep within float32
    require(1 - bias_of(*this) - mant_bits >= -149, ErrorKind::InvalidArgument, "scale format exceeds float32 range");
}

std::string ScaleFormat::name() const {
    std::string s = "E" + std::to_string(exp_bits) + "M" + std::to_string(mant_bits);
    if (rounding == ScaleRounding::Nearest) s += "-nearest";
    return s;
}

ScaleFormat parse_scale_format(const std::string & text) {
    std::string name;
    for (char c : text) name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    ScaleFormat f;
    const auto suffix = name.find("-nearest");
    if (suffix != std::string::npos) {
        f.rounding = ScaleRounding::Nearest;
        name.erase(suffix);
    }
    if (name == "bf16" || name == "bfloat16") {
        f.exp_bits = 8;
        f.mant_bits = 7;
    } else if (name == "fp16" || name == "float16") {
        f.exp_bits = 5;
        f.mant_bits = 10;
    } else {
        int e = 0, m = 0;
        char tail = 0;
        if (std::sscanf(name.c_str(), "e%dm%d%c", &e, &m, &tail) != 2) {
            fail(ErrorKind::InvalidArgument, "cannot parse scale format '" + text + "'");
        }
        f.exp_bits = e;
        f.mant_bits = m;
    }
    f.validate();
    return f;
}

QuantisedScale quantise_scale(double n, const ScaleFormat & format) {
    require(std::isfinite(n), ErrorKind::Input, "scale must be finite");
    if (n == 0.0) return {0.0, false};
    const double a = std::fabs(n);
    const double top = format.max_value();
    if (a > top) return {std::copysign(top, n), true};
    int e = 0;
    std::frexp(a, &e);
    const int ex = std::max(e - 1, 1 - bias_of(format));
    const double quantum = std::ldexp(1.0, ex - format.mant_bits);
    const double steps = a / quantum;
    double q = (format.rounding == ScaleRounding::RoundAway ? std::ceil(steps) : std::nearbyint(steps)) * quantum;
    q = std::min(q, top);
    return {std::copysign(q, n), false};
}

void FormatSpec::validate() const {
    scale_format.validate();
    require(block_size >= 1, ErrorKind::InvalidArgument, "block size must be >= 1");
    require(std::isfinite(element_scale) && element_scale > 0.0, ErrorKind::InvalidArgument,
            "element scale must be positive");
    const Variant v = codebook.variant();
    switch (scaling) {
        case Scaling::BlockSignmax:
            require(v == Variant::Signmax, ErrorKind::InvalidArgument, "signmax scaling needs a signmax codebook");
            break;
        case Scaling::BlockAbsmax:
        case Scaling::ChannelAbsmax:
            require(v == Variant::Symmetric || v == Variant::Asymmetric, ErrorKind::InvalidArgument,
                    "absmax scaling needs a symmetric or asymmetric codebook");
            break;
        case Scaling::TensorRMS:
        case Scaling::ChannelRMS:
            require(v != Variant::Signmax, ErrorKind::InvalidArgument, "signmax codebooks need signmax scaling");
            break;
    }
}

std::string FormatSpec::describe() const {
    std::ostringstream os;
    os << to_string(scaling);
    if (scaling == Scaling::BlockAbsmax || scaling == Scaling::BlockSignmax) os << "(B=" << block_size << ")";
    os << " " << codebook.describe() << " scale=" << scale_format.name();
    return os.str();
}

std::size_t element_count(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::size_t group_size(const FormatSpec & spec, std::span<const std::size_t> shape) {
    require(!shape.empty(), ErrorKind::InvalidArgument, "tensor shape must have at least one dimension");
    switch (spec.scaling) {
        case Scaling::TensorRMS: return std::max<std::size_t>(1, element_count(shape));
        case Scaling::BlockAbsmax:
        case Scaling::BlockSignmax: return spec.block_size;
        case Scaling::ChannelAbsmax:
        case Scaling::ChannelRMS: return std::max<std::size_t>(1, shape.back());
    }
    return 1;
}

double compute_norm(NormKind kind, std::span<const float> block) {
    require(!block.empty(), ErrorKind::InvalidArgument, "cannot take the norm of an empty block");
    switch (kind) {
        case NormKind::RMS: {
            double s = 0.0;
            for (float x : block) s += static_cast<double>(x) * x;
            return std::sqrt(s / static_cast<double>(block.size()));
        }
        case NormKind::Absmax: {
            float m = 0.0f;
            for (float x : block) m = std::max(m, std::fabs(x));
            return m;
        }
        case NormKind::Signmax: {
            float best = 0.0f;
            for (float x : block) {
                if (std::fabs(x) > std::fabs(best)) best = x;
            }
            return best;
        }
    }
    return 0.0;
}

void QuantisedTensor::check() const {
    const std::size_t n = qlab::element_count(shape);
    require(codes.size() == n, ErrorKind::Corruption, "code count does not match tensor shape");
    const std::size_t group = group_size(spec, shape);
    const std::size_t groups = n == 0 ? 0 : (n + group - 1) / group;
    require(scales.size() == groups, ErrorKind::Corruption, "scale count does not match the format");
    for (Code c : codes) require(c < spec.codebook.size(), ErrorKind::Corruption, "code index out of range");
    for (float s : scales) require(std::isfinite(s), ErrorKind::Corruption, "non-finite scale");
    outliers.check(n);
}

QuantisedTensor quantise_tensor(std::span<const float> theta, std::span<const std::size_t> shape,
                                const FormatSpec & spec) {
    spec.validate();
    const std::size_t n = element_count(shape);
    require(theta.size() == n, ErrorKind::InvalidArgument, "data length does not match shape");
    require(n > 0, ErrorKind::InvalidArgument, "cannot quantise an empty tensor");
    for (float x : theta) require(std::isfinite(x), ErrorKind::Input, "cannot quantise non-finite values");

    QuantisedTensor q;
    q.shape.assign(shape.begin(), shape.end());
    q.spec = spec;
    const std::size_t group = group_size(spec, shape);
    const auto norms = kernels::group_norms(norm_kind(spec.scaling), theta, group);
    q.scales.resize(norms.size());
    for (std::size_t g = 0; g < norms.size(); ++g) {
        const auto s = quantise_scale(norms[g], spec.scale_format);
        q.scales[g] = static_cast<float>(s.value);
        q.clamped_scales += s.clamped ? 1 : 0;
    }
    q.codes.resize(n);
    kernels::encode_groups(spec.codebook, theta, group, q.scales, spec.element_scale, q.codes);
    return q;
}

QuantisedTensor quantise_tensor(std::span<const float> theta, std::span<const std::size_t> shape,
                                const FormatSpec & spec, double outlier_fraction) {
    require(theta.size() == element_count(shape), ErrorKind::InvalidArgument, "data length does not match shape");
    for (float x : theta) require(std::isfinite(x), ErrorKind::Input, "cannot quantise non-finite values");
    require(outlier_fraction >= 0.0 && outlier_fraction <= max_outlier_fraction, ErrorKind::InvalidArgument,
            "outlier fraction must lie in [0, 0.05]");
    auto split = split_outliers(theta, outlier_fraction);
    QuantisedTensor q = quantise_tensor(split.dense, shape, spec);
    q.outliers = std::move(split.outliers);
    return q;
}

std::vector<float> dequantise_tensor(const QuantisedTensor & q) {
    q.check();
    std::vector<float> out(q.codes.size());
    kernels::decode_groups(q.spec.codebook, q.codes, group_size(q.spec, q.shape), q.scales, q.spec.element_scale, out);
    restore_outliers_in_place(out, q.outliers);
    return out;
}

double bits_per_param(const FormatSpec & spec, std::span<const std::size_t> shape, std::size_t outlier_count) {
    const std::size_t n = element_count(shape);
    require(n > 0, ErrorKind::InvalidArgument, "empty tensor");
    const std::size_t group = group_size(spec, shape);
    const std::size_t groups = (n + group - 1) / group;
    double overhead = static_cast<double>(groups) * spec.scale_format.bits();
    if (spec.scaling == Scaling::BlockSignmax) overhead += static_cast<double>(groups);
    overhead += static_cast<double>(outlier_count) * OutlierSet::bits_per_entry;
    return spec.codebook.element_bits().bits + overhead / static_cast<double>(n);
}

double bits_per_param(const QuantisedTensor & q) { return bits_per_param(q.spec, q.shape, q.outliers.size()); }

FitMethod parse_fit_method(const std::string & name) {
    if (name == "moment-match") return FitMethod::MomentMatch;
    if (name == "scale-search") return FitMethod::ScaleSearch;
    if (name == "nu-search") return FitMethod::NuSearch;
    if (name == "fisher-search") return FitMethod::FisherWeightedSearch;
    fail(ErrorKind::InvalidArgument, "unknown fit method '" + name + "'");
}

std::vector<double> scale_search_grid() {
    std::vector<double> g;
    for (int j = -8; j <= 8; ++j) g.push_back(std::exp2(j / 4.0));
    return g;
}

std::vector<double> dof_search_grid() {
    std::vector<double> g;
    const double lo = std::log2(3.0), hi = std::log2(100.0);
    for (int i = 0; i < 12; ++i) g.push_back(std::exp2(lo + (hi - lo) * i / 11.0));
    return g;
}

namespace {

// Element scale that puts the codebook's design onto the normalised data.
double moment_matched_element_scale(const FormatSpec & spec) {
    const Codebook & cb = spec.codebook;
    const auto pts = cb.points();
    switch (norm_kind(spec.scaling)) {
        case NormKind::RMS: {
            const double r = cb.design_rms();
            require(std::isfinite(r) && r > 0.0, ErrorKind::InvalidArgument,
                    "moment matching needs a codebook with a finite design RMS");
            return 1.0 / r;
        }
        case NormKind::Absmax: return 1.0 / std::min(-static_cast<double>(pts.front()), static_cast<double>(pts.back()));
        case NormKind::Signmax: return 1.0 / static_cast<double>(pts.back());
    }
    return 1.0;
}

double fit_error(std::span<const float> data, std::span<const std::size_t> shape, const FormatSpec & spec,
                 std::span<const float> weights) {
    const auto q = quantise_tensor(data, shape, spec);
    const auto back = dequantise_tensor(q);
    return weights.empty() ? kernels::squared_error(data, back) : kernels::weighted_squared_error(data, back, weights);
}

struct SearchOutcome {
    double multiplier;
    double error;
};

SearchOutcome search_scale(std::span<const float> data, std::span<const std::size_t> shape, const FormatSpec & base,
                           std::span<const float> weights) {
    SearchOutcome best{1.0, std::numeric_limits<double>::infinity()};
    FormatSpec trial = base;
    for (double m : scale_search_grid()) {
        trial.element_scale = base.element_scale * m;
        const double e = fit_error(data, shape, trial, weights);
        if (e < best.error) best = {m, e};
    }
    return best;
}

Codebook rebuild_with_dof(const Codebook & cb, double dof) {
    const CodebookSource & src = cb.source();
    const Distribution d = Distribution::student_t(dof, 1.0);
    switch (src.kind) {
        case CodebookKind::PowerAlpha: return build_power_alpha_codebook(d, cb.size(), src.alpha, cb.variant());
        case CodebookKind::Absmax:
            return build_absmax_codebook(d, cb.size(), src.block_size, cb.variant(), src.alpha);
        default: fail(ErrorKind::InvalidArgument, "dof search needs a distribution-derived codebook");
    }
}

} // namespace

FitResult fit_quantiser_params(std::span<const float> data, std::span<const std::size_t> shape,
                               const FormatSpec & spec_template, FitMethod method, std::span<const float> fisher_diag) {
    spec_template.validate();
    require(data.size() == element_count(shape), ErrorKind::InvalidArgument, "data length does not match shape");
    for (float x : data) require(std::isfinite(x), ErrorKind::Input, "cannot fit non-finite data");
    if (method == FitMethod::FisherWeightedSearch) {
        require(fisher_diag.size() == data.size(), ErrorKind::InvalidArgument,
                "Fisher-weighted search needs one weight per element");
        for (float w : fisher_diag) {
            require(std::isfinite(w) && w >= 0.0f, ErrorKind::InvalidArgument, "Fisher weights must be nonnegative");
        }
    }

    FitResult result;
    result.spec = spec_template;
    if (kernels::sum_squares(data) == 0.0) {
        result.degenerate = true;
        return result;
    }

    switch (method) {
        case FitMethod::MomentMatch: {
            const double es = moment_matched_element_scale(spec_template);
            result.multiplier = es / spec_template.element_scale;
            result.spec.element_scale = es;
            result.squared_error = fit_error(data, shape, result.spec, {});
            break;
        }
        case FitMethod::ScaleSearch:
        case FitMethod::FisherWeightedSearch: {
            const auto weights = method == FitMethod::ScaleSearch ? std::span<const float>{} : fisher_diag;
            const auto best = search_scale(data, shape, spec_template, weights);
            result.multiplier = best.multiplier;
            result.spec.element_scale = spec_template.element_scale * best.multiplier;
            result.squared_error = best.error;
            break;
        }
        case FitMethod::NuSearch: {
            result.squared_error = std::numeric_limits<double>::infinity();
            for (double nu : dof_search_grid()) {
                FormatSpec trial = spec_template;
                trial.codebook = rebuild_with_dof(spec_template.codebook, nu);
                trial.element_scale = moment_matched_element_scale(trial);
                const auto best = search_scale(data, shape, trial, {});
                if (best.error < result.squared_error) {
                    result.squared_error = best.error;
                    result.multiplier = best.multiplier;
                    result.dof = nu;
                    result.spec = trial;
                    result.spec.element_scale = trial.element_scale * best.multiplier;
                }
            }
            break;
        }
    }
    return result;
}

} // namespace qlab

#include "qlab/entropy.hpp"

#include "qlab/error.hpp"
#include "qlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <tuple>

namespace qlab {

double ProbabilityModel::probability(int64_t symbol) const {
    require(covers(symbol), ErrorKind::Coverage, "symbol " + std::to_string(symbol) + " has no probability");
    return probs[static_cast<std::size_t>(symbol - offset)];
}

ProbabilityModel ProbabilityModel::rounded_to_float() const {
    ProbabilityModel m{{}, offset};
    m.probs.reserve(probs.size());
    double total = 0.0;
    for (double p : probs) {
        m.probs.push_back(static_cast<float>(p));
        total += m.probs.back();
    }
    for (double & p : m.probs) p /= total;
    return m;
}

void ProbabilityModel::validate() const {
    require(!probs.empty(), ErrorKind::InvalidArgument, "probability model is empty");
    double total = 0.0;
    for (double p : probs) {
        require(std::isfinite(p) && p >= 0.0, ErrorKind::InvalidArgument, "probabilities must be nonnegative");
        total += p;
    }
    require(std::fabs(total - 1.0) <= 1e-9, ErrorKind::InvalidArgument, "probabilities must sum to 1");
}

namespace {

ProbabilityModel from_counts(const std::vector<uint64_t> & counts, int64_t offset, uint64_t n, Smoothing smoothing) {
    ProbabilityModel m{std::vector<double>(counts.size()), offset};
    const double add = smoothing == Smoothing::AddOne ? 1.0 : 0.0;
    const double denom = static_cast<double>(n) + add * static_cast<double>(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) m.probs[i] = (static_cast<double>(counts[i]) + add) / denom;
    return m;
}

} // namespace

std::vector<int64_t> to_symbols(std::span<const Code> codes) { return {codes.begin(), codes.end()}; }

ProbabilityModel estimate_probability_model(std::span<const Code> codes, std::size_t k, Smoothing smoothing) {
    require(!codes.empty(), ErrorKind::Input, "cannot estimate a model from no codes");
    require(k >= 1, ErrorKind::InvalidArgument, "model needs at least one symbol");
    for (Code c : codes) require(c < k, ErrorKind::Input, "code outside the symbol range");
    const auto symbols = to_symbols(codes);
    return from_counts(kernels::histogram(symbols, 0, k), 0, codes.size(), smoothing);
}

ProbabilityModel estimate_grid_model(std::span<const int64_t> indices, Smoothing smoothing) {
    require(!indices.empty(), ErrorKind::Input, "cannot estimate a model from no symbols");
    const auto [lo, hi] = std::minmax_element(indices.begin(), indices.end());
    const int64_t range = *hi - *lo + 1;
    require(range > 0 && range <= max_grid_symbols, ErrorKind::InvalidArgument, "grid symbol range too large");
    return from_counts(kernels::histogram(indices, *lo, static_cast<std::size_t>(range)), *lo, indices.size(),
                       smoothing);
}

double information_bits(const ProbabilityModel & model, std::span<const int64_t> symbols) {
    // per-symbol costs once, then a sum over counts
    std::vector<uint64_t> counts(model.size(), 0);
    for (int64_t s : symbols) {
        require(model.covers(s), ErrorKind::Coverage, "symbol " + std::to_string(s) + " has zero model probability");
        ++counts[static_cast<std::size_t>(s - model.offset)];
    }
    double bits = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] > 0) bits -= static_cast<double>(counts[i]) * std::log2(model.probs[i]);
    }
    return bits;
}

double information_bits(const ProbabilityModel & model, std::span<const Code> codes) {
    return information_bits(model, to_symbols(codes));
}

double entropy_bits(const ProbabilityModel & model) {
    double h = 0.0;
    for (double p : model.probs) {
        if (p > 0.0) h -= p * std::log2(p);
    }
    return h;
}

double HuffmanCode::kraft_sum() const {
    double s = 0.0;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        if (coded[i]) s += std::ldexp(1.0, -static_cast<int>(lengths[i]));
    }
    return s;
}

double HuffmanCode::expected_length(const ProbabilityModel & model) const {
    require(model.size() == size() && model.offset == offset, ErrorKind::Mismatch, "model does not match the code");
    double l = 0.0;
    for (std::size_t i = 0; i < size(); ++i) l += model.probs[i] * lengths[i];
    return l;
}

uint64_t HuffmanCode::encoded_bits(std::span<const int64_t> symbols) const {
    uint64_t total = 0;
    for (int64_t s : symbols) {
        const int64_t i = s - offset;
        require(i >= 0 && i < static_cast<int64_t>(size()) && coded[static_cast<std::size_t>(i)], ErrorKind::Coverage,
                "symbol " + std::to_string(s) + " has no codeword");
        total += lengths[static_cast<std::size_t>(i)];
    }
    return total;
}

HuffmanCode build_huffman(const ProbabilityModel & model) {
    model.validate();
    const std::size_t k = model.size();
    HuffmanCode code;
    code.offset = model.offset;
    code.lengths.assign(k, 0);
    code.codewords.assign(k, 0);
    code.coded.assign(k, 0);

    // node ids: leaves 0..k-1, internal nodes k, k+1, ... in creation order
    using Entry = std::tuple<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    std::vector<std::size_t> parent;
    parent.reserve(2 * k);
    parent.assign(k, SIZE_MAX);
    for (std::size_t i = 0; i < k; ++i) {
        if (model.probs[i] > 0.0) {
            heap.emplace(model.probs[i], i);
            code.coded[i] = 1;
        }
    }
    require(!heap.empty(), ErrorKind::InvalidArgument, "model has no symbol with positive probability");
    while (heap.size() > 1) {
        const auto [pa, a] = heap.top();
        heap.pop();
        const auto [pb, b] = heap.top();
        heap.pop();
        const std::size_t id = parent.size();
        parent.push_back(SIZE_MAX);
        parent[a] = id;
        parent[b] = id;
        heap.emplace(pa + pb, id);
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (!code.coded[i]) continue;
        int depth = 0;
        for (std::size_t n = i; parent[n] != SIZE_MAX; n = parent[n]) ++depth;
        require(depth <= HuffmanCode::max_length, ErrorKind::Infeasible, "Huffman code length exceeds 64 bits");
        code.lengths[i] = static_cast<uint8_t>(depth);
    }

    // canonical assignment: by (length, symbol)
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < k; ++i) {
        if (code.coded[i]) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return code.lengths[a] < code.lengths[b]; });
    uint64_t next = 0;
    int prev_len = order.empty() ? 0 : code.lengths[order.front()];
    for (std::size_t j = 0; j < order.size(); ++j) {
        const int len = code.lengths[order[j]];
        if (j > 0) {
            ++next;
            next <<= (len - prev_len);
        }
        code.codewords[order[j]] = next;
        prev_len = len;
    }
    return code;
}

EncodedBits huffman_encode(const HuffmanCode & code, std::span<const int64_t> symbols) {
    BitWriter w;
    for (int64_t s : symbols) {
        const int64_t i = s - code.offset;
        require(i >= 0 && i < static_cast<int64_t>(code.size()) && code.coded[static_cast<std::size_t>(i)],
                ErrorKind::Coverage, "symbol " + std::to_string(s) + " has no codeword");
        w.put(code.codewords[static_cast<std::size_t>(i)], code.lengths[static_cast<std::size_t>(i)]);
    }
    EncodedBits out;
    out.bit_count = w.bit_count();
    out.bytes = w.take();
    return out;
}

std::vector<int64_t> huffman_decode(const HuffmanCode & code, const EncodedBits & bits, std::size_t count) {
    // canonical decoding tables: first codeword and symbol list per length
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < code.size(); ++i) {
        if (code.coded[i]) order.push_back(i);
    }
    require(!order.empty(), ErrorKind::Corruption, "Huffman code has no symbols");
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return code.lengths[a] < code.lengths[b]; });
    std::vector<int64_t> out;
    out.reserve(count);
    BitReader r(bits.bytes, bits.bit_count);
    if (order.size() == 1) {
        require(bits.bit_count == 0, ErrorKind::Corruption, "unexpected payload for a single-symbol code");
        out.assign(count, static_cast<int64_t>(order[0]) + code.offset);
        return out;
    }
    const int max_len = code.lengths[order.back()];
    std::vector<uint64_t> first(max_len + 2, 0);
    std::vector<std::size_t> first_index(max_len + 2, 0), per_len(max_len + 2, 0);
    for (std::size_t s : order) ++per_len[code.lengths[s]];
    {
        std::size_t idx = 0;
        for (int len = 1; len <= max_len; ++len) {
            first_index[len] = idx;
            first[len] = per_len[len] > 0 ? code.codewords[order[idx]] : 0;
            idx += per_len[len];
        }
    }
    for (std::size_t n = 0; n < count; ++n) {
        uint64_t v = 0;
        int len = 0;
        for (;;) {
            v = (v << 1) | r.get_bit();
            ++len;
            require(len <= max_len, ErrorKind::Corruption, "invalid Huffman codeword");
            if (per_len[len] > 0 && v >= first[len] && v - first[len] < per_len[len]) {
                out.push_back(static_cast<int64_t>(order[first_index[len] + (v - first[len])]) + code.offset);
                break;
            }
        }
    }
    require(r.remaining() == 0, ErrorKind::Corruption, "trailing bits after the Huffman payload");
    return out;
}

std::vector<int64_t> grid_quantise(std::span<const float> theta, const UniformGrid & grid) {
    require(grid.resolution > 0.0 && std::isfinite(grid.resolution), ErrorKind::InvalidArgument,
            "grid resolution must be positive");
    for (float x : theta) require(std::isfinite(x), ErrorKind::Input, "cannot quantise non-finite values");
    return kernels::grid_quantise(theta, grid.resolution);
}

std::vector<float> grid_dequantise(std::span<const int64_t> indices, const UniformGrid & grid) {
    std::vector<float> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out[i] = static_cast<float>(grid.resolution * static_cast<double>(indices[i]));
    }
    return out;
}

std::size_t clamp_to_support(std::span<int64_t> symbols, const ProbabilityModel & model) {
    std::size_t moved = 0;
    for (int64_t & s : symbols) {
        const int64_t c = std::clamp(s, model.min_symbol(), model.max_symbol());
        moved += c != s ? 1 : 0;
        s = c;
    }
    return moved;
}

namespace {

struct Range {
    double lo = 0.0, hi = 0.0;
};

Range value_range(std::span<const float> a, std::span<const float> b) {
    Range r{INFINITY, -INFINITY};
    for (auto s : {a, b}) {
        for (float x : s) {
            r.lo = std::min(r.lo, static_cast<double>(x));
            r.hi = std::max(r.hi, static_cast<double>(x));
        }
    }
    return r;
}

} // namespace

double grid_bits_per_element(std::span<const float> theta, const UniformGrid & grid, Smoothing smoothing,
                             std::span<const float> model_sample, std::size_t * clamped) {
    require(!theta.empty(), ErrorKind::Input, "no data");
    auto codes = grid_quantise(theta, grid);
    ProbabilityModel model;
    std::size_t moved = 0;
    if (model_sample.empty()) {
        model = estimate_grid_model(codes, smoothing);
    } else {
        model = estimate_grid_model(grid_quantise(model_sample, grid), smoothing);
        moved = clamp_to_support(codes, model);
    }
    if (clamped) *clamped = moved;
    return information_bits(model, codes) / static_cast<double>(theta.size());
}

GridSearchResult search_grid_resolution(std::span<const float> theta, double target_bits, Smoothing smoothing,
                                        std::span<const float> model_sample, double tolerance) {
    require(target_bits > 0.0 && std::isfinite(target_bits), ErrorKind::InvalidArgument, "target bits must be positive");
    require(!theta.empty(), ErrorKind::Input, "no data");
    for (float x : theta) require(std::isfinite(x), ErrorKind::Input, "cannot quantise non-finite values");
    const double rms = std::sqrt(kernels::sum_squares(theta) / static_cast<double>(theta.size()));
    GridSearchResult result;
    if (rms == 0.0) {
        result.reachable = false;
        return result;
    }
    const Range range = value_range(theta, model_sample);
    // finest grid whose index range still fits a model table
    const double floor_delta = (range.hi - range.lo) / static_cast<double>(max_grid_symbols / 2);
    double log_lo = std::log(std::max(rms * std::exp2(-target_bits - 4.0), floor_delta));
    double log_hi = std::max(log_lo, std::log(rms * std::exp2(-target_bits + 8.0)));

    const auto evaluate = [&](double log_delta, GridSearchResult & r) {
        r.grid.resolution = std::exp(log_delta);
        r.achieved_bits = grid_bits_per_element(theta, r.grid, smoothing, model_sample, &r.clamped);
        return r.achieved_bits;
    };
    GridSearchResult at_lo, at_hi;
    evaluate(log_lo, at_lo);
    evaluate(log_hi, at_hi);
    if (at_lo.achieved_bits < target_bits - tolerance) {
        at_lo.reachable = false;
        return at_lo;
    }
    if (at_hi.achieved_bits > target_bits + tolerance) {
        at_hi.reachable = false;
        return at_hi;
    }
    GridSearchResult best = std::fabs(at_lo.achieved_bits - target_bits) < std::fabs(at_hi.achieved_bits - target_bits)
                                ? at_lo
                                : at_hi;
    int iterations = 0;
    for (; iterations < 60; ++iterations) {
        GridSearchResult mid;
        const double log_mid = 0.5 * (log_lo + log_hi);
        const double bits = evaluate(log_mid, mid);
        if (std::fabs(bits - target_bits) < std::fabs(best.achieved_bits - target_bits)) best = mid;
        if (std::fabs(bits - target_bits) <= tolerance * 0.05) break;
        if (bits > target_bits) {
            log_lo = log_mid;
        } else {
            log_hi = log_mid;
        }
    }
    best.iterations = iterations;
    best.reachable = std::fabs(best.achieved_bits - target_bits) <= tolerance;
    return best;
}

} // namespace qlab

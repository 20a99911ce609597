#pragma once

// Per-code quantile grids over first-occurrence durations and values.
//
// Bins are left-closed and right-open: with interior edges e_1 < ... < e_r,
// bin 0 is [0, e_1), bin r is [e_r, +inf). A duration equal to an edge lands
// in the bin to its right, and a zero duration always lands in bin 0.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ora/targets.hpp"
#include "ora/util.hpp"
#include "ora/vocab.hpp"

namespace ora {

struct BinGrid {
    size_t code = 0;
    std::vector<double> time_edges;
    std::optional<std::vector<double>> value_edges;  // numeric codes only
    size_t T = 0;
    size_t V = 1;

    bool is_numeric() const noexcept { return value_edges.has_value(); }
    size_t effective_time_bins() const noexcept { return time_edges.size() + 1; }
    size_t effective_value_bins() const noexcept { return value_edges ? value_edges->size() + 1 : 1; }

    friend bool operator==(const BinGrid&, const BinGrid&) = default;
};

struct BinIndex {
    size_t time_bin = 0;
    std::optional<size_t> value_bin;

    friend bool operator==(const BinIndex&, const BinIndex&) = default;
};

struct LookupCounters {
    size_t ignored_values = 0;
};

/// Index of the left-closed bin containing x.
inline size_t bin_of(const std::vector<double>& edges, double x) {
    return static_cast<size_t>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
}

/// Interior quantile edges at i/bins, i = 1..bins-1, using the order
/// statistic x_(ceil(q n)). Duplicates and edges not above the sample minimum
/// are dropped, so every effective bin is reachable from the sample.
inline std::vector<double> quantile_edges(std::vector<double> sample, size_t bins) {
    std::vector<double> edges;
    if (sample.empty() || bins < 2) return edges;
    std::sort(sample.begin(), sample.end());
    const size_t n = sample.size();
    for (size_t i = 1; i < bins; ++i) {
        const size_t rank = (i * n + bins - 1) / bins;  // ceil(i n / bins), 1-based
        const double e = sample[std::max<size_t>(rank, 1) - 1];
        if (e <= sample.front()) continue;
        if (edges.empty() || e > edges.back()) edges.push_back(e);
    }
    return edges;
}

inline size_t lookup_time(const BinGrid& grid, double delta_t) {
    if (!(delta_t >= 0.0)) throw DomainError("lookup: negative or NaN duration");
    return bin_of(grid.time_edges, delta_t);
}

/// Cell of an observed event. Numeric grids require a value; values passed to
/// non-numeric grids are ignored and counted.
inline BinIndex lookup(const BinGrid& grid, double delta_t, std::optional<double> value,
                       LookupCounters* counters = nullptr) {
    BinIndex out;
    out.time_bin = lookup_time(grid, delta_t);
    if (grid.is_numeric()) {
        if (!value) throw DomainError("lookup: numeric code " + std::to_string(grid.code) + " requires a value");
        out.value_bin = bin_of(*grid.value_edges, *value);
    } else if (value && counters) {
        ++counters->ignored_values;
    }
    return out;
}

struct FitOptions {
    size_t T = 4;
    size_t V = 4;
    size_t min_count = 50;
};

/// Observed targets grouped by vocabulary index.
using ObservedByCode = std::vector<std::vector<FirstOccurrenceTarget>>;

inline ObservedByCode group_observed(const std::vector<std::vector<TargetSet>>& per_record, size_t vocab_size) {
    ObservedByCode out(vocab_size);
    for (const auto& sets : per_record)
        for (const auto& set : sets)
            for (const auto& t : set.observed) out.at(t.code).push_back(t);
    return out;
}

/// Fits one grid per vocabulary code. Codes with fewer than `min_count`
/// observed targets share the pooled global grid.
inline std::vector<BinGrid> fit_bins(const ObservedByCode& observed, const Vocabulary& vocab, FitOptions opt) {
    if (opt.T < 2 || opt.V < 2) throw DomainError("fit_bins: T and V must be >= 2");
    if (observed.size() != vocab.size()) throw DomainError("fit_bins: targets not grouped by vocabulary");
    std::vector<double> all_times, all_values;
    for (size_t c = 0; c < observed.size(); ++c) {
        for (const auto& t : observed[c]) {
            if (!t.observed) continue;
            all_times.push_back(t.delta_t);
            if (vocab[c].is_numeric && t.value) all_values.push_back(*t.value);
        }
    }
    if (all_times.empty()) throw DomainError("fit_bins: no observed targets in corpus");
    const auto global_time = quantile_edges(all_times, opt.T);
    const auto global_value = quantile_edges(all_values, opt.V);

    std::vector<BinGrid> grids;
    grids.reserve(vocab.size());
    for (size_t c = 0; c < vocab.size(); ++c) {
        BinGrid g;
        g.code = c;
        g.T = opt.T;
        g.V = vocab[c].is_numeric ? opt.V : 1;
        std::vector<double> times, values;
        for (const auto& t : observed[c]) {
            if (!t.observed) continue;
            times.push_back(t.delta_t);
            if (t.value) values.push_back(*t.value);
        }
        const bool sparse = times.size() < opt.min_count;
        g.time_edges = sparse ? global_time : quantile_edges(times, opt.T);
        if (vocab[c].is_numeric)
            g.value_edges = (sparse || values.empty()) ? global_value : quantile_edges(values, opt.V);
        grids.push_back(std::move(g));
    }
    return grids;
}

/// `index<TAB>time_edges<TAB>value_edges` per code; "-" marks a non-numeric code.
inline std::string serialize_grids(const std::vector<BinGrid>& grids) {
    std::string out;
    for (const auto& g : grids) {
        out += std::to_string(g.code) + '\t' + join_doubles(g.time_edges) + '\t' +
               (g.value_edges ? join_doubles(*g.value_edges) : std::string("-")) + '\n';
    }
    return out;
}

inline std::vector<BinGrid> parse_grids(std::string_view text, size_t T, size_t V) {
    std::vector<BinGrid> grids;
    size_t line_no = 0;
    for (auto line : lines_of(text)) {
        ++line_no;
        const std::string where = "grid line " + std::to_string(line_no);
        auto f = split(line, '\t');
        if (f.size() != 3) throw ParseError(where + ": expected 3 tab-separated fields");
        BinGrid g;
        g.code = static_cast<size_t>(parse_int(f[0], where));
        if (g.code != grids.size()) throw ParseError(where + ": grid indices must be dense and ordered");
        g.T = T;
        g.time_edges = parse_double_list(f[1], where);
        if (f[2] != "-") {
            g.value_edges = parse_double_list(f[2], where);
            g.V = V;
        }
        if (g.time_edges.size() + 1 > T || (g.value_edges && g.value_edges->size() + 1 > V))
            throw ParseError(where + ": more edges than the configured bin counts allow");
        if (!std::is_sorted(g.time_edges.begin(), g.time_edges.end()) ||
            std::adjacent_find(g.time_edges.begin(), g.time_edges.end()) != g.time_edges.end())
            throw ParseError(where + ": time edges must be strictly increasing");
        grids.push_back(std::move(g));
    }
    return grids;
}

}  // namespace ora

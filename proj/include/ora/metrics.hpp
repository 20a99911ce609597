#pragma once

// Evaluation metrics with seeded bootstrap standard errors.
//
// Report file: one line per metric, `task<TAB>metric<TAB>estimate<TAB>se<TAB>n`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ora/autodiff.hpp"
#include "ora/util.hpp"

namespace ora {

/// Mann-Whitney AUROC from average ranks; tied scores count one half.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DomainError("auroc: scores and labels differ in length");
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0;  // twice the rank sum of positives, kept integral
    size_t pos = 0;
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double twice_avg_rank = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum += twice_avg_rank;
        i = j;
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw DomainError("auroc: labels must be 0 or 1");
        pos += static_cast<size_t>(y);
    }
    const size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw DomainError("auroc: both classes must be present");
    const double p = static_cast<double>(pos), q = static_cast<double>(neg);
    // Twice the count of wins plus half-ties, divided by twice the pair count.
    return (rank_sum - p * (p + 1)) / (2.0 * p * q);
}

namespace detail {

/// Counts of inserted keys below and equal to a query, over a fixed key set.
class RankCounter {
public:
    explicit RankCounter(std::vector<double> keys) : keys_(std::move(keys)) {
        std::sort(keys_.begin(), keys_.end());
        keys_.erase(std::unique(keys_.begin(), keys_.end()), keys_.end());
        tree_.assign(keys_.size() + 1, 0);
    }
    void insert(double key) {
        for (size_t i = index(key) + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
    }
    /// Inserted keys strictly below `key`.
    std::uint64_t below(double key) const {
        const size_t r = static_cast<size_t>(std::lower_bound(keys_.begin(), keys_.end(), key) - keys_.begin());
        return prefix(r);
    }
    std::uint64_t at_most(double key) const {
        const size_t r = static_cast<size_t>(std::upper_bound(keys_.begin(), keys_.end(), key) - keys_.begin());
        return prefix(r);
    }

private:
    size_t index(double key) const {
        return static_cast<size_t>(std::lower_bound(keys_.begin(), keys_.end(), key) - keys_.begin());
    }
    std::uint64_t prefix(size_t r) const {
        std::uint64_t s = 0;
        for (size_t i = r; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }
    std::vector<double> keys_;
    std::vector<std::uint64_t> tree_;
};

}  // namespace detail

/// Time-dependent concordance over discrete survival curves.
///
/// A pair (i, j) is comparable when i had the event and duration_i <
/// duration_j. It is concordant when S_i(k) < S_j(k) for k the curve bin of
/// duration_i (count of `edges` <= duration_i); equal survivals count one half.
inline double td_concordance(const std::vector<std::vector<double>>& curves, const std::vector<double>& durations,
                             const std::vector<int>& events, const std::vector<double>& edges) {
    const size_t n = curves.size();
    if (durations.size() != n || events.size() != n) throw DomainError("td_concordance: input lengths differ");
    const size_t bins = edges.size() + 1;
    for (const auto& c : curves)
        if (c.size() != bins) throw DomainError("td_concordance: curve length does not match bin count");
    auto bin_of_duration = [&](double d) {
        return static_cast<size_t>(std::upper_bound(edges.begin(), edges.end(), d) - edges.begin());
    };
    // Scan by decreasing duration; for each observed i, the strictly longer
    // durations are already inserted in the counter for bin k_i.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return durations[a] > durations[b]; });
    std::vector<detail::RankCounter> counters;
    counters.reserve(bins);
    for (size_t k = 0; k < bins; ++k) {
        std::vector<double> keys(n);
        for (size_t i = 0; i < n; ++i) keys[i] = curves[i][k];
        counters.emplace_back(std::move(keys));
    }
    std::uint64_t comparable = 0, twice_score = 0, inserted = 0;
    for (size_t a = 0; a < n;) {
        size_t b = a;
        while (b < n && durations[order[b]] == durations[order[a]]) ++b;
        for (size_t x = a; x < b; ++x) {
            const size_t i = order[x];
            if (!events[i]) continue;
            const size_t k = bin_of_duration(durations[i]);
            const double si = curves[i][k];
            const auto& ctr = counters[k];
            const std::uint64_t le = ctr.at_most(si), lt = ctr.below(si);
            comparable += inserted;
            twice_score += 2 * (inserted - le) + (le - lt);
        }
        for (size_t x = a; x < b; ++x)
            for (size_t k = 0; k < bins; ++k) counters[k].insert(curves[order[x]][k]);
        inserted += b - a;
        a = b;
    }
    if (comparable == 0) throw DomainError("td_concordance: no comparable pairs");
    return static_cast<double>(twice_score) / (2.0 * static_cast<double>(comparable));
}

inline void check_regression_inputs(const std::vector<double>& pred, const std::vector<double>& truth,
                                    const char* name) {
    if (pred.size() != truth.size()) throw DomainError(std::string(name) + ": input lengths differ");
    if (pred.empty()) throw DomainError(std::string(name) + ": no examples");
}

inline double r2(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_regression_inputs(pred, truth, "r2");
    if (truth.size() < 2) throw DomainError("r2: needs at least two examples");
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
    double ss_res = 0, ss_tot = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0) throw DomainError("r2: constant truths, R^2 undefined");
    return 1.0 - ss_res / ss_tot;
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_regression_inputs(pred, truth, "rmse");
    double s = 0;
    for (size_t i = 0; i < truth.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    return std::sqrt(s / static_cast<double>(truth.size()));
}

inline double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_regression_inputs(pred, truth, "mae");
    double s = 0;
    for (size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - pred[i]);
    return s / static_cast<double>(truth.size());
}

struct BootstrapResult {
    double se = 0;
    size_t valid = 0;
    size_t skipped = 0;
};

/// Sample standard deviation of `metric` over B resamples (with replacement)
/// of the example indices 0..n-1. Resamples on which the metric throws a
/// DomainError are skipped and counted.
inline BootstrapResult bootstrap_se(const std::function<double(const std::vector<size_t>&)>& metric, size_t n,
                                    size_t B, std::uint64_t seed) {
    if (B < 2) throw DomainError("bootstrap_se: B must be at least 2");
    if (n == 0) throw DomainError("bootstrap_se: no examples");
    ad::Rng rng(seed);
    std::vector<double> values;
    BootstrapResult out;
    std::vector<size_t> idx(n);
    for (size_t b = 0; b < B; ++b) {
        for (auto& i : idx) i = rng.below(n);
        try {
            values.push_back(metric(idx));
        } catch (const DomainError&) {
            ++out.skipped;
        }
    }
    out.valid = values.size();
    if (values.size() < 2) throw DomainError("bootstrap_se: fewer than two valid resamples");
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0;
    for (double v : values) ss += (v - mean) * (v - mean);
    out.se = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return out;
}

template <class T>
std::vector<T> select(const std::vector<T>& xs, const std::vector<size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (size_t i : idx) out.push_back(xs[i]);
    return out;
}

struct MetricReport {
    std::string task;
    std::string metric;
    double estimate = 0;
    double se = 0;
    size_t n = 0;

    friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline std::string serialize_reports(const std::vector<MetricReport>& reports) {
    std::string out;
    for (const auto& r : reports)
        out += r.task + '\t' + r.metric + '\t' + format_double(r.estimate) + '\t' + format_double(r.se) + '\t' +
               std::to_string(r.n) + '\n';
    return out;
}

inline std::vector<MetricReport> parse_reports(std::string_view text) {
    std::vector<MetricReport> out;
    size_t line_no = 0;
    for (auto line : lines_of(text)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto f = split(line, '\t');
        const std::string where = "metric report line " + std::to_string(line_no);
        if (f.size() != 5) throw ParseError(where + ": expected 5 fields");
        MetricReport r;
        r.task = f[0];
        r.metric = f[1];
        r.estimate = parse_double(f[2], where);
        r.se = parse_double(f[3], where);
        const long long n = parse_int(f[4], where);
        if (n < 0) throw ParseError(where + ": negative n");
        r.n = static_cast<size_t>(n);
        out.push_back(std::move(r));
    }
    return out;
}

/// Error metrics improve downward; everything else upward.
inline bool lower_is_better(const std::string& metric) { return metric == "rmse" || metric == "mae"; }

/// Percent improvement of `value` over `baseline`, signed so that positive
/// always means better.
inline double relative_improvement(double value, double baseline, const std::string& metric) {
    if (baseline == 0) throw DomainError("relative improvement: baseline metric is zero");
    const double rel = (value - baseline) / std::abs(baseline) * 100.0;
    return lower_is_better(metric) ? -rel : rel;
}

}  // namespace ora

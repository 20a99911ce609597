#pragma once

// First-occurrence targets. For an anchor event j and vocabulary code m the
// target is the earliest event of m strictly after t_j (observed), or, when
// none exists, the remaining record length t_N - t_j (censored).

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "ora/event_stream.hpp"
#include "ora/vocab.hpp"

namespace ora {

struct FirstOccurrenceTarget {
    size_t code = 0;
    double delta_t = 0.0;
    std::optional<double> value;
    bool observed = false;

    friend bool operator==(const FirstOccurrenceTarget&, const FirstOccurrenceTarget&) = default;
};

/// Targets for one anchor. Observed targets are stored sorted by code index;
/// every other vocabulary code is censored at `censor_duration`.
struct TargetSet {
    size_t anchor_position = 0;
    double censor_duration = 0.0;
    std::vector<FirstOccurrenceTarget> observed;

    FirstOccurrenceTarget target_for(size_t code) const {
        auto it = std::lower_bound(observed.begin(), observed.end(), code,
                                   [](const FirstOccurrenceTarget& t, size_t c) { return t.code < c; });
        if (it != observed.end() && it->code == code) return *it;
        return FirstOccurrenceTarget{code, censor_duration, std::nullopt, false};
    }

    friend bool operator==(const TargetSet&, const TargetSet&) = default;
};

/// Vocabulary index per event, or nullopt for out-of-vocabulary codes.
inline std::vector<std::optional<size_t>> index_codes(const PatientRecord& record, const Vocabulary& vocab) {
    std::vector<std::optional<size_t>> out;
    out.reserve(record.events.size());
    for (const auto& ev : record.events) out.push_back(vocab.find(ev.code));
    return out;
}

/// Targets for a single anchor position (0-based) by a forward scan.
inline TargetSet extract_targets(const PatientRecord& record, const Vocabulary& vocab, size_t position) {
    if (vocab.empty()) throw DomainError("extract_targets: empty vocabulary");
    if (position >= record.events.size())
        throw DomainError("extract_targets: position " + std::to_string(position) + " out of range for record of " +
                          std::to_string(record.events.size()) + " events");
    const double anchor = record.events[position].time;
    TargetSet set;
    set.anchor_position = position;
    set.censor_duration = record.last_time() - anchor;
    std::vector<char> found(vocab.size(), 0);
    for (size_t i = position + 1; i < record.events.size(); ++i) {
        const Event& ev = record.events[i];
        if (ev.time <= anchor) continue;
        auto idx = vocab.find(ev.code);
        if (!idx || found[*idx]) continue;
        found[*idx] = 1;
        set.observed.push_back({*idx, ev.time - anchor, ev.value, true});
    }
    std::sort(set.observed.begin(), set.observed.end(),
              [](const auto& a, const auto& b) { return a.code < b.code; });
    return set;
}

/// Targets for every position from a single backward scan. Events sharing a
/// timestamp are handled as a group so that none of them sees the others.
inline std::vector<TargetSet> extract_all_targets(const PatientRecord& record, const Vocabulary& vocab) {
    if (vocab.empty()) throw DomainError("extract_targets: empty vocabulary");
    const size_t n = record.events.size();
    std::vector<TargetSet> out(n);
    if (n == 0) return out;
    const auto codes = index_codes(record, vocab);
    const double last = record.last_time();

    struct Next {
        double time;
        std::optional<double> value;
    };
    std::vector<std::optional<Next>> next(vocab.size());
    std::vector<size_t> seen;  // codes with a known future occurrence, ascending

    size_t hi = n;
    while (hi > 0) {
        size_t lo = hi - 1;
        const double t = record.events[lo].time;
        while (lo > 0 && record.events[lo - 1].time == t) --lo;
        for (size_t j = lo; j < hi; ++j) {
            TargetSet& set = out[j];
            set.anchor_position = j;
            set.censor_duration = last - t;
            set.observed.reserve(seen.size());
            for (size_t code : seen) set.observed.push_back({code, next[code]->time - t, next[code]->value, true});
        }
        // Within a group the first event of a code in canonical order wins.
        for (size_t j = hi; j-- > lo;) {
            if (!codes[j]) continue;
            const size_t c = *codes[j];
            if (!next[c]) seen.insert(std::lower_bound(seen.begin(), seen.end(), c), c);
            next[c] = Next{t, record.events[j].value};
        }
        hi = lo;
    }
    return out;
}

}  // namespace ora

#pragma once

// Entropy-ranked code vocabulary.
//
// p(m) is the fraction of patients with at least one event of code m. A code
// is scored by its Shannon entropy -p ln p or, when an ontology parent n is
// known, by its conditional entropy given n's presence in the same patient.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ora/event_stream.hpp"
#include "ora/util.hpp"

namespace ora {

/// -p ln p with 0 ln 0 = 0.
inline double entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("entropy: probability outside [0,1]: " + format_double(p));
    if (p == 0.0) return 0.0;
    return -p * std::log(p);
}

/// H(m|n) from the joint split p(m) = p(m,n+) + p(m,n-).
inline double conditional_entropy(double p_joint_present, double p_joint_absent) {
    if (!(p_joint_present >= 0.0) || !(p_joint_absent >= 0.0))
        throw DomainError("conditional_entropy: negative probability");
    const double p = p_joint_present + p_joint_absent;
    if (p > 1.0 + 1e-12) throw DomainError("conditional_entropy: p(m) exceeds 1");
    if (p == 0.0) return 0.0;
    auto term = [p](double q) { return q == 0.0 ? 0.0 : -q * std::log(q / p); };
    return term(p_joint_absent) + term(p_joint_present);
}

struct CodeStats {
    std::string code;
    double patient_frequency = 0.0;
    bool is_numeric = false;
    /// (p(m,n+), p(m,n-)) against the code's first listed ontology parent.
    std::optional<std::pair<double, double>> joint_with_parent;
};

/// child -> parents, in the order listed.
using Ontology = std::map<std::string, std::vector<std::string>>;

/// Reads `child<TAB>parent` lines.
inline Ontology parse_ontology(std::string_view text) {
    Ontology out;
    size_t line_no = 0;
    for (auto line : lines_of(text)) {
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        auto fields = split(line, '\t');
        if (fields.size() != 2) throw ParseError("ontology line " + std::to_string(line_no) + ": expected child<TAB>parent");
        out[fields[0]].push_back(fields[1]);
    }
    return out;
}

struct CodeStatsOptions {
    double numeric_threshold = 0.5;
};

/// Per-code corpus counts. `merge` is associative so patients can be folded
/// in any grouping.
struct CodeCounts {
    size_t patients = 0;
    std::map<std::string, size_t> patients_with;
    std::map<std::string, size_t> events;
    std::map<std::string, size_t> valued_events;
    std::map<std::pair<std::string, std::string>, size_t> patients_with_both;

    void add(const PatientRecord& record, const Ontology* ontology) {
        ++patients;
        std::set<std::string> present;
        for (const auto& ev : record.events) {
            present.insert(ev.code);
            ++events[ev.code];
            if (ev.value) ++valued_events[ev.code];
        }
        for (const auto& code : present) {
            ++patients_with[code];
            if (!ontology) continue;
            auto it = ontology->find(code);
            if (it == ontology->end() || it->second.empty()) continue;
            const std::string& parent = it->second.front();
            if (present.count(parent)) ++patients_with_both[{code, parent}];
        }
    }

    void merge(const CodeCounts& other) {
        patients += other.patients;
        for (const auto& [k, v] : other.patients_with) patients_with[k] += v;
        for (const auto& [k, v] : other.events) events[k] += v;
        for (const auto& [k, v] : other.valued_events) valued_events[k] += v;
        for (const auto& [k, v] : other.patients_with_both) patients_with_both[k] += v;
    }
};

/// Stats for every code present in the corpus, ordered by code string.
inline std::vector<CodeStats> compute_code_stats(const std::vector<PatientRecord>& records,
                                                 const Ontology* ontology = nullptr,
                                                 CodeStatsOptions options = {}) {
    if (records.empty()) throw DomainError("compute_code_stats: empty corpus");
    CodeCounts counts;
    for (const auto& r : records) counts.add(r, ontology);
    const double n = static_cast<double>(counts.patients);
    std::vector<CodeStats> out;
    out.reserve(counts.patients_with.size());
    for (const auto& [code, with] : counts.patients_with) {
        CodeStats s;
        s.code = code;
        s.patient_frequency = static_cast<double>(with) / n;
        const size_t total = counts.events.at(code);
        auto vit = counts.valued_events.find(code);
        const size_t valued = vit == counts.valued_events.end() ? 0 : vit->second;
        s.is_numeric = static_cast<double>(valued) > options.numeric_threshold * static_cast<double>(total);
        if (ontology) {
            auto it = ontology->find(code);
            if (it != ontology->end() && !it->second.empty()) {
                auto bit = counts.patients_with_both.find({code, it->second.front()});
                const size_t both = bit == counts.patients_with_both.end() ? 0 : bit->second;
                const double p_plus = static_cast<double>(both) / n;
                s.joint_with_parent = std::make_pair(p_plus, s.patient_frequency - p_plus);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct VocabEntry {
    std::string code;
    size_t index = 0;
    bool is_numeric = false;
    double score = 0.0;

    friend bool operator==(const VocabEntry&, const VocabEntry&) = default;
};

class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<VocabEntry> entries) : entries_(std::move(entries)) {
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].index != i) throw ValidationError("vocabulary indices must be dense and ordered");
            if (!lookup_.emplace(entries_[i].code, i).second)
                throw ValidationError("duplicate vocabulary code '" + entries_[i].code + "'");
        }
    }

    size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const VocabEntry& operator[](size_t i) const { return entries_.at(i); }
    const std::vector<VocabEntry>& entries() const noexcept { return entries_; }

    std::optional<size_t> find(const std::string& code) const {
        auto it = lookup_.find(code);
        if (it == lookup_.end()) return std::nullopt;
        return it->second;
    }

    size_t numeric_count() const {
        return static_cast<size_t>(std::count_if(entries_.begin(), entries_.end(), [](const auto& e) { return e.is_numeric; }));
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.entries_ == b.entries_; }

private:
    std::vector<VocabEntry> entries_;
    std::unordered_map<std::string, size_t> lookup_;
};

/// Top-k codes by (conditional) entropy; ties broken by code string.
inline Vocabulary build_vocabulary(const std::vector<CodeStats>& stats, size_t k, bool use_ontology,
                                   std::vector<std::string>* warnings = nullptr) {
    if (k == 0) throw DomainError("build_vocabulary: k must be >= 1");
    std::vector<VocabEntry> scored;
    scored.reserve(stats.size());
    for (const auto& s : stats) {
        VocabEntry e;
        e.code = s.code;
        e.is_numeric = s.is_numeric;
        e.score = (use_ontology && s.joint_with_parent)
                      ? conditional_entropy(s.joint_with_parent->first, s.joint_with_parent->second)
                      : entropy(s.patient_frequency);
        scored.push_back(std::move(e));
    }
    std::sort(scored.begin(), scored.end(), [](const VocabEntry& a, const VocabEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.code < b.code;
    });
    if (scored.size() < k) {
        if (warnings)
            warnings->push_back("requested vocabulary size " + std::to_string(k) + " exceeds " +
                                std::to_string(scored.size()) + " distinct codes; keeping all");
    } else {
        scored.resize(k);
    }
    for (size_t i = 0; i < scored.size(); ++i) scored[i].index = i;
    return Vocabulary(std::move(scored));
}

/// `index<TAB>code<TAB>is_numeric<TAB>score` per line.
inline std::string serialize_vocabulary(const Vocabulary& vocab) {
    std::string out;
    for (const auto& e : vocab.entries()) {
        out += std::to_string(e.index) + '\t' + e.code + '\t' + (e.is_numeric ? "1" : "0") + '\t' +
               format_double(e.score) + '\n';
    }
    return out;
}

inline Vocabulary parse_vocabulary(std::string_view text) {
    std::vector<VocabEntry> entries;
    size_t line_no = 0;
    for (auto line : lines_of(text)) {
        ++line_no;
        const std::string where = "vocabulary line " + std::to_string(line_no);
        auto f = split(line, '\t');
        if (f.size() != 4) throw ParseError(where + ": expected 4 tab-separated fields");
        VocabEntry e;
        e.index = static_cast<size_t>(parse_int(f[0], where));
        e.code = f[1];
        if (f[2] != "0" && f[2] != "1") throw ParseError(where + ": is_numeric must be 0 or 1");
        e.is_numeric = f[2] == "1";
        e.score = parse_double(f[3], where);
        entries.push_back(std::move(e));
    }
    return Vocabulary(std::move(entries));
}

}  // namespace ora

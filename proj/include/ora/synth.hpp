#pragma once

// Synthetic marked point processes with a known generating law.
//
// Each patient draws H latent bits z. Code m fires as a homogeneous Poisson
// stream with rate base_rate * exp(rate_weights . z) over an observation
// window [0, W]; numeric codes carry values ~ Normal(value_mean +
// value_weights . z, value_sd). A `window_end` marker closes every record so
// the censoring horizon is the window end rather than the last clinical
// event.
//
// Truth file, tab separated:
//   code    name numeric base_rate rate_weights value_mean value_weights value_sd
//   patient id bits window prediction_time

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ora/autodiff.hpp"
#include "ora/event_stream.hpp"
#include "ora/probe.hpp"
#include "ora/util.hpp"

namespace ora {

inline constexpr const char* kWindowEndCode = "window_end";

struct CodeSpec {
    std::string name;
    bool numeric = false;
    double base_rate = 0.05;          // events/day
    std::vector<double> rate_weights;  // per latent bit
    double value_mean = 0.0;
    std::vector<double> value_weights;
    double value_sd = 1.0;

    friend bool operator==(const CodeSpec&, const CodeSpec&) = default;
};

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::Binary;
    std::string code;
    double horizon = 0;  // binary only

    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct GeneratorConfig {
    size_t n_patients = 200;
    size_t latent_dim = 2;
    std::vector<CodeSpec> codes;
    double window_min = 60;
    double window_max = 120;
    double bit_prob = 0.5;
    double prediction_fraction = 0.5;  // prediction time as a fraction of the window
    std::vector<TaskSpec> tasks;
    std::uint64_t seed = 0;
};

struct PatientTruth {
    std::string patient_id;
    std::vector<int> bits;
    double window = 0;
    double prediction_time = 0;

    friend bool operator==(const PatientTruth&, const PatientTruth&) = default;
};

struct GroundTruth {
    std::vector<CodeSpec> codes;
    std::vector<PatientTruth> patients;

    const CodeSpec& code(const std::string& name) const {
        for (const auto& c : codes)
            if (c.name == name) return c;
        throw DomainError("unknown synthetic code '" + name + "'");
    }
    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

inline double dot_bits(const std::vector<double>& w, const std::vector<int>& z) {
    double s = 0;
    for (size_t h = 0; h < w.size(); ++h) s += w[h] * z[h];
    return s;
}

inline double code_rate(const CodeSpec& c, const std::vector<int>& z) {
    return c.base_rate * std::exp(dot_bits(c.rate_weights, z));
}

inline double code_value_mean(const CodeSpec& c, const std::vector<int>& z) {
    return c.value_mean + (c.numeric ? dot_bits(c.value_weights, z) : 0.0);
}

/// Expected events per patient, averaged over the latent distribution, at the
/// longest window.
inline double expected_events_per_patient(const GeneratorConfig& cfg) {
    double total = 0;
    for (const auto& c : cfg.codes) {
        double m = c.base_rate;
        for (double w : c.rate_weights) m *= (1 - cfg.bit_prob) + cfg.bit_prob * std::exp(w);
        total += m;
    }
    return total * cfg.window_max;
}

inline void validate(const GeneratorConfig& cfg) {
    if (cfg.n_patients == 0) throw ConfigError("synth: n_patients must be positive");
    if (cfg.codes.empty()) throw ConfigError("synth: no codes");
    if (!(cfg.window_min > 0) || !(cfg.window_max >= cfg.window_min))
        throw ConfigError("synth: need 0 < window_min <= window_max");
    if (!(cfg.bit_prob >= 0 && cfg.bit_prob <= 1)) throw ConfigError("synth: bit_prob must lie in [0, 1]");
    if (!(cfg.prediction_fraction > 0 && cfg.prediction_fraction < 1))
        throw ConfigError("synth: prediction_fraction must lie in (0, 1)");
    std::set<std::string> names;
    for (const auto& c : cfg.codes) {
        if (c.name.empty() || c.name == kWindowEndCode) throw ConfigError("synth: invalid code name '" + c.name + "'");
        if (!names.insert(c.name).second) throw ConfigError("synth: duplicate code '" + c.name + "'");
        if (!(c.base_rate > 0) || !std::isfinite(c.base_rate)) throw ConfigError("synth: rate of " + c.name + " must be > 0");
        if (c.rate_weights.size() != cfg.latent_dim)
            throw ConfigError("synth: rate weights of " + c.name + " must have latent_dim entries");
        if (c.numeric) {
            if (!(c.value_sd > 0)) throw ConfigError("synth: value sd of " + c.name + " must be > 0");
            if (c.value_weights.size() != cfg.latent_dim)
                throw ConfigError("synth: value weights of " + c.name + " must have latent_dim entries");
        }
    }
    for (const auto& t : cfg.tasks) {
        if (!names.count(t.code)) throw ConfigError("synth: task " + t.name + " targets unknown code " + t.code);
        if (t.kind == TaskKind::Binary && !(t.horizon > 0)) throw ConfigError("synth: task " + t.name + " needs horizon > 0");
        if (t.kind == TaskKind::Real) {
            for (const auto& c : cfg.codes)
                if (c.name == t.code && !c.numeric) throw ConfigError("synth: regression task " + t.name + " needs a numeric code");
        }
    }
    const double expected = expected_events_per_patient(cfg);
    if (expected > 1e4)
        throw ConfigError("synth: expected " + format_double(expected) + " events per patient exceeds 10000");
}

/// Event times of one code on [0, horizon] with values attached.
inline std::vector<Event> simulate_code_stream(const CodeSpec& c, const std::vector<int>& z, double horizon,
                                               ad::Rng& rng) {
    std::vector<Event> out;
    const double rate = code_rate(c, z), mean = code_value_mean(c, z);
    double t = rng.exponential(rate);
    while (t <= horizon) {
        Event e{t, c.name, std::nullopt};
        if (c.numeric) e.value = mean + c.value_sd * rng.normal();
        out.push_back(std::move(e));
        t += rng.exponential(rate);
    }
    return out;
}

/// (delay, value) of the first event of `c` strictly after `anchor`, drawn
/// through the same stream simulator as the cohort.
inline std::pair<double, std::optional<double>> first_arrival_after(const CodeSpec& c, const std::vector<int>& z,
                                                                    double anchor, ad::Rng& rng) {
    double horizon = anchor + 10.0 / code_rate(c, z) + 1.0;
    for (;;) {
        for (const auto& e : simulate_code_stream(c, z, horizon, rng))
            if (e.time > anchor) return {e.time - anchor, e.value};
        horizon *= 2;
    }
}

inline std::string patient_name(size_t i, size_t n) {
    std::string digits = std::to_string(i);
    const size_t width = std::to_string(n > 0 ? n - 1 : 0).size();
    return "p" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

struct Cohort {
    std::vector<PatientRecord> records;  // full windows
    GroundTruth truth;
};

inline Cohort generate_cohort(const GeneratorConfig& cfg) {
    validate(cfg);
    Cohort out;
    out.truth.codes = cfg.codes;
    for (size_t i = 0; i < cfg.n_patients; ++i) {
        ad::Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        PatientTruth pt;
        pt.patient_id = patient_name(i, cfg.n_patients);
        for (size_t h = 0; h < cfg.latent_dim; ++h) pt.bits.push_back(rng.uniform() < cfg.bit_prob ? 1 : 0);
        pt.window = rng.uniform(cfg.window_min, cfg.window_max);
        pt.prediction_time = cfg.prediction_fraction * pt.window;
        PatientRecord r{pt.patient_id, {}};
        for (const auto& c : cfg.codes) {
            auto s = simulate_code_stream(c, pt.bits, pt.window, rng);
            r.events.insert(r.events.end(), s.begin(), s.end());
        }
        r.events.push_back({pt.window, kWindowEndCode, std::nullopt});
        canonicalize(r);
        out.records.push_back(std::move(r));
        out.truth.patients.push_back(std::move(pt));
    }
    return out;
}

/// Events at or before each prediction time, closed by a marker there; this
/// is everything a model may see.
inline std::vector<PatientRecord> observed_histories(const Cohort& cohort) {
    std::vector<PatientRecord> out;
    for (size_t i = 0; i < cohort.records.size(); ++i) {
        const double tp = cohort.truth.patients[i].prediction_time;
        PatientRecord h{cohort.records[i].patient_id, {}};
        for (const auto& e : cohort.records[i].events)
            if (e.time <= tp && e.code != kWindowEndCode) h.events.push_back(e);
        h.events.push_back({tp, kWindowEndCode, std::nullopt});
        canonicalize(h);
        out.push_back(std::move(h));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Oracle

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Exact T x V cell masses of the first arrival after any anchor, row-major
/// (time-major). Memorylessness makes the time factor exponential; the value
/// factor is independent given z.
inline std::vector<double> oracle_cell_distribution(const CodeSpec& c, const std::vector<int>& z,
                                                    const std::vector<double>& time_edges,
                                                    const std::optional<std::vector<double>>& value_edges) {
    const double rate = code_rate(c, z);
    std::vector<double> tf;
    double prev = 0;
    for (double e : time_edges) {
        const double cdf = -std::expm1(-rate * std::max(0.0, e));
        tf.push_back(cdf - prev);
        prev = cdf;
    }
    tf.push_back(std::exp(-rate * std::max(0.0, time_edges.empty() ? 0.0 : time_edges.back())));
    std::vector<double> vf = {1.0};
    if (value_edges) {
        vf.clear();
        const double mu = code_value_mean(c, z);
        double pv = 0;
        for (double e : *value_edges) {
            const double cdf = normal_cdf((e - mu) / c.value_sd);
            vf.push_back(cdf - pv);
            pv = cdf;
        }
        vf.push_back(normal_cdf(-((value_edges->empty() ? -INFINITY : value_edges->back()) - mu) / c.value_sd));
    }
    std::vector<double> out;
    out.reserve(tf.size() * vf.size());
    for (double a : tf)
        for (double b : vf) out.push_back(a * b);
    return out;
}

// ---------------------------------------------------------------------------
// Tasks

/// Labels anchored at each patient's prediction time, computed from the full
/// window. Binary: target occurs in (t, t + horizon]; ineligible when the
/// window ends first without an occurrence. Survival: delay to the first
/// occurrence after t, censored at the window end. Real: value of the first
/// occurrence after t; ineligible when there is none.
inline ProbeDataset task_labels(const std::vector<PatientRecord>& records, const GroundTruth& truth,
                                const TaskSpec& task) {
    if (records.size() != truth.patients.size()) throw DomainError("task_labels: records and truth differ in size");
    ProbeDataset d{task.name, task.kind, {}};
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& pt = truth.patients[i];
        if (records[i].patient_id != pt.patient_id) throw DomainError("task_labels: record order differs from truth");
        const double tp = pt.prediction_time;
        const Event* first = nullptr;
        for (const auto& e : records[i].events)
            if (e.time > tp && e.code == task.code) {
                first = &e;
                break;
            }
        ProbeExample ex{pt.patient_id, tp, 0, 0, 0};
        switch (task.kind) {
            case TaskKind::Binary:
                if (first && first->time - tp <= task.horizon) {
                    ex.label = 1;
                } else if (tp + task.horizon > pt.window) {
                    continue;
                }
                break;
            case TaskKind::Survival:
                ex.duration = first ? first->time - tp : pt.window - tp;
                ex.event = first ? 1 : 0;
                break;
            case TaskKind::Real:
                if (!first || !first->value) continue;
                ex.label = *first->value;
                break;
        }
        d.examples.push_back(std::move(ex));
    }
    if (d.examples.empty()) throw DomainError("task_labels: no eligible prediction anchors for task " + task.name);
    return d;
}

// ---------------------------------------------------------------------------
// Truth file

inline std::string serialize_truth(const GroundTruth& t) {
    std::string out;
    for (const auto& c : t.codes)
        out += "code\t" + c.name + '\t' + (c.numeric ? "1" : "0") + '\t' + format_double(c.base_rate) + '\t' +
               join_doubles(c.rate_weights) + '\t' + format_double(c.value_mean) + '\t' + join_doubles(c.value_weights) +
               '\t' + format_double(c.value_sd) + '\n';
    for (const auto& p : t.patients) {
        std::string bits;
        for (int b : p.bits) bits += b ? '1' : '0';
        out += "patient\t" + p.patient_id + '\t' + bits + '\t' + format_double(p.window) + '\t' +
               format_double(p.prediction_time) + '\n';
    }
    return out;
}

inline GroundTruth parse_truth(std::string_view text) {
    GroundTruth t;
    size_t line_no = 0;
    for (auto line : lines_of(text)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "truth line " + std::to_string(line_no);
        auto f = split(line, '\t');
        if (f[0] == "code" && f.size() == 8) {
            CodeSpec c;
            c.name = f[1];
            c.numeric = f[2] == "1";
            c.base_rate = parse_double(f[3], where);
            c.rate_weights = parse_double_list(f[4], where);
            c.value_mean = parse_double(f[5], where);
            c.value_weights = parse_double_list(f[6], where);
            c.value_sd = parse_double(f[7], where);
            t.codes.push_back(std::move(c));
        } else if (f[0] == "patient" && f.size() == 5) {
            PatientTruth p;
            p.patient_id = f[1];
            for (char ch : f[2]) {
                if (ch != '0' && ch != '1') throw ParseError(where + ": bits must be 0/1");
                p.bits.push_back(ch - '0');
            }
            p.window = parse_double(f[3], where);
            p.prediction_time = parse_double(f[4], where);
            t.patients.push_back(std::move(p));
        } else {
            throw ParseError(where + ": unrecognized record");
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Presets

/// Codes `lab_XX` (numeric) and `dx_XX`, all with equal base rate.
inline std::vector<CodeSpec> lab_dx_codes(size_t n_lab, size_t n_dx, size_t H, double base_rate) {
    std::vector<CodeSpec> out;
    auto name = [](const char* p, size_t i) { return std::string(p) + (i < 10 ? "0" : "") + std::to_string(i); };
    for (size_t i = 0; i < n_lab; ++i)
        out.push_back({name("lab_", i), true, base_rate, std::vector<double>(H, 0.0), 0.0, std::vector<double>(H, 0.0), 1.0});
    for (size_t i = 0; i < n_dx; ++i)
        out.push_back({name("dx_", i), false, base_rate, std::vector<double>(H, 0.0), 0.0, {}, 1.0});
    return out;
}

/// Four latent bits with distinct footprints:
///   tempo        scales every rate by the same factor, so the mix of next
///                codes barely moves and mainly timing reveals it;
///   value_a      shifts the means of lab_00..lab_03, nothing else;
///   composition  raises half the codes and lowers the other half;
///   value_b      shifts the means of lab_04..lab_07 and raises the rate of
///                dx_01 alone. dx_01 ignores composition and is rare
///                enough that its own history says little about its rate.
/// Tasks: dx_00 within 14 days (binary), delay to dx_01 (survival), next
/// lab_00 value (regression).
inline GeneratorConfig directional_config(std::uint64_t seed, size_t n_patients = 5000) {
    GeneratorConfig g;
    g.n_patients = n_patients;
    g.latent_dim = 4;
    g.seed = seed;
    g.codes = lab_dx_codes(8, 8, 4, 0.05);
    for (size_t m = 0; m < g.codes.size(); ++m) {
        auto& c = g.codes[m];
        c.rate_weights = {0.6, 0.0, m % 2 == 0 ? 0.8 : -0.8, 0.0};
        if (c.numeric) {
            c.value_mean = static_cast<double>(m) * 0.5;
            c.value_weights = m < 4 ? std::vector<double>{0.0, 2.0, 0.0, 0.0} : std::vector<double>{0.0, 0.0, 0.0, 2.0};
        }
        if (c.name == "dx_01") {
            c.base_rate = 0.006;
            c.rate_weights = {0.6, 0.0, 0.0, 2.0};
        }
    }
    g.tasks = {{"dx00_14d", TaskKind::Binary, "dx_00", 14.0},
               {"dx01_tte", TaskKind::Survival, "dx_01", 0.0},
               {"lab00_next", TaskKind::Real, "lab_00", 0.0}};
    return g;
}

/// Small mixed cohort for fast end-to-end runs.
inline GeneratorConfig fixture_config(std::uint64_t seed, size_t n_patients = 200) {
    GeneratorConfig g;
    g.n_patients = n_patients;
    g.latent_dim = 2;
    g.seed = seed;
    g.window_min = 30;
    g.window_max = 60;
    g.codes = lab_dx_codes(3, 3, 2, 0.15);
    for (size_t m = 0; m < g.codes.size(); ++m) {
        auto& c = g.codes[m];
        c.rate_weights = {0.7, m % 2 == 0 ? 0.5 : -0.5};
        if (c.numeric) c.value_weights = {0.0, 1.5};
    }
    g.tasks = {{"dx00_7d", TaskKind::Binary, "dx_00", 7.0},
               {"dx01_tte", TaskKind::Survival, "dx_01", 0.0},
               {"lab00_next", TaskKind::Real, "lab_00", 0.0}};
    return g;
}

inline GeneratorConfig preset_config(const std::string& name, std::uint64_t seed, std::optional<size_t> n_patients = {}) {
    if (name == "directional") return directional_config(seed, n_patients.value_or(5000));
    if (name == "fixture") return fixture_config(seed, n_patients.value_or(200));
    throw ConfigError("unknown synth preset '" + name + "' (expected directional or fixture)");
}

/// A random valid configuration, for cross-checking generator and oracle.
inline GeneratorConfig random_generator_config(std::uint64_t seed) {
    ad::Rng rng(seed);
    GeneratorConfig g;
    g.seed = derive_seed(seed, "cohort");
    g.latent_dim = 1 + rng.below(3);
    const size_t n = 2 + rng.below(5);
    for (size_t m = 0; m < n; ++m) {
        CodeSpec c;
        c.name = "c" + std::to_string(m);
        c.numeric = rng.uniform() < 0.5;
        c.base_rate = std::exp(rng.uniform(std::log(0.02), std::log(2.0)));
        for (size_t h = 0; h < g.latent_dim; ++h) c.rate_weights.push_back(rng.uniform(-1, 1));
        if (c.numeric) {
            c.value_mean = rng.uniform(-3, 3);
            for (size_t h = 0; h < g.latent_dim; ++h) c.value_weights.push_back(rng.uniform(-2, 2));
            c.value_sd = rng.uniform(0.3, 3);
        }
        g.codes.push_back(std::move(c));
    }
    return g;
}

}  // namespace ora

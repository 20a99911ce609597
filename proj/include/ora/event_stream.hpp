#pragma once

// Irregular marked event streams: one PatientRecord per subject, each a
// time-ordered list of (time, code, optional value) events.
//
// File format: one JSON object per line,
//   {"patient_id":"p1","events":[[0,"A",null],[1.5,"B",2.25]]}
// Times are fractional days since the patient's origin.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ora/util.hpp"

namespace ora {

struct Event {
    double time = 0.0;
    std::string code;
    std::optional<double> value;

    friend bool operator==(const Event&, const Event&) = default;
};

struct PatientRecord {
    std::string patient_id;
    std::vector<Event> events;

    size_t size() const noexcept { return events.size(); }
    bool empty() const noexcept { return events.empty(); }
    double last_time() const { return events.back().time; }

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

/// Canonical event order: by time, then code; equal keys keep input order.
inline bool canonical_less(const Event& a, const Event& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.code < b.code;
}

/// Sorts into canonical order. Returns true when the order changed.
inline bool canonicalize(PatientRecord& record) {
    if (std::is_sorted(record.events.begin(), record.events.end(), canonical_less)) return false;
    std::stable_sort(record.events.begin(), record.events.end(), canonical_less);
    return true;
}

struct ParseResult {
    std::vector<PatientRecord> records;
    /// Records whose events had to be reordered into canonical order.
    size_t reordered = 0;
};

namespace detail {

inline Event parse_event(const nlohmann::json& triple, size_t line_no) {
    const std::string where = "line " + std::to_string(line_no);
    if (!triple.is_array() || triple.size() != 3)
        throw ParseError(where + ": event must be a [time, code, value-or-null] triple");
    const auto& t = triple[0];
    const auto& c = triple[1];
    const auto& v = triple[2];
    if (!t.is_number()) throw ParseError(where + ": event time must be a number");
    if (!c.is_string()) throw ParseError(where + ": event code must be a string");
    if (!v.is_null() && !v.is_number())
        throw ParseError(where + ": event value must be a number or null");
    Event ev;
    ev.time = t.get<double>();
    ev.code = c.get<std::string>();
    if (!v.is_null()) ev.value = v.get<double>();
    if (!std::isfinite(ev.time)) throw ValidationError(where + ": non-finite event time");
    if (ev.time < 0.0) throw ValidationError(where + ": negative event time");
    if (ev.value && !std::isfinite(*ev.value)) throw ValidationError(where + ": non-finite event value");
    return ev;
}

}  // namespace detail

inline PatientRecord parse_record_line(std::string_view line, size_t line_no) {
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    if (!obj.contains("patient_id") || !obj["patient_id"].is_string())
        throw ParseError(where + ": missing string field 'patient_id'");
    if (!obj.contains("events") || !obj["events"].is_array())
        throw ParseError(where + ": missing array field 'events'");
    if (obj.size() != 2) throw ParseError(where + ": unexpected fields");
    PatientRecord rec;
    rec.patient_id = obj["patient_id"].get<std::string>();
    rec.events.reserve(obj["events"].size());
    for (const auto& triple : obj["events"]) rec.events.push_back(detail::parse_event(triple, line_no));
    return rec;
}

/// Parses a whole event file. Line numbers in errors are 1-based. Blank lines
/// are skipped.
inline ParseResult parse_event_stream(std::string_view source) {
    ParseResult out;
    size_t line_no = 0;
    for (auto line : lines_of(source)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        PatientRecord rec = parse_record_line(line, line_no);
        if (canonicalize(rec)) ++out.reordered;
        out.records.push_back(std::move(rec));
    }
    return out;
}

inline std::string serialize_record(const PatientRecord& record) {
    std::string out = "{\"patient_id\":";
    out += nlohmann::json(record.patient_id).dump();
    out += ",\"events\":[";
    for (size_t i = 0; i < record.events.size(); ++i) {
        const Event& ev = record.events[i];
        if (i) out += ',';
        out += '[';
        out += format_double(ev.time + 0.0);
        out += ',';
        out += nlohmann::json(ev.code).dump();
        out += ',';
        // -0 is written as 0 so that parse/serialize is a fixed point.
        out += ev.value ? format_double(*ev.value + 0.0) : std::string("null");
        out += ']';
    }
    out += "]}";
    return out;
}

/// Canonical-form writer: one record per line, trailing newline.
inline std::string serialize_event_stream(const std::vector<PatientRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += serialize_record(r);
        out += '\n';
    }
    return out;
}

struct ValidationReport {
    std::vector<std::string> violations;
    bool clean() const noexcept { return violations.empty(); }
};

inline ValidationReport validate_record(const PatientRecord& record) {
    ValidationReport report;
    if (record.events.empty()) {
        report.violations.push_back("empty");
        return report;
    }
    for (size_t j = 0; j < record.events.size(); ++j) {
        const Event& ev = record.events[j];
        const std::string at = " at position " + std::to_string(j);
        if (!std::isfinite(ev.time))
            report.violations.push_back("non-finite time" + at);
        else if (ev.time < 0.0)
            report.violations.push_back("negative time" + at);
        if (ev.value && !std::isfinite(*ev.value)) report.violations.push_back("non-finite value" + at);
        if (j > 0 && ev.time < record.events[j - 1].time) report.violations.push_back("unsorted" + at);
    }
    return report;
}

}  // namespace ora

#pragma once

// Run configuration: flat `key=value` lines, `#` comments. Unknown keys are
// rejected. `preset=paper-transformer` expands into backbone keys at the
// point it is set, so later lines still override it.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ora/model.hpp"
#include "ora/util.hpp"

namespace ora {

class RunConfig {
public:
    RunConfig() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            {"seed", "0"},
            {"out", ""},
            // inputs
            {"events", ""},
            {"ontology", ""},
            {"vocab", ""},
            {"grids", ""},
            {"checkpoint", ""},
            {"dataset", ""},
            {"features", ""},
            {"predictions", ""},
            {"report.ntp", ""},
            {"report.tpp", ""},
            {"report.ora", ""},
            // model
            {"objective", "ora"},
            {"D", "64"},
            {"layers", "2"},
            {"heads", "2"},
            {"context_length", "128"},
            {"D2", "32"},
            {"T", "4"},
            {"V", "4"},
            // optimizer
            {"lr", "0.001"},
            {"batch_positions", "256"},
            {"steps", "200"},
            // vocabulary and bins
            {"vocab.size", "64"},
            {"vocab.use_ontology", "0"},
            {"vocab.numeric_threshold", "0.5"},
            {"bins.min_count", "50"},
            // probes and evaluation
            {"probe.l2", "0.0001"},
            {"probe.max_iter", "100"},
            {"probe.survival_bins", "4"},
            {"probe.survival_steps", "2000"},
            {"probe.train_fraction", "0.5"},
            {"bootstrap.B", "200"},
            // synthetic cohorts
            {"synth.preset", "fixture"},
            {"synth.patients", "0"},
        };
        return d;
    }

    void set(const std::string& key, const std::string& value) {
        if (key == "preset") {
            if (value != "paper-transformer") throw ConfigError("unknown preset '" + value + "'");
            const auto p = BackboneConfig::paper_preset();
            values_["D"] = std::to_string(p.D);
            values_["layers"] = std::to_string(p.layers);
            values_["heads"] = std::to_string(p.heads);
            values_["context_length"] = std::to_string(p.context_length);
            values_["D2"] = std::to_string(p.D2);
            values_["T"] = std::to_string(p.T);
            values_["V"] = std::to_string(p.V);
            return;
        }
        if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    /// Applies one `key=value` assignment.
    void assign(std::string_view kv) {
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos || eq == 0) throw ConfigError("expected key=value, got '" + std::string(kv) + "'");
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }

    void merge_text(std::string_view text) {
        for (auto line : lines_of(text)) {
            auto t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            assign(t);
        }
    }

    static RunConfig parse(std::string_view text) {
        RunConfig c;
        c.merge_text(text);
        return c;
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    /// Non-empty string value.
    const std::string& required(const std::string& key) const {
        const auto& v = str(key);
        if (v.empty()) throw ConfigError("missing required setting '" + key + "'");
        return v;
    }

    double real(const std::string& key) const {
        try {
            return parse_double(str(key), key);
        } catch (const ParseError& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }

    size_t count(const std::string& key) const {
        long long v = 0;
        try {
            v = parse_int(str(key), key);
        } catch (const ParseError& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        if (v < 0) throw ConfigError("config: '" + key + "' must be non-negative");
        return static_cast<size_t>(v);
    }

    std::uint64_t seed() const {
        const auto& s = str("seed");
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("config: seed must be a non-negative integer");
        try {
            return std::stoull(s);
        } catch (const std::exception&) {
            throw ConfigError("config: seed out of range");
        }
    }

    bool flag(const std::string& key) const {
        const auto& v = str(key);
        if (v == "1" || v == "true") return true;
        if (v == "0" || v == "false") return false;
        throw ConfigError("config: '" + key + "' must be 0/1");
    }

    BackboneConfig backbone() const {
        BackboneConfig b;
        b.D = count("D");
        b.layers = count("layers");
        b.heads = count("heads");
        b.context_length = count("context_length");
        b.D2 = count("D2");
        b.T = count("T");
        b.V = count("V");
        b.validate();
        return b;
    }

    /// Every key in sorted order, one `key=value` per line.
    std::string serialize() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
        return out;
    }

    std::uint64_t hash() const { return fnv1a(serialize()); }

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

private:
    static std::string trim(std::string_view s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string_view::npos) return {};
        const auto b = s.find_last_not_of(" \t\r");
        return std::string(s.substr(a, b - a + 1));
    }

    std::map<std::string, std::string> values_;
};

}  // namespace ora

#pragma once

// Pipeline commands. Each reads its inputs from config keys, writes `out`,
// and writes `<out>.manifest`: the full config as `key=value` lines plus
// `#` metadata (command, version, config hash, input and output hashes).
// A manifest is itself a valid config, so rerunning with it reproduces the
// artifact.

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ora/checkpoint.hpp"
#include "ora/config.hpp"
#include "ora/discretizer.hpp"
#include "ora/event_stream.hpp"
#include "ora/metrics.hpp"
#include "ora/model.hpp"
#include "ora/probe.hpp"
#include "ora/synth.hpp"
#include "ora/train.hpp"
#include "ora/vocab.hpp"

namespace ora {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

namespace detail {

inline std::string input_path(const RunConfig& cfg, const std::string& key) {
    const auto& p = cfg.required(key);
    if (!fs::is_regular_file(p)) throw ConfigError("input '" + key + "' not found: " + p);
    return p;
}

inline std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

class Manifest {
public:
    Manifest(const RunConfig& cfg, std::string command) : cfg_(cfg), command_(std::move(command)) {}
    void input(const std::string& key, const std::string& path) { inputs_.emplace_back(key, file_hash(path)); }
    void output(const std::string& path) { outputs_.emplace_back(path, file_hash(path)); }

    void write(const std::string& target) const {
        std::string out = "# command=" + command_ + "\n# version=ora " + kVersion + "\n# config_hash=" +
                          hex64(cfg_.hash()) + "\n# seed=" + cfg_.str("seed") + "\n";
        for (const auto& [k, h] : inputs_) out += "# input." + k + "=" + h + "\n";
        for (const auto& [p, h] : outputs_) out += "# output." + fs::path(p).filename().string() + "=" + h + "\n";
        out += cfg_.serialize();
        write_file(target + ".manifest", out);
    }

private:
    const RunConfig& cfg_;
    std::string command_;
    std::vector<std::pair<std::string, std::string>> inputs_, outputs_;
};

inline void ensure_parent(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

inline std::vector<PatientRecord> load_events(const std::string& path) {
    return parse_event_stream(read_file(path)).records;
}

}  // namespace detail

/// Writes events.jsonl (full windows), history.jsonl (what models see),
/// truth.tsv and one task_<name>.tsv per task into directory `out`.
inline void cmd_synth(const RunConfig& cfg) {
    const std::string dir = cfg.required("out");
    const size_t n = cfg.count("synth.patients");
    auto gen = preset_config(cfg.str("synth.preset"), cfg.seed(), n ? std::optional<size_t>(n) : std::nullopt);
    auto cohort = generate_cohort(gen);
    fs::create_directories(dir);
    detail::Manifest m(cfg, "synth");
    auto put = [&](const std::string& name, const std::string& text) {
        const auto p = (fs::path(dir) / name).string();
        write_file(p, text);
        m.output(p);
    };
    put("events.jsonl", serialize_event_stream(cohort.records));
    put("history.jsonl", serialize_event_stream(observed_histories(cohort)));
    put("truth.tsv", serialize_truth(cohort.truth));
    for (const auto& t : gen.tasks) put("task_" + t.name + ".tsv", serialize_dataset(task_labels(cohort.records, cohort.truth, t)));
    m.write((fs::path(dir) / "synth").string());
}

inline void cmd_build_vocab(const RunConfig& cfg) {
    const auto events = detail::input_path(cfg, "events");
    const auto out = cfg.required("out");
    detail::Manifest m(cfg, "build-vocab");
    m.input("events", events);
    auto records = detail::load_events(events);
    std::optional<Ontology> ontology;
    if (!cfg.str("ontology").empty()) {
        const auto p = detail::input_path(cfg, "ontology");
        m.input("ontology", p);
        ontology = parse_ontology(read_file(p));
    }
    CodeStatsOptions opt;
    opt.numeric_threshold = cfg.real("vocab.numeric_threshold");
    auto stats = compute_code_stats(records, ontology ? &*ontology : nullptr, opt);
    std::vector<std::string> warnings;
    auto vocab = build_vocabulary(stats, cfg.count("vocab.size"), cfg.flag("vocab.use_ontology"), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    detail::ensure_parent(out);
    write_file(out, serialize_vocabulary(vocab));
    m.output(out);
    m.write(out);
}

inline Vocabulary load_vocab(const RunConfig& cfg) { return parse_vocabulary(read_file(detail::input_path(cfg, "vocab"))); }

inline std::vector<BinGrid> load_grids(const RunConfig& cfg, const Vocabulary& vocab) {
    auto grids = parse_grids(read_file(detail::input_path(cfg, "grids")), cfg.count("T"), cfg.count("V"));
    if (grids.size() != vocab.size()) throw ValidationError("grid file does not match vocabulary size");
    for (size_t c = 0; c < grids.size(); ++c)
        if (grids[c].is_numeric() != vocab[c].is_numeric)
            throw ValidationError("grid of code " + std::to_string(c) + " disagrees with vocabulary on numeric type");
    return grids;
}

inline void cmd_fit_bins(const RunConfig& cfg) {
    const auto events = detail::input_path(cfg, "events");
    const auto out = cfg.required("out");
    detail::Manifest m(cfg, "fit-bins");
    m.input("events", events);
    m.input("vocab", detail::input_path(cfg, "vocab"));
    auto records = detail::load_events(events);
    auto vocab = load_vocab(cfg);
    std::vector<std::vector<TargetSet>> per_record;
    for (const auto& r : records) per_record.push_back(extract_all_targets(r, vocab));
    FitOptions opt;
    opt.T = cfg.count("T");
    opt.V = cfg.count("V");
    opt.min_count = cfg.count("bins.min_count");
    auto grids = fit_bins(group_observed(per_record, vocab.size()), vocab, opt);
    detail::ensure_parent(out);
    write_file(out, serialize_grids(grids));
    m.output(out);
    m.write(out);
}

/// Trains a float32 model; the per-step log goes to `<out>.log`.
inline void cmd_pretrain(const RunConfig& cfg) {
    const auto events = detail::input_path(cfg, "events");
    const auto out = cfg.required("out");
    detail::Manifest m(cfg, "pretrain");
    m.input("events", events);
    m.input("vocab", detail::input_path(cfg, "vocab"));
    m.input("grids", detail::input_path(cfg, "grids"));
    auto records = detail::load_events(events);
    auto vocab = load_vocab(cfg);
    auto grids = load_grids(cfg, vocab);
    const auto kind = parse_objective(cfg.str("objective"));
    Model<float> model(cfg.backbone(), kind, vocab, derive_seed(cfg.seed(), "init"));
    TrainOptions opt;
    opt.lr = cfg.real("lr");
    opt.batch_positions = cfg.count("batch_positions");
    opt.steps = cfg.count("steps");
    opt.seed = cfg.seed();
    std::string log;
    pretrain(model, records, vocab, grids, opt, [&](const std::string& line) { log += line + "\n"; });
    detail::ensure_parent(out);
    write_file(out, serialize_checkpoint(model.named_params()));
    write_file(out + ".log", log);
    m.output(out);
    m.output(out + ".log");
    m.write(out);
}

inline Model<float> load_model(const RunConfig& cfg, const Vocabulary& vocab) {
    Model<float> model(cfg.backbone(), parse_objective(cfg.str("objective")), vocab, 0);
    model.load(parse_checkpoint<float>(read_file(detail::input_path(cfg, "checkpoint"))));
    return model;
}

inline void cmd_embed(const RunConfig& cfg) {
    const auto events = detail::input_path(cfg, "events");
    const auto out = cfg.required("out");
    detail::Manifest m(cfg, "embed");
    for (const char* k : {"events", "vocab", "grids", "checkpoint", "dataset"}) m.input(k, detail::input_path(cfg, k));
    auto records = detail::load_events(events);
    auto vocab = load_vocab(cfg);
    auto grids = load_grids(cfg, vocab);
    auto model = load_model(cfg, vocab);
    auto dataset = parse_dataset(read_file(detail::input_path(cfg, "dataset")));
    EmbedCounters counters;
    auto f = extract_embeddings(model, records, vocab, grids, dataset, &counters);
    if (counters.truncated) std::cerr << "note: " << counters.truncated << " histories truncated to context_length\n";
    detail::ensure_parent(out);
    write_file(out, serialize_features(f));
    m.output(out);
    m.write(out);
}

struct ProbeRun {
    LinearProbe probe;
    Predictions predictions;  // held-out examples only
};

/// Fits on the training split of `dataset` and predicts the rest.
inline ProbeRun run_probe(const FeatureMatrix& features, const ProbeDataset& dataset, const RunConfig& cfg) {
    const auto X = align_features(features, dataset);
    const double frac = cfg.real("probe.train_fraction");
    std::vector<Eigen::Index> train, test;
    for (size_t i = 0; i < dataset.size(); ++i)
        (in_train_split(dataset.examples[i].patient_id, cfg.seed(), frac) ? train : test).push_back(static_cast<Eigen::Index>(i));
    if (train.empty() || test.empty()) throw DomainError("probe: split leaves no training or no held-out examples");
    auto rows = [&](const std::vector<Eigen::Index>& idx) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
        for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
        return out;
    };
    const Eigen::MatrixXd Xtr = rows(train), Xte = rows(test);
    ProbeRun run;
    const double l2 = cfg.real("probe.l2");
    if (dataset.kind == TaskKind::Survival) {
        std::vector<double> d;
        std::vector<int> e;
        for (auto i : train) {
            d.push_back(dataset.examples[static_cast<size_t>(i)].duration);
            e.push_back(dataset.examples[static_cast<size_t>(i)].event);
        }
        SurvivalOptions so;
        so.l2 = l2;
        so.max_iter = cfg.count("probe.survival_steps");
        run.probe = fit_discrete_survival(Xtr, d, e, cfg.count("probe.survival_bins"), so);
    } else {
        std::vector<double> y;
        for (auto i : train) y.push_back(dataset.examples[static_cast<size_t>(i)].label);
        if (dataset.kind == TaskKind::Binary) {
            ProbeOptions po;
            po.l2 = l2;
            po.max_iter = cfg.count("probe.max_iter");
            run.probe = fit_logistic(Xtr, y, po);
        } else {
            run.probe = fit_linear(Xtr, y, l2);
        }
    }
    auto& p = run.predictions;
    p.task = dataset.task;
    p.kind = dataset.kind;
    p.edges = run.probe.edges;
    for (auto i : test) p.patient_ids.push_back(dataset.examples[static_cast<size_t>(i)].patient_id);
    if (dataset.kind == TaskKind::Survival)
        p.curves = predict_curves(run.probe, Xte);
    else
        p.scores = predict_scores(run.probe, Xte);
    return run;
}

inline void cmd_probe(const RunConfig& cfg) {
    const auto out = cfg.required("out");
    detail::Manifest m(cfg, "probe");
    for (const char* k : {"features", "dataset"}) m.input(k, detail::input_path(cfg, k));
    auto features = parse_features(read_file(detail::input_path(cfg, "features")));
    auto dataset = parse_dataset(read_file(detail::input_path(cfg, "dataset")));
    auto run = run_probe(features, dataset, cfg);
    detail::ensure_parent(out);
    write_file(out, serialize_predictions(run.predictions));
    write_file(out + ".probe", serialize_probe(run.probe));
    m.output(out);
    m.output(out + ".probe");
    m.write(out);
}

/// Index-based metric for bootstrap resampling over matched examples.
struct TaskMetric {
    std::string name;
    std::function<double(const std::vector<size_t>&)> fn;
    size_t n = 0;
};

/// Metrics of `predictions` against the matching labels of `dataset`:
/// AUROC (binary), R^2 and RMSE (real), time-dependent concordance (survival).
inline std::vector<TaskMetric> task_metrics(const Predictions& pred, const ProbeDataset& dataset) {
    if (pred.task != dataset.task || pred.kind != dataset.kind)
        throw ValidationError("predictions are for task '" + pred.task + "', dataset is '" + dataset.task + "'");
    std::unordered_map<std::string, size_t> row;
    for (size_t i = 0; i < dataset.size(); ++i) row[dataset.examples[i].patient_id] = i;
    std::vector<const ProbeExample*> ex;
    for (const auto& id : pred.patient_ids) {
        auto it = row.find(id);
        if (it == row.end()) throw ValidationError("prediction for unknown patient '" + id + "'");
        ex.push_back(&dataset.examples[it->second]);
    }
    const size_t n = ex.size();
    std::vector<TaskMetric> out;
    if (pred.kind == TaskKind::Binary) {
        std::vector<int> y;
        for (auto* e : ex) y.push_back(static_cast<int>(e->label));
        out.push_back({"auroc", [s = pred.scores, y](const std::vector<size_t>& idx) { return auroc(select(s, idx), select(y, idx)); }, n});
    } else if (pred.kind == TaskKind::Real) {
        std::vector<double> y;
        for (auto* e : ex) y.push_back(e->label);
        out.push_back({"r2", [s = pred.scores, y](const std::vector<size_t>& idx) { return r2(select(s, idx), select(y, idx)); }, n});
        out.push_back({"rmse", [s = pred.scores, y](const std::vector<size_t>& idx) { return rmse(select(s, idx), select(y, idx)); }, n});
    } else {
        std::vector<double> d;
        std::vector<int> ev;
        for (auto* e : ex) {
            d.push_back(e->duration);
            ev.push_back(e->event);
        }
        out.push_back({"td_concordance",
                       [c = pred.curves, d, ev, edges = pred.edges](const std::vector<size_t>& idx) {
                           return td_concordance(select(c, idx), select(d, idx), select(ev, idx), edges);
                       },
                       n});
    }
    return out;
}

inline std::vector<MetricReport> evaluate(const Predictions& pred, const ProbeDataset& dataset, size_t B,
                                          std::uint64_t seed) {
    std::vector<MetricReport> out;
    std::vector<size_t> all;
    for (const auto& m : task_metrics(pred, dataset)) {
        all.resize(m.n);
        std::iota(all.begin(), all.end(), size_t{0});
        const double est = m.fn(all);
        const auto bs = bootstrap_se(m.fn, m.n, B, derive_seed(seed, "bootstrap:" + dataset.task));
        out.push_back({dataset.task, m.name, est, bs.se, m.n});
    }
    return out;
}

inline void cmd_evaluate(const RunConfig& cfg) {
    const auto out = cfg.required("out");
    detail::Manifest m(cfg, "evaluate");
    for (const char* k : {"predictions", "dataset"}) m.input(k, detail::input_path(cfg, k));
    auto pred = parse_predictions(read_file(detail::input_path(cfg, "predictions")));
    auto dataset = parse_dataset(read_file(detail::input_path(cfg, "dataset")));
    auto reports = evaluate(pred, dataset, cfg.count("bootstrap.B"), cfg.seed());
    detail::ensure_parent(out);
    write_file(out, serialize_reports(reports));
    m.output(out);
    m.write(out);
}

/// Per (task, metric): the NTP value and the percent improvement of TPP and
/// ORA over it, positive meaning better.
inline std::string compare_report(const std::vector<MetricReport>& ntp, const std::vector<MetricReport>& tpp,
                                  const std::vector<MetricReport>& ora) {
    auto index = [](const std::vector<MetricReport>& rs) {
        std::map<std::pair<std::string, std::string>, double> out;
        for (const auto& r : rs) out[{r.task, r.metric}] = r.estimate;
        return out;
    };
    auto a = index(ntp), b = index(tpp), c = index(ora);
    auto keys = [](const auto& m) {
        std::vector<std::pair<std::string, std::string>> k;
        for (const auto& [key, v] : m) k.push_back(key);
        return k;
    };
    if (keys(a) != keys(b) || keys(a) != keys(c)) throw ValidationError("report: metric files cover different tasks");
    std::string out = "task\tmetric\tntp\ttpp\tora\ttpp_vs_ntp_pct\tora_vs_ntp_pct\n";
    for (const auto& [key, base] : a) {
        const auto& [task, metric] = key;
        out += task + '\t' + metric + '\t' + format_double(base) + '\t' + format_double(b[key]) + '\t' +
               format_double(c[key]) + '\t' + format_double(relative_improvement(b[key], base, metric)) + '\t' +
               format_double(relative_improvement(c[key], base, metric)) + '\n';
    }
    return out;
}

inline void cmd_report(const RunConfig& cfg) {
    const auto out = cfg.required("out");
    detail::Manifest m(cfg, "report");
    std::vector<std::vector<MetricReport>> rs;
    for (const char* k : {"report.ntp", "report.tpp", "report.ora"}) {
        const auto p = detail::input_path(cfg, k);
        m.input(k, p);
        rs.push_back(parse_reports(read_file(p)));
    }
    detail::ensure_parent(out);
    write_file(out, compare_report(rs[0], rs[1], rs[2]));
    m.output(out);
    m.write(out);
}

/// Head weight counts for the configured backbone and vocabulary.
inline void cmd_count_params(const RunConfig& cfg) {
    auto vocab = load_vocab(cfg);
    auto n = count_parameters(cfg.backbone(), vocab);
    const std::string text = "factorized\t" + format_double(n.factorized) + "\ndirect\t" + format_double(n.direct) +
                             "\nreduction\t" + format_double(n.reduction) + "\n";
    const auto& out = cfg.str("out");
    if (out.empty()) {
        std::cout << text;
        return;
    }
    detail::Manifest m(cfg, "count-params");
    m.input("vocab", detail::input_path(cfg, "vocab"));
    detail::ensure_parent(out);
    write_file(out, text);
    m.output(out);
    m.write(out);
}

/// Whole pipeline on a synthetic cohort under directory `out`: one metric
/// line per (objective, task) in metrics.tsv plus the comparison table.
inline void cmd_run(const RunConfig& base) {
    const fs::path dir = base.required("out");
    auto with = [&](std::initializer_list<std::pair<const char*, std::string>> kv) {
        RunConfig c = base;
        for (const auto& [k, v] : kv) c.set(k, v);
        return c;
    };
    auto path = [&](const std::string& name) { return (dir / name).string(); };
    cmd_synth(with({{"out", path("cohort")}}));
    const auto history = path("cohort/history.jsonl");
    cmd_build_vocab(with({{"events", history}, {"out", path("vocab.tsv")}}));
    cmd_fit_bins(with({{"events", history}, {"vocab", path("vocab.tsv")}, {"out", path("grids.tsv")}}));
    std::vector<std::string> tasks;
    for (const auto& e : fs::directory_iterator(dir / "cohort")) {
        const auto name = e.path().filename().string();
        if (name.rfind("task_", 0) == 0 && e.path().extension() == ".tsv") tasks.push_back(name.substr(5, name.size() - 9));
    }
    std::sort(tasks.begin(), tasks.end());
    std::string metrics;
    std::map<std::string, std::vector<MetricReport>> by_objective;
    for (const char* obj : {"ntp", "tpp", "ora"}) {
        const std::string o = obj;
        const auto ckpt = path(o + "/model.ckpt");
        const RunConfig oc = with({{"objective", o}, {"events", history}, {"vocab", path("vocab.tsv")}, {"grids", path("grids.tsv")}});
        RunConfig pc = oc;
        pc.set("out", ckpt);
        cmd_pretrain(pc);
        for (const auto& t : tasks) {
            const auto ds = path("cohort/task_" + t + ".tsv");
            RunConfig c = oc;
            c.set("checkpoint", ckpt);
            c.set("dataset", ds);
            c.set("out", path(o + "/" + t + ".features"));
            cmd_embed(c);
            c.set("features", path(o + "/" + t + ".features"));
            c.set("out", path(o + "/" + t + ".predictions"));
            cmd_probe(c);
            c.set("predictions", path(o + "/" + t + ".predictions"));
            c.set("out", path(o + "/" + t + ".metrics"));
            cmd_evaluate(c);
            for (const auto& r : parse_reports(read_file(path(o + "/" + t + ".metrics")))) {
                by_objective[o].push_back(r);
                metrics += o + '\t' + serialize_reports({r});
            }
        }
    }
    write_file(path("metrics.tsv"), metrics);
    write_file(path("comparison.tsv"), compare_report(by_objective["ntp"], by_objective["tpp"], by_objective["ora"]));
    detail::Manifest m(base, "run");
    m.output(path("metrics.tsv"));
    m.output(path("comparison.tsv"));
    m.write(path("run"));
}

inline const std::map<std::string, std::function<void(const RunConfig&)>>& commands() {
    static const std::map<std::string, std::function<void(const RunConfig&)>> c = {
        {"synth", cmd_synth},       {"build-vocab", cmd_build_vocab}, {"fit-bins", cmd_fit_bins},
        {"pretrain", cmd_pretrain}, {"embed", cmd_embed},             {"probe", cmd_probe},
        {"evaluate", cmd_evaluate}, {"report", cmd_report},           {"count-params", cmd_count_params},
        {"run", cmd_run},
    };
    return c;
}

}  // namespace ora

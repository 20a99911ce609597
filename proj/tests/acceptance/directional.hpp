#pragma once

// Objective comparison on the directional synthetic preset: pretrain each
// objective, embed every patient at its prediction time, fit probes on a
// per-patient split and score the held-out half with paired bootstrap.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "ora/pipeline.hpp"

namespace ora::acceptance {

struct DirectionalSettings {
    size_t patients = 5000;
    BackboneConfig backbone{32, 2, 2, 64, 16, 4, 4};
    TrainOptions train{3e-3, 512, 400, 0};
    size_t bootstrap = 200;
    bool verbose = false;
};

struct Comparison {
    std::string task, metric, against;
    double ora = 0, other = 0, diff = 0, se = 0;  // diff signed so positive favours ORA
};

struct SeedResult {
    std::map<std::string, std::map<std::string, double>> estimates;  // objective -> task -> value
    std::vector<Comparison> comparisons;                              // ORA vs NTP and TPP
    double seconds = 0;
};

inline double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// The metric each claim uses per task kind.
inline const char* headline_metric(TaskKind k) {
    switch (k) {
        case TaskKind::Binary: return "auroc";
        case TaskKind::Real: return "r2";
        case TaskKind::Survival: return "td_concordance";
    }
    return "";
}

inline SeedResult run_directional_seed(std::uint64_t seed, const DirectionalSettings& s) {
    const auto t0 = std::chrono::steady_clock::now();
    SeedResult out;
    const auto gen = directional_config(seed, s.patients);
    const auto cohort = generate_cohort(gen);
    const auto history = observed_histories(cohort);

    auto vocab = build_vocabulary(compute_code_stats(history), 64, false);
    std::vector<std::vector<TargetSet>> per_record;
    for (const auto& r : history) per_record.push_back(extract_all_targets(r, vocab));
    FitOptions fo;
    fo.T = s.backbone.T;
    fo.V = s.backbone.V;
    const auto grids = fit_bins(group_observed(per_record, vocab.size()), vocab, fo);

    ProbeDataset anchors{"anchors", TaskKind::Binary, {}};
    for (const auto& p : cohort.truth.patients) anchors.examples.push_back({p.patient_id, p.prediction_time, 0, 0, 0});
    std::vector<ProbeDataset> tasks;
    for (const auto& t : gen.tasks) tasks.push_back(task_labels(cohort.records, cohort.truth, t));

    RunConfig probe_cfg;
    probe_cfg.set("seed", std::to_string(seed));

    // objective -> task -> metric over held-out examples
    std::map<std::string, std::map<std::string, TaskMetric>> metrics;
    for (auto kind : {ObjectiveKind::NTP, ObjectiveKind::TPP, ObjectiveKind::ORA}) {
        const auto name = to_string(kind);
        Model<float> model(s.backbone, kind, vocab, derive_seed(seed, "init"));
        auto opt = s.train;
        opt.seed = derive_seed(seed, "train");
        const auto t1 = std::chrono::steady_clock::now();
        auto tr = pretrain(model, history, vocab, grids, opt);
        const double t_train = elapsed(t1);
        const auto t2 = std::chrono::steady_clock::now();
        const auto features = extract_embeddings(model, history, vocab, grids, anchors);
        const double t_embed = elapsed(t2);
        for (const auto& d : tasks) {
            auto run = run_probe(features, d, probe_cfg);
            for (auto& m : task_metrics(run.predictions, d)) {
                if (m.name != headline_metric(d.kind)) continue;
                std::vector<size_t> all(m.n);
                std::iota(all.begin(), all.end(), size_t{0});
                out.estimates[name][d.task] = m.fn(all);
                metrics[name][d.task] = std::move(m);
            }
        }
        if (s.verbose) {
            std::fprintf(stderr, "  seed %llu %s: loss %.4f -> %.4f, train %.0fs, embed %.0fs |",
                         static_cast<unsigned long long>(seed), name.c_str(), tr.losses.front(), tr.losses.back(),
                         t_train, t_embed);
            for (const auto& [task, v] : out.estimates[name]) std::fprintf(stderr, " %s=%.4f", task.c_str(), v);
            std::fprintf(stderr, "\n");
        }
    }

    for (const auto& d : tasks) {
        for (const char* other : {"ntp", "tpp"}) {
            const auto& a = metrics["ora"][d.task];
            const auto& b = metrics[other][d.task];
            auto diff = [&](const std::vector<size_t>& idx) { return a.fn(idx) - b.fn(idx); };
            Comparison c;
            c.task = d.task;
            c.against = other;
            c.metric = a.name;
            c.ora = out.estimates["ora"][d.task];
            c.other = out.estimates[other][d.task];
            c.diff = lower_is_better(a.name) ? c.other - c.ora : c.ora - c.other;
            c.se = bootstrap_se(diff, a.n, s.bootstrap, derive_seed(seed, "paired:" + d.task + ":" + other)).se;
            out.comparisons.push_back(c);
        }
    }
    out.seconds = elapsed(t0);
    return out;
}

}  // namespace ora::acceptance

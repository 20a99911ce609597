#pragma once

// Pretraining loop shared by the three objectives.
//
// A step gathers random crops of at most `context_length` events until the
// batch holds `batch_positions` anchor positions. Targets always come from
// the full record, so a crop never shortens what an anchor is scored on.
// Per-crop gradients are summed in crop order and divided by the number of
// loss terms before one Adam update.

#include <functional>
#include <string>
#include <vector>

#include "ora/autodiff.hpp"
#include "ora/discretizer.hpp"
#include "ora/model.hpp"
#include "ora/objectives.hpp"
#include "ora/targets.hpp"

namespace ora {

struct TrainOptions {
    double lr = 1e-3;
    size_t batch_positions = 256;
    size_t steps = 200;
    std::uint64_t seed = 0;
};

/// Per-record supervision, computed once.
struct TrainingCorpus {
    std::vector<const PatientRecord*> records;
    std::vector<CellTargets> cells;  // ORA/TPP
    size_t positions = 0;
};

inline TrainingCorpus prepare_corpus(const std::vector<PatientRecord>& records, const Vocabulary& vocab,
                                     const std::vector<BinGrid>& grids, const HeadLayout& layout, bool with_cells) {
    TrainingCorpus c;
    for (const auto& r : records) {
        if (r.size() < 2) continue;  // no future to score
        c.records.push_back(&r);
        if (with_cells) c.cells.push_back(make_cell_targets(extract_all_targets(r, vocab), grids, layout));
        c.positions += r.size();
    }
    if (c.records.empty()) throw DomainError("pretrain: no record has two or more events");
    return c;
}

struct TrainResult {
    std::vector<double> losses;
    LossDiagnostics totals;
};

template <class Real>
TrainResult pretrain(Model<Real>& model, const std::vector<PatientRecord>& records, const Vocabulary& vocab,
                     const std::vector<BinGrid>& grids, const TrainOptions& opt,
                     const std::function<void(const std::string&)>& log = {}) {
    if (opt.batch_positions == 0) throw ConfigError("pretrain: batch_positions must be positive");
    if (!(opt.lr > 0)) throw ConfigError("pretrain: lr must be positive");
    const auto kind = model.objective();
    const auto& cfg = model.config();
    const size_t codes = model.layout().codes();
    auto corpus = prepare_corpus(records, vocab, grids, model.layout(), kind != ObjectiveKind::NTP);
    ad::Rng rng(derive_seed(opt.seed, "pretrain-crops"));
    ad::AdamState<Real> state;
    ad::AdamConfig adam;
    adam.lr = opt.lr;
    TrainResult result;
    auto& params = model.params();
    for (size_t step = 0; step < opt.steps; ++step) {
        std::vector<std::vector<Real>> grads(params.size());
        for (size_t i = 0; i < params.size(); ++i) grads[i].assign(params[i].size(), Real(0));
        double loss_sum = 0;
        LossDiagnostics diag;
        size_t gathered = 0;
        while (gathered < opt.batch_positions) {
            const size_t ri = rng.below(corpus.records.size());
            const PatientRecord& r = *corpus.records[ri];
            const size_t L = std::min(r.size(), cfg.context_length);
            const size_t begin = r.size() > L ? rng.below(r.size() - L + 1) : 0, end = begin + L;
            gathered += L;
            ad::Tape<Real> tape;
            auto binding = model.bind(tape, true);
            auto E = model.encode(tape, binding, embed_events(r, vocab, grids, cfg.V, begin, end, cfg.context_length));
            LossBatch<Real> part;
            if (kind == ObjectiveKind::NTP) {
                auto labels = next_code_labels(r, vocab, begin, end);
                bool any = false;
                for (const auto& l : labels) any = any || l.has_value();
                if (!any) continue;
                part = ntp_loss_sum(model.ntp_logits(binding, E), labels);
            } else {
                const auto& full = corpus.cells[ri];
                CellTargets slice{L, codes, {full.cells.begin() + static_cast<std::ptrdiff_t>(begin * codes),
                                             full.cells.begin() + static_cast<std::ptrdiff_t>(end * codes)}};
                part = ora_loss_sum(model.head(binding, E), model.layout(), slice);
            }
            tape.backward(part.loss);
            for (size_t i = 0; i < params.size(); ++i) {
                const auto g = tape.grad(binding.vars[i]);
                for (size_t k = 0; k < g.size(); ++k) grads[i][k] += g[k];
            }
            loss_sum += static_cast<double>(part.loss.item());
            diag += part.diagnostics;
        }
        if (diag.terms == 0) throw DomainError("pretrain: batch has no loss terms");
        const Real inv = Real(1) / static_cast<Real>(diag.terms);
        for (auto& g : grads)
            for (auto& x : g) x *= inv;
        ad::adam_step(params, grads, state, adam);
        const double mean_loss = loss_sum / static_cast<double>(diag.terms);
        result.losses.push_back(mean_loss);
        result.totals += diag;
        if (log) log(training_log_line(step, kind, mean_loss, diag));
    }
    return result;
}

}  // namespace ora
